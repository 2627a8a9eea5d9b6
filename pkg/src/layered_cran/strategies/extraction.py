"""Rank-one precoders from relaxed covariances, scaled to the power budget."""
from dataclasses import dataclass, field

import numpy as np

from .. import numerics as nx
from .. import surrogates as sg

BISECT_STEPS = 80


@dataclass
class LayeredSolution:
    """One block's deployable precoders and their exact accounting.

    Conventional solutions carry trivial elevation vectors ``[1]`` and keep
    azimuth vectors in the reduced coordinates given by ``bases``.
    """
    mode: str
    w_el: dict
    w_az: dict
    sigma: dict                     # per pair (layered CAP) or per RU
    beta: dict
    cov: sg.CovarianceSet           # rank-one covariances actually used
    rates: dict                     # exact per-MS rates, nats
    fronthaul_use: tuple            # nats per symbol per RU (CBP: precoder + messages)
    power_use: tuple
    committed: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    bases: tuple = ()

    @property
    def sum_rate(self):
        return float(sum(self.rates.values()))

    def full_precoder(self, k, i):
        """Precoder of stream k at RU i over the full N_A*N_E array."""
        w = self.w_az[(k, i)]
        if self.bases and self.bases[i] is not None:
            w = self.bases[i] @ w
        return np.kron(w, self.w_el[(k, i)])


def _members(mode, clustering, i, n_ms):
    if mode == sg.CBP and clustering is not None:
        return tuple(clustering[i])
    return tuple(range(n_ms))


def _fronthaul(mode, i, cov, budgets, clustering, n_ms):
    if mode == sg.CAP:
        return sg.fronthaul_cap_exact(i, cov, n_ms)
    if mode == sg.CBP:
        return sg.fronthaul_cbp_exact(i, cov, budgets.coherence, clustering, n_ms)
    return sg.fronthaul_cbp_exact(i, cov, 1, None, n_ms)


def _power(mode, i, cov, clustering, noise_dim, n_ms):
    nd = None if noise_dim is None else noise_dim[i]
    return sg.power_exact(i, cov, mode, clustering, nd, n_ms)


def extract_and_normalize(cov, real, budgets, mode, clustering=None, noise_dim=None,
                          committed=None, bases=()):
    """Principal-eigenvector precoders with one power scale per RU.

    The scale beta_i makes the RU transmit exactly its power budget. If the
    quantization noise alone exceeds the budget, beta_i = 0 and a
    ``noise_overload`` flag is raised. If the scaled precoders would exceed the
    fronthaul (CBP: after paying the ``committed`` message rates), beta_i is
    reduced by bisection until they fit and a ``fronthaul_capped`` flag is
    raised.
    """
    sg._check_mode(mode)
    n_ms, n_ru = real.n_ms, real.n_ru
    if mode == sg.CBP and clustering is None:
        clustering = sg.full_clustering(n_ru, n_ms)
    committed = dict(committed or {})
    w_el, w0 = {}, {}
    for (k, i), ve in cov.v_el.items():
        _, w_el[(k, i)] = nx.principal_eigvec(ve)
    for (k, i), va in cov.v_az.items():
        lam, nu = nx.principal_eigvec(va)
        w0[(k, i)] = np.sqrt(max(lam, 0.0)) * nu
    sigma = dict(cov.sigma_pair) if mode == sg.CAP else dict(cov.sigma_ru)
    out = sg.CovarianceSet(
        {key: np.zeros_like(va) for key, va in cov.v_az.items()},
        {key: np.outer(w, w.conj()) for key, w in w_el.items()},
        dict(cov.sigma_pair), dict(cov.sigma_ru))
    beta, flags = {}, []

    def assign(i, b):
        for k in range(n_ms):
            if (k, i) in w0:
                w = b * w0[(k, i)]
                out.v_az[(k, i)] = np.outer(w, w.conj())

    for i in range(n_ru):
        members = _members(mode, clustering, i, n_ms)
        assign(i, 0.0)
        noise = _power(mode, i, out, clustering, noise_dim, n_ms)
        unit = 0.0
        for k in members:
            unit += float(np.vdot(w0[(k, i)], w0[(k, i)]).real)
        p_bar = budgets.power[i]
        if noise >= p_bar and noise > 0:
            beta[i] = 0.0
            flags.append(f"noise_overload:{i}")
            continue
        if unit <= 0 or not budgets.active(i):
            beta[i] = 0.0
            continue
        # power is affine in beta^2 with slope sum_k ||w0||^2 tr(V^E) = unit
        b = np.sqrt((p_bar - noise) / unit)
        limit = budgets.fronthaul[i] - sum(committed.get(j, 0.0) for j in members)
        assign(i, b)
        if np.isfinite(limit) and _fronthaul(mode, i, out, budgets, clustering, n_ms) > limit:
            lo, hi = 0.0, b
            for _ in range(BISECT_STEPS):
                mid = 0.5 * (lo + hi)
                assign(i, mid)
                if _fronthaul(mode, i, out, budgets, clustering, n_ms) > limit:
                    hi = mid
                else:
                    lo = mid
            b = lo
            assign(i, b)
            flags.append(f"fronthaul_capped:{i}")
        beta[i] = float(b)
    w_az = {key: beta.get(key[1], 0.0) * w for key, w in w0.items()}
    rates = {j: sg.rate_exact(j, out, real, mode, clustering) for j in range(n_ms)}
    fh, pw = [], []
    for i in range(n_ru):
        active = (budgets.active(i) and np.isfinite(budgets.fronthaul[i])
                  and any(sigma_val > 0 for sigma_val in _sigmas(sigma, i)))
        f = _fronthaul(mode, i, out, budgets, clustering, n_ms) if active else 0.0
        if mode == sg.CBP:
            f += sum(committed.get(j, 0.0) for j in _members(mode, clustering, i, n_ms))
        fh.append(f)
        pw.append(_power(mode, i, out, clustering, noise_dim, n_ms))
    return LayeredSolution(mode, w_el, w_az, sigma, beta, out, rates, tuple(fh), tuple(pw),
                           committed, flags, tuple(bases))


def _sigmas(sigma, i):
    for key, val in sigma.items():
        if (key[1] if isinstance(key, tuple) else key) == i:
            yield val

