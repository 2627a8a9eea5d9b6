"""Conventional (non-layered) CAP and CBP baselines.

Both precode over the full N_A*N_E array of each RU. Conventional CAP
compresses the precoded signal of each RU jointly (one quantization variance
per RU); conventional CBP sends the full precoding matrix plus the messages.

Only h^H V h enters the rates, and projecting V onto the span of the RU's
channels never increases fronthaul or power, so the optimization runs in that
span (dimension <= N_M). The fronthaul and power formulas keep the full array
size for the quantization noise, which makes the reduction exact.
"""
import numpy as np

from .. import surrogates as sg
from ..channel import ChannelRealization, draw_long_term_state
from ..errors import DomainError
from ..solver import Layout, ProblemBuilder
from .base import DCTrace, StrategyConfig, check_budgets, dc_loop
from .cap import AUDIT_TOL, ShortTermResult
from .cbp import long_term_cbp, short_term_cbp

RANK_TOL = 1e-10


def full_dims(topology_or_state):
    topo = getattr(topology_or_state, "topology", topology_or_state)
    return tuple(a * e for a, e in zip(topo.n_az, topo.n_el))


def conventional_realization(state, real, reduce=True):
    """Effective realization over the full array; returns (realization, bases).

    ``bases[i]`` is the orthonormal basis (N x r) the covariances of RU i live
    in, or None when no reduction was applied.
    """
    n_ms, n_ru = real.n_ms, real.n_ru
    h = [[None] * n_ru for _ in range(n_ms)]
    bases = []
    for i in range(n_ru):
        cols = np.array([np.kron(real.h_az[j][i], state.u_el[j][i]) for j in range(n_ms)]).T
        q = None
        if reduce:
            u, s, _ = np.linalg.svd(cols, full_matrices=False)
            r = int(np.sum(s > RANK_TOL * max(s[0], 1e-300)))
            if r < cols.shape[0]:
                q = u[:, :max(r, 1)]
        bases.append(q)
        for j in range(n_ms):
            h[j][i] = cols[:, j] if q is None else q.conj().T @ cols[:, j]
    one = np.ones(1, dtype=complex)
    u_el = tuple(tuple(one for _ in range(n_ru)) for _ in range(n_ms))
    out = ChannelRealization(tuple(tuple(row) for row in h), u_el, state.alpha.copy(),
                             real.h_norm2.copy(), real.block_index)
    return out, tuple(bases)


def trivial_elevation(n_ms, n_ru):
    return {(k, i): np.ones((1, 1), dtype=complex) for k in range(n_ms) for i in range(n_ru)}


def initial_conv_cap(real, budgets, noise_dim):
    n_ms, n_ru = real.n_ms, real.n_ru
    cov = sg.CovarianceSet({}, trivial_elevation(n_ms, n_ru), sigma_ru={})
    for i in range(n_ru):
        r = real.h_az[0][i].size
        if not budgets.active(i):
            for k in range(n_ms):
                cov.v_az[(k, i)] = np.zeros((r, r), dtype=complex)
            cov.sigma_ru[i] = 0.0
            continue
        p_bar, c_bar = budgets.power[i], budgets.fronthaul[i]
        sigma = max(p_bar / (4.0 * noise_dim[i]), 10 * sg.SIGMA_MIN)
        c = min(p_bar / (2.0 * n_ms), r * sigma * np.expm1(c_bar / (2.0 * r)) / n_ms)
        for k in range(n_ms):
            cov.v_az[(k, i)] = (c / r) * np.eye(r, dtype=complex)
        cov.sigma_ru[i] = sigma
    return cov


def conv_cap_usage(cov, budgets, n_ms, noise_dim):
    fh, pw = [], []
    for i in range(budgets.n_ru):
        if not budgets.active(i):
            fh.append(0.0)
            pw.append(0.0)
            continue
        fh.append(sg.fronthaul_cbp_exact(i, cov, 1, None, n_ms))
        pw.append(sg.power_exact(i, cov, sg.CONV_CAP, noise_dim=noise_dim[i], n_ms=n_ms))
    return fh, pw


def conv_cap_feasible(cov, budgets, n_ms, noise_dim, tol=AUDIT_TOL):
    fh, pw = conv_cap_usage(cov, budgets, n_ms, noise_dim)
    return all(fh[i] <= budgets.fronthaul[i] + tol and pw[i] <= budgets.power[i] + tol
               for i in range(budgets.n_ru))


def conv_cap_problem(real, anchor, budgets, noise_dim, cfg=StrategyConfig()):
    n_ms = real.n_ms
    layout = Layout()
    start = {}
    for i in range(real.n_ru):
        if not budgets.active(i):
            continue
        for k in range(n_ms):
            layout.add_psd(sg.VA(k, i), anchor.v_az[(k, i)].shape[0])
            start[sg.VA(k, i)] = cfg.start_scale * anchor.v_az[(k, i)]
        layout.add_scalar(sg.SR(i), sg.SIGMA_MIN)
        start[sg.SR(i)] = anchor.sigma_ru[i]
    if not start:
        return None
    pb = ProblemBuilder(layout, fixed=anchor)
    for j in range(n_ms):
        pb.maximize_rate_bound(sg.rate_surrogate(j, anchor, real, sg.CONV_CAP))
    for i in range(real.n_ru):
        if not budgets.active(i):
            continue
        pb.le_convex(f"fronthaul:{i}", sg.fronthaul_cbp_surrogate(i, anchor, 1, None, n_ms),
                     budgets.fronthaul[i])
        pb.le(f"power:{i}", sg.power_form(i, anchor, sg.CONV_CAP, noise_dim=noise_dim[i],
                                          n_ms=n_ms), budgets.power[i])
    return pb.build(start=start)


def conventional_cap(real, budgets, noise_dim, cfg=StrategyConfig(), init=None):
    """Per-block DC optimization of full-array covariances with joint per-RU compression.

    ``real`` is an effective realization from :func:`conventional_realization`
    and ``noise_dim[i]`` the full array size N_A*N_E of RU i.
    """
    check_budgets(budgets, real.n_ru)
    if len(noise_dim) != real.n_ru:
        raise DomainError("noise_dim needs one entry per RU")
    anchor = init if init is not None else initial_conv_cap(real, budgets, noise_dim)

    def objective(c):
        return sg.sum_rate_exact(c, real, sg.CONV_CAP)

    if not any(budgets.active(i) for i in range(real.n_ru)):
        f = objective(anchor)
        return ShortTermResult(anchor, f, DCTrace([f]))
    cov, trace = dc_loop(
        anchor,
        lambda a: conv_cap_problem(real, a, budgets, noise_dim, cfg),
        objective, cfg,
        feasible=lambda c: conv_cap_feasible(c, budgets, real.n_ms, noise_dim))
    return ShortTermResult(cov, trace.objective[-1], trace)


def conventional_cbp_short_term(real, budgets, noise_dim, clustering=None, rates=None,
                                cfg=StrategyConfig()):
    """CBP short-term stage on the effective full-array realization."""
    v_el = trivial_elevation(real.n_ms, real.n_ru)
    return short_term_cbp(real, v_el, budgets, clustering, rates, cfg, noise_dim)


def conventional_cbp(topology, seed=None, clustering=None, cfg=StrategyConfig(), max_outer=None,
                     lt_state=None, replay_block=None):
    """Long-term stage of conventional CBP: committed rates only (no elevation layer).

    Returns ``(rates, state)`` with rates in nats.
    """
    seed = topology.rng_seed if seed is None else seed
    lt = lt_state if lt_state is not None else draw_long_term_state(topology, seed)
    _, rates, state = long_term_cbp(
        topology, seed, clustering, cfg, max_outer, replay_block=replay_block, lt_state=lt,
        block_map=lambda r: conventional_realization(lt, r)[0], noise_dim=full_dims(topology))
    return rates, state

