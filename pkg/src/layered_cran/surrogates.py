"""Exact rate/fronthaul/power functionals and their DC surrogates.

Everything is in nats internally; divide by ln 2 for bits.

Variables are addressed by keys:

* ``("VA", k, i)`` azimuth covariance of stream k at RU i
* ``("VE", k, i)`` elevation covariance of stream k at RU i
* ``("SP", k, i)`` per-stream quantization variance (layered CAP)
* ``("SR", i)``    per-RU quantization variance (CBP, conventional CAP)
* ``("R", j)``     user rate (CBP)

A :class:`LinearForm` is a real affine function of those variables,
``sum Re tr(G V) + sum c * s + const``. Surrogates are built as linear forms
frozen at an anchor point, so they can be evaluated on any
:class:`CovarianceSet` or handed to the solver layout.
"""
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import DomainError

SIGMA_MIN = 1e-12
LN2 = np.log(2.0)

CAP, CBP, CONV_CAP = "cap", "cbp", "conv_cap"
MODES = (CAP, CBP, CONV_CAP)


def VA(k, i):
    return ("VA", k, i)


def VE(k, i):
    return ("VE", k, i)


def SP(k, i):
    return ("SP", k, i)


def SR(i):
    return ("SR", i)


def R(j):
    return ("R", j)


def to_bits(nats):
    return nats / LN2


@dataclass
class CovarianceSet:
    v_az: dict
    v_el: dict
    sigma_pair: dict = field(default_factory=dict)
    sigma_ru: dict = field(default_factory=dict)
    rates: dict = field(default_factory=dict)

    def get(self, key):
        tag = key[0]
        if tag == "VA":
            return self.v_az[key[1:]]
        if tag == "VE":
            return self.v_el[key[1:]]
        if tag == "SP":
            return self.sigma_pair[key[1:]]
        if tag == "SR":
            return self.sigma_ru[key[1]]
        if tag == "R":
            return self.rates[key[1]]
        raise KeyError(key)

    def set(self, key, value):
        tag = key[0]
        if tag == "VA":
            self.v_az[key[1:]] = value
        elif tag == "VE":
            self.v_el[key[1:]] = value
        elif tag == "SP":
            self.sigma_pair[key[1:]] = float(value)
        elif tag == "SR":
            self.sigma_ru[key[1]] = float(value)
        elif tag == "R":
            self.rates[key[1]] = float(value)
        else:
            raise KeyError(key)

    def copy(self):
        return CovarianceSet({k: v.copy() for k, v in self.v_az.items()},
                             {k: v.copy() for k, v in self.v_el.items()},
                             dict(self.sigma_pair), dict(self.sigma_ru), dict(self.rates))

    def updated(self, assignment):
        out = self.copy()
        for key, value in assignment.items():
            out.set(key, value)
        return out


class LinearForm:
    """Real affine functional ``sum_k <coef_k, x_k> + const``."""

    __slots__ = ("coefs", "const")

    def __init__(self, coefs=None, const=0.0):
        self.coefs = dict(coefs or {})
        self.const = float(const)

    def add(self, key, coef):
        if key in self.coefs:
            self.coefs[key] = self.coefs[key] + coef
        else:
            self.coefs[key] = coef
        return self

    def __add__(self, other):
        if not isinstance(other, LinearForm):
            return LinearForm(self.coefs, self.const + float(other))
        out = LinearForm(self.coefs, self.const + other.const)
        for k, c in other.coefs.items():
            out.add(k, c)
        return out

    __radd__ = __add__

    def __mul__(self, s):
        return LinearForm({k: c * s for k, c in self.coefs.items()}, self.const * s)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)

    def __call__(self, cov):
        return self.evaluate(cov)

    def evaluate(self, cov):
        total = self.const
        for key, c in self.coefs.items():
            x = cov.get(key)
            if np.ndim(c) == 0:
                total += float(c) * float(x)
            else:
                total += float((c * np.asarray(x).T).sum().real)
        return total


@dataclass
class ConcaveRateBound:
    """``ln(log_form(x)) + affine(x)``: a concave minorant of a user rate."""
    log_form: LinearForm
    affine: LinearForm

    def evaluate(self, cov):
        arg = self.log_form(cov)
        if arg <= 0:
            return -np.inf
        return float(np.log(arg) + self.affine(cov))


@dataclass
class ConvexBound:
    """``affine(x) - sum_m c_m ln(form_m(x))`` with c_m >= 0: a convex majorant."""
    affine: LinearForm
    logs: list

    def evaluate(self, cov):
        total = self.affine(cov)
        for c, form in self.logs:
            arg = form(cov)
            if arg <= 0:
                return np.inf
            total -= c * np.log(arg)
        return float(total)


# -- scalar and matrix linearizations -----------------------------------------

def f_scalar(a, b):
    """Tangent of ln at ``a`` evaluated at ``b``: ln a + (b - a)/a."""
    if a <= 0:
        raise DomainError(f"f_scalar needs a > 0, got {a}")
    return float(np.log(a) + (b - a) / a)


def f_matrix(a, b):
    """Tangent of logdet at ``a`` evaluated at ``b``: logdet A + tr(A^-1 (B - A))."""
    a = nx.check_hermitian(a)
    b = nx.check_hermitian(b)
    w, u = nx.eigh(a)
    if w[0] <= 1e-10:
        raise DomainError(f"f_matrix needs a positive definite A (min eigenvalue {w[0]:.3e})")
    a_inv = (u / w) @ u.conj().T
    return float(np.sum(np.log(w)) + np.real(np.trace(a_inv @ (b - a))))


# -- link gains ----------------------------------------------------------------

def rho(j, i, k, v_az, v_el, sigma2, realization):
    """Received power at MS j from stream k through RU i (signal plus riding noise)."""
    if sigma2 < 0:
        raise DomainError("sigma2 must be >= 0")
    h = realization.h_az[j][i]
    u = realization.u_el[j][i]
    if np.shape(v_az) != (h.size, h.size) or np.shape(v_el) != (u.size, u.size):
        raise DomainError(f"covariance shapes {np.shape(v_az)}, {np.shape(v_el)} do not "
                          f"match link ({j}, {i}) dims {h.size}, {u.size}")
    el = nx.quad_form(u, v_el)
    az = nx.quad_form(h, v_az) + sigma2 * realization.h_norm2[j, i]
    return float(realization.lam[j, i] * el * az)


def _pairs(mode, n_ms, n_ru, clustering):
    if mode == CBP:
        if clustering is None:
            clustering = full_clustering(n_ru, n_ms)
        return [(k, i) for i in range(n_ru) for k in clustering[i]]
    return [(k, i) for i in range(n_ru) for k in range(n_ms)]


def full_clustering(n_ru, n_ms):
    return tuple(tuple(range(n_ms)) for _ in range(n_ru))


def check_clustering(clustering, n_ru, n_ms):
    if len(clustering) != n_ru:
        raise DomainError(f"clustering has {len(clustering)} clusters for {n_ru} RUs")
    for i, m in enumerate(clustering):
        if not m:
            raise DomainError(f"cluster of RU {i} is empty")
        if any(not 0 <= k < n_ms for k in m):
            raise DomainError(f"cluster of RU {i} references an unknown MS")
    return clustering


def _link_terms(j, cov, real, mode, clustering):
    """Per-link (signal, noise) received powers at MS j, keyed by (k, i)."""
    sig, noise = {}, 0.0
    for (k, i) in _pairs(mode, real.n_ms, real.n_ru, clustering):
        lam = real.lam[j, i]
        e = nx.quad_form(real.u_el[j][i], cov.v_el[(k, i)])
        s = nx.quad_form(real.h_az[j][i], cov.v_az[(k, i)])
        hn = real.h_norm2[j, i]
        if mode == CAP:
            sig[(k, i)] = lam * e * s
            noise += lam * e * cov.sigma_pair[(k, i)] * hn
        elif mode == CBP:
            sig[(k, i)] = lam * e * (s + cov.sigma_ru[i] * hn)
        else:
            sig[(k, i)] = lam * e * s
    if mode == CONV_CAP:
        noise = sum(real.lam[j, i] * cov.sigma_ru[i] * real.h_norm2[j, i]
                    for i in range(real.n_ru))
    return sig, noise


def _check_mode(mode):
    if mode not in MODES:
        raise DomainError(f"unknown mode {mode!r}; expected one of {MODES}")


def rate_exact(j, cov, realization, mode, clustering=None):
    """Achievable rate of MS j in nats for one channel realization.

    Compression noise that is independent of the data (layered and conventional
    CAP) degrades both the desired and the interference-only terms; noise on
    the precoder itself (CBP) travels with the stream it multiplies.
    """
    _check_mode(mode)
    if mode == CBP and clustering is not None:
        check_clustering(clustering, realization.n_ru, realization.n_ms)
    sig, noise = _link_terms(j, cov, realization, mode, clustering)
    total = 1.0 + sum(sig.values()) + noise
    interf = total - sum(v for (k, _), v in sig.items() if k == j)
    return max(0.0, float(np.log(total) - np.log(interf)))


def sum_rate_exact(cov, realization, mode, clustering=None):
    return sum(rate_exact(j, cov, realization, mode, clustering)
               for j in range(realization.n_ms))


def rate_forms(j, cov, realization, mode, clustering=None, variable="azimuth"):
    """``(total, interference)`` received-power forms for MS j, both including 1.

    ``variable`` selects which covariances stay free; the other group is taken
    from ``cov`` and folded into the coefficients.
    """
    _check_mode(mode)
    real = realization
    total = LinearForm(const=1.0)
    interf = LinearForm(const=1.0)
    for (k, i) in _pairs(mode, real.n_ms, real.n_ru, clustering):
        lam = real.lam[j, i]
        h = real.h_az[j][i]
        u = real.u_el[j][i]
        hn = real.h_norm2[j, i]
        sig = LinearForm()
        noise = LinearForm()
        if variable == "azimuth":
            e = lam * nx.quad_form(u, cov.v_el[(k, i)])
            sig.add(VA(k, i), e * np.outer(h, h.conj()))
            if mode == CAP:
                noise.add(SP(k, i), e * hn)
            elif mode == CBP:
                sig.add(SR(i), e * hn)
        elif variable == "elevation":
            s = nx.quad_form(h, cov.v_az[(k, i)])
            uu = lam * np.outer(u, u.conj())
            if mode == CAP:
                sig.add(VE(k, i), s * uu)
                noise.add(VE(k, i), cov.sigma_pair[(k, i)] * hn * uu)
            elif mode == CBP:
                sig.add(VE(k, i), (s + cov.sigma_ru[i] * hn) * uu)
            else:
                raise DomainError("conventional CAP has no elevation variable")
        else:
            raise DomainError(f"unknown variable group {variable!r}")
        total = total + sig + noise
        interf = interf + noise
        if k != j:
            interf = interf + sig
    if mode == CONV_CAP:
        if variable != "azimuth":
            raise DomainError("conventional CAP has no elevation variable")
        for i in range(real.n_ru):
            n = LinearForm({SR(i): real.lam[j, i] * real.h_norm2[j, i]})
            total = total + n
            interf = interf + n
    return total, interf


def rate_surrogate(j, anchor, realization, mode, clustering=None, variable="azimuth"):
    """Concave minorant of rate_exact(j) that is tight at ``anchor``.

    The interference log is replaced by its tangent at the anchor value.
    """
    total, interf = rate_forms(j, anchor, realization, mode, clustering, variable)
    a = interf(anchor)
    if not np.isfinite(a) or a < 1.0 - 1e-12:
        raise DomainError(f"infeasible anchor (interference term {a})")
    # -f(a, interf(x)) = -ln a - interf(x)/a + 1
    affine = interf * (-1.0 / a) + (1.0 - np.log(a))
    return ConcaveRateBound(total, affine)


# -- fronthaul -------------------------------------------------------------------

def _silent(v, s):
    return s == 0.0 and np.real(np.trace(v)) == 0.0


def fronthaul_cap_exact(i, cov, n_ms=None):
    """Layered CAP fronthaul load of RU i in nats (streams compressed separately)."""
    pairs = [key for key in cov.sigma_pair if key[1] == i]
    if n_ms is not None:
        pairs = [(k, i) for k in range(n_ms)]
    total = 0.0
    for key in pairs:
        s = cov.sigma_pair[key]
        tr = float(np.real(np.trace(cov.v_az[key])))
        if s <= 0:
            if _silent(cov.v_az[key], s):
                continue
            raise DomainError(f"quantization variance of stream {key} must be > 0")
        total += np.log(tr + s) - np.log(s)
    return float(total)


def fronthaul_cap_surrogate(i, anchor, n_ms=None):
    """Convex majorant of fronthaul_cap_exact(i) tight at ``anchor``."""
    keys = [key for key in anchor.sigma_pair if key[1] == i]
    if n_ms is not None:
        keys = [(k, i) for k in range(n_ms)]
    affine = LinearForm()
    logs = []
    for (k, _) in keys:
        s0 = anchor.sigma_pair[(k, i)]
        if _silent(anchor.v_az[(k, i)], s0):
            continue
        if s0 < SIGMA_MIN:
            raise DomainError(f"infeasible anchor: sigma of stream {(k, i)} below floor")
        v0 = anchor.v_az[(k, i)]
        a = float(np.real(np.trace(v0))) + s0
        n = v0.shape[0]
        affine.add(VA(k, i), np.eye(n) / a)
        affine.add(SP(k, i), 1.0 / a)
        affine.const += np.log(a) - 1.0
        logs.append((1.0, LinearForm({SP(k, i): 1.0})))
    return ConvexBound(affine, logs)


def _cluster(i, clustering, n_ms, mode):
    if mode == CBP and clustering is not None:
        return tuple(clustering[i])
    return tuple(range(n_ms))


def _stack(i, cov, members):
    return sum(cov.v_az[(k, i)] for k in members)


def fronthaul_cbp_exact(i, cov, T, clustering=None, n_ms=None):
    """Precoder-description load of RU i (nats per symbol), amortized over T."""
    if T < 1:
        raise DomainError("coherence time T must be >= 1")
    n_ms = n_ms if n_ms is not None else 1 + max(k for (k, _) in cov.v_az)
    members = _cluster(i, clustering, n_ms, CBP)
    s = cov.sigma_ru[i]
    stack = _stack(i, cov, members)
    if s <= 0:
        if s == 0 and np.real(np.trace(stack)) == 0:
            return 0.0
        raise DomainError(f"quantization variance of RU {i} must be > 0")
    n = stack.shape[0]
    w = np.linalg.eigvalsh(nx.hermitize(stack) + s * np.eye(n))
    return float((np.sum(np.log(w)) - n * np.log(s)) / T)


def fronthaul_cbp_surrogate(i, anchor, T, clustering=None, n_ms=None):
    """Convex majorant of fronthaul_cbp_exact(i) tight at ``anchor``."""
    if T < 1:
        raise DomainError("coherence time T must be >= 1")
    n_ms = n_ms if n_ms is not None else 1 + max(k for (k, _) in anchor.v_az)
    members = _cluster(i, clustering, n_ms, CBP)
    s0 = anchor.sigma_ru[i]
    if s0 < SIGMA_MIN:
        raise DomainError(f"infeasible anchor: sigma of RU {i} below floor")
    a0 = nx.hermitize(_stack(i, anchor, members)) + s0 * np.eye(anchor.v_az[(members[0], i)].shape[0])
    w, u = np.linalg.eigh(a0)
    if w[0] <= 1e-10:
        raise DomainError("anchor matrix is singular")
    a_inv = nx.hermitize((u / w) @ u.conj().T)
    n = a0.shape[0]
    affine = LinearForm()
    for k in members:
        affine.add(VA(k, i), a_inv / T)
    affine.add(SR(i), float(np.real(np.trace(a_inv))) / T)
    affine.const = (float(np.sum(np.log(w))) - n) / T
    return ConvexBound(affine, [(n / T, LinearForm({SR(i): 1.0}))])


# -- power -----------------------------------------------------------------------

def power_exact(i, cov, mode, clustering=None, noise_dim=None, n_ms=None):
    """Transmit power of RU i from traces of the covariances."""
    _check_mode(mode)
    n_ms = n_ms if n_ms is not None else 1 + max(k for (k, _) in cov.v_az)
    members = _cluster(i, clustering, n_ms, mode)
    total = 0.0
    for k in members:
        va = cov.v_az[(k, i)]
        nd = va.shape[0] if noise_dim is None else noise_dim
        tr_a = float(np.real(np.trace(va)))
        tr_e = float(np.real(np.trace(cov.v_el[(k, i)])))
        if mode == CAP:
            total += (tr_a + nd * cov.sigma_pair[(k, i)]) * tr_e
        elif mode == CBP:
            total += (tr_a + nd * cov.sigma_ru[i]) * tr_e
        else:
            total += tr_a * tr_e
    if mode == CONV_CAP:
        nd = cov.v_az[(members[0], i)].shape[0] if noise_dim is None else noise_dim
        total += nd * cov.sigma_ru[i]
    return float(total)


def power_form(i, cov, mode, clustering=None, noise_dim=None, n_ms=None, variable="azimuth"):
    """power_exact(i) as a linear form in the selected variable group."""
    _check_mode(mode)
    n_ms = n_ms if n_ms is not None else 1 + max(k for (k, _) in cov.v_az)
    members = _cluster(i, clustering, n_ms, mode)
    form = LinearForm()
    for k in members:
        va = cov.v_az[(k, i)]
        na = va.shape[0]
        nd = na if noise_dim is None else noise_dim
        ve = cov.v_el[(k, i)]
        if variable == "azimuth":
            tr_e = float(np.real(np.trace(ve)))
            form.add(VA(k, i), tr_e * np.eye(na))
            if mode == CAP:
                form.add(SP(k, i), nd * tr_e)
            elif mode == CBP:
                form.add(SR(i), nd * tr_e)
        else:
            tr_a = float(np.real(np.trace(va)))
            s = cov.sigma_pair[(k, i)] if mode == CAP else cov.sigma_ru[i]
            form.add(VE(k, i), (tr_a + nd * s) * np.eye(ve.shape[0]))
    if mode == CONV_CAP:
        nd = cov.v_az[(members[0], i)].shape[0] if noise_dim is None else noise_dim
        form.add(SR(i), float(nd))
    return form


def transmit_covariance(i, cov, mode, clustering=None, n_ms=None):
    """Explicit per-symbol transmit covariance of RU i over its N_A*N_E array.

    Layered CAP: sum_k kron(V^A_k + sigma_k I, V^E_k), the covariance of
    (x^A_k + q_k) kron w^E_k. CBP: sum_{k in M_i} kron(V^A_k + sigma I, V^E_k),
    the compression error riding each precoder.
    """
    _check_mode(mode)
    if mode == CONV_CAP:
        raise DomainError("conventional CAP has no Kronecker structure to assemble")
    n_ms = n_ms if n_ms is not None else 1 + max(k for (k, _) in cov.v_az)
    out = None
    for k in _cluster(i, clustering, n_ms, mode):
        va = cov.v_az[(k, i)]
        s = cov.sigma_pair[(k, i)] if mode == CAP else cov.sigma_ru[i]
        term = nx.kron(va + s * np.eye(va.shape[0]), cov.v_el[(k, i)])
        out = term if out is None else out + term
    return out
