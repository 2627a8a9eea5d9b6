"""Primal log-barrier interior point method for the convex subproblems.

Problem family (all functionals real-affine in the variables x)::

    maximize    sum_m w_m ln(s_m(x)) + a0.x + c0,      s = L x + b
    subject to  A_c.x - sum_m C_cm ln(s_m(x)) <= B_c    (C >= 0)
                E x = e
                V_k >= 0 (Hermitian PSD blocks),  x_s >= lb_s (scalars)

Hermitian d x d blocks are stored as d^2 reals: the diagonal first, then the
real and imaginary parts of the strict upper triangle in row-major order.

The text dump format (see :func:`dump_problem`) is line based::

    var psd <key> <dim>
    var scalar <key> <lower bound>
    atom <offset> | <idx>:<coef> ...
    objective <c0> | <idx>:<coef> ...
    logterm <atom> <weight>
    le <name> <bound> | <idx>:<coef> ... | <atom>:<coef> ...
    eq <name> <rhs> | <idx>:<coef> ...
    start | <idx>:<value> ...

Keys are written as colon-joined fields, e.g. ``VA:0:1``; indices refer to the
flattened real parameter vector.
"""
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DomainError
from .surrogates import ConcaveRateBound, ConvexBound, LinearForm

OPTIMAL, MAX_ITER, INFEASIBLE = "optimal", "max_iter", "infeasible"


# -- Hermitian parameterization -------------------------------------------------

@lru_cache(maxsize=None)
def _param_map(d):
    """(d*d, d*d) complex matrix T with vec(V) = T p (row-major vec)."""
    t = np.zeros((d * d, d * d), dtype=complex)
    for a in range(d):
        t[a * d + a, a] = 1.0
    iu, ju = np.triu_indices(d, 1)
    n_off = iu.size
    for q, (a, b) in enumerate(zip(iu, ju)):
        t[a * d + b, d + q] = 1.0
        t[b * d + a, d + q] = 1.0
        t[a * d + b, d + n_off + q] = 1j
        t[b * d + a, d + n_off + q] = -1j
    t.setflags(write=False)
    return t


def params_to_matrix(p, d):
    p = np.asarray(p, dtype=float)
    v = np.diag(p[:d]).astype(complex)
    iu, ju = np.triu_indices(d, 1)
    n_off = iu.size
    z = p[d:d + n_off] + 1j * p[d + n_off:d + 2 * n_off]
    v[iu, ju] = z
    v[ju, iu] = z.conj()
    return v


def matrix_to_params(v):
    v = np.asarray(v, dtype=complex)
    d = v.shape[0]
    iu, ju = np.triu_indices(d, 1)
    return np.concatenate([v.diagonal().real, v[iu, ju].real, v[iu, ju].imag])


def matrix_coef(g):
    """Coefficients c with c.p = Re tr(G V(p))."""
    g = np.asarray(g, dtype=complex)
    d = g.shape[0]
    iu, ju = np.triu_indices(d, 1)
    s = g[iu, ju] + g[ju, iu]
    t = 1j * (g[ju, iu] - g[iu, ju])
    return np.concatenate([g.diagonal().real, s.real, t.real])


def key_to_str(key):
    return ":".join(str(k) for k in key)


def key_from_str(text):
    parts = text.split(":")
    return (parts[0], *(int(p) for p in parts[1:]))


# -- variable layout -----------------------------------------------------------

class Layout:
    """Maps variable keys to slices of the real parameter vector."""

    def __init__(self):
        self.psd = []        # (key, dim, offset)
        self.scalars = []    # (key, lower bound, offset)
        self.index = {}
        self.n = 0

    def add_psd(self, key, dim):
        if key in self.index:
            raise DomainError(f"variable {key} declared twice")
        self.index[key] = ("psd", self.n, dim)
        self.psd.append((key, dim, self.n))
        self.n += dim * dim
        return self

    def add_scalar(self, key, lower=0.0):
        if key in self.index:
            raise DomainError(f"variable {key} declared twice")
        self.index[key] = ("scalar", self.n, float(lower))
        self.scalars.append((key, float(lower), self.n))
        self.n += 1
        return self

    def __contains__(self, key):
        return key in self.index

    def vec(self, form, fixed=None):
        """Dense coefficient row and constant of a LinearForm."""
        row = np.zeros(self.n)
        const = form.const
        for key, c in form.coefs.items():
            entry = self.index.get(key)
            if entry is None:
                if fixed is None:
                    raise DomainError(f"form references undeclared variable {key}")
                x = fixed.get(key)
                if np.ndim(c) == 0:
                    const += float(c) * float(x)
                else:
                    const += float(np.real(np.sum(c * np.asarray(x).T)))
                continue
            kind, off, dim = entry
            if kind == "psd":
                row[off:off + dim * dim] += matrix_coef(c)
            else:
                if np.ndim(c) != 0:
                    raise DomainError(f"matrix coefficient on scalar variable {key}")
                row[off] += float(c)
        return row, const

    def pack(self, assignment):
        x = np.zeros(self.n)
        for key, (kind, off, dim) in self.index.items():
            if key not in assignment:
                raise DomainError(f"assignment is missing variable {key}")
            val = assignment[key]
            if kind == "psd":
                x[off:off + dim * dim] = matrix_to_params(val)
            else:
                x[off] = float(val)
        return x

    def unpack(self, x):
        out = {}
        for key, dim, off in self.psd:
            out[key] = params_to_matrix(x[off:off + dim * dim], dim)
        for key, _, off in self.scalars:
            out[key] = float(x[off])
        return out


# -- problem data ----------------------------------------------------------------

@dataclass
class ConvexSubproblem:
    layout: Layout
    L: np.ndarray
    b: np.ndarray
    w: np.ndarray
    a0: np.ndarray
    c0: float
    A: np.ndarray
    C: np.ndarray
    B: np.ndarray
    E: np.ndarray
    e: np.ndarray
    names: list = field(default_factory=list)
    eq_names: list = field(default_factory=list)
    start: np.ndarray = None

    def __post_init__(self):
        n = self.layout.n
        if self.L.shape[1:] != (n,) or self.A.shape[1:] != (n,) or self.E.shape[1:] != (n,):
            raise DomainError("functional dimensions do not match the layout")
        if np.any(self.w < 0) or np.any(self.C < 0):
            raise DomainError("log weights and constraint log coefficients must be >= 0")
        if self.C.shape != (self.A.shape[0], self.L.shape[0]):
            raise DomainError("constraint log-coefficient matrix has the wrong shape")
        # precomputed index sets
        lay = self.layout
        self._groups = {}
        for key, dim, off in lay.psd:
            self._groups.setdefault(dim, []).append(off)
        self._groups = {d: np.array(offs) for d, offs in self._groups.items()}
        self._sc_idx = np.array([off for _, _, off in lay.scalars], dtype=int)
        self._sc_lb = np.array([lb for _, lb, _ in lay.scalars])
        self.m_barrier = self.A.shape[0] + len(self._sc_idx) + sum(d for _, d, _ in lay.psd)

    def objective(self, x):
        s = self.L @ x + self.b
        if np.any(s <= 0):
            return -np.inf
        return float(self.w @ np.log(s) + self.a0 @ x + self.c0)

    def constraint_values(self, x):
        s = self.L @ x + self.b
        with np.errstate(divide="ignore", invalid="ignore"):
            logs = np.where(s > 0, np.log(np.where(s > 0, s, 1.0)), -np.inf)
        g = self.A @ x
        if self.C.size:
            # 0 * -inf would be nan; only atoms with positive coefficients matter
            mask = self.C > 0
            g = g - np.where(mask, self.C * logs[None, :], 0.0).sum(axis=1)
        return g


class ProblemBuilder:
    """Accumulates atoms, objective pieces and constraints for one subproblem."""

    def __init__(self, layout, fixed=None):
        self.layout = layout
        self.fixed = fixed
        self._atoms = []
        self._atom_rows = {}
        self._w = []
        self._a0 = np.zeros(layout.n)
        self._c0 = 0.0
        self._le = []
        self._eq = []

    def atom(self, form):
        row, const = self.layout.vec(form, self.fixed)
        key = (row.tobytes(), const)
        if key in self._atom_rows:
            return self._atom_rows[key]
        self._atoms.append((row, const))
        self._w.append(0.0)
        idx = len(self._atoms) - 1
        self._atom_rows[key] = idx
        return idx

    def maximize_log(self, form, weight=1.0):
        idx = self.atom(form)
        self._w[idx] += float(weight)
        return idx

    def maximize_affine(self, form, weight=1.0):
        row, const = self.layout.vec(form, self.fixed)
        self._a0 += weight * row
        self._c0 += weight * const

    def maximize_rate_bound(self, bound: ConcaveRateBound, weight=1.0):
        self.maximize_log(bound.log_form, weight)
        self.maximize_affine(bound.affine, weight)

    def le(self, name, form, bound, logs=()):
        """``form(x) - sum c ln(log_form(x)) <= bound``."""
        row, const = self.layout.vec(form, self.fixed)
        coefs = {}
        for c, lf in logs:
            if c < 0:
                raise DomainError("log coefficients in <= constraints must be >= 0")
            idx = self.atom(lf)
            coefs[idx] = coefs.get(idx, 0.0) + float(c)
        self._le.append((name, row, float(bound) - const, coefs))

    def le_convex(self, name, cb: ConvexBound, bound, extra=None):
        form = cb.affine if extra is None else cb.affine + extra
        self.le(name, form, bound, cb.logs)

    def le_rate(self, name, lhs, bound: ConcaveRateBound):
        """``lhs(x) <= ln(log_form(x)) + affine(x)``."""
        self.le(name, lhs - bound.affine, 0.0, [(1.0, bound.log_form)])

    def eq(self, name, form, rhs):
        row, const = self.layout.vec(form, self.fixed)
        self._eq.append((name, row, float(rhs) - const))

    def build(self, start=None):
        n = self.layout.n
        m = len(self._atoms)
        L = np.array([r for r, _ in self._atoms]).reshape(m, n)
        b = np.array([c for _, c in self._atoms])
        A = np.array([r for _, r, _, _ in self._le]).reshape(len(self._le), n)
        B = np.array([bd for _, _, bd, _ in self._le])
        C = np.zeros((len(self._le), m))
        for c_idx, (_, _, _, coefs) in enumerate(self._le):
            for a_idx, val in coefs.items():
                C[c_idx, a_idx] = val
        E = np.array([r for _, r, _ in self._eq]).reshape(len(self._eq), n)
        e = np.array([v for _, _, v in self._eq])
        if start is not None and not isinstance(start, np.ndarray):
            start = self.layout.pack(start)
        return ConvexSubproblem(self.layout, L, b, np.array(self._w), self._a0.copy(), self._c0,
                                A, C, B, E, e, [nm for nm, *_ in self._le],
                                [nm for nm, *_ in self._eq], start)


# -- feasibility -------------------------------------------------------------------

@dataclass
class FeasibilityReport:
    slacks: dict            # constraint name -> bound - value
    eq_residuals: dict
    psd_min_eig: dict       # key -> most negative eigenvalue
    bound_slacks: dict      # scalar key -> value - lower bound
    atoms_min: float

    def worst(self):
        vals = [0.0]
        vals += [min(0.0, s) for s in self.slacks.values()]
        vals += [-abs(r) for r in self.eq_residuals.values()]
        vals += [min(0.0, v) for v in self.psd_min_eig.values()]
        vals += [min(0.0, v) for v in self.bound_slacks.values()]
        return -min(vals)

    def feasible(self, tol=1e-7):
        return self.worst() <= tol


def check_feasible(p, assignment, tol=1e-7):
    """Per-constraint slacks of ``assignment`` (a dict or a parameter vector)."""
    x = assignment if isinstance(assignment, np.ndarray) else p.layout.pack(assignment)
    g = p.constraint_values(x)
    slacks = {nm: float(p.B[c] - g[c]) for c, nm in enumerate(p.names)}
    resid = p.E @ x - p.e if p.E.size else np.zeros(0)
    eqs = {nm: float(resid[c]) for c, nm in enumerate(p.eq_names)}
    eigs = {}
    for key, dim, off in p.layout.psd:
        v = params_to_matrix(x[off:off + dim * dim], dim)
        eigs[key] = float(np.linalg.eigvalsh(v)[0])
    bounds = {key: float(x[off] - lb) for key, lb, off in p.layout.scalars}
    s = p.L @ x + p.b
    return FeasibilityReport(slacks, eqs, eigs, bounds, float(s.min()) if s.size else np.inf)


# -- barrier machinery ----------------------------------------------------------

def _psd_blocks(p, x):
    """Matrices grouped by dimension: dim -> (offsets, stacked matrices)."""
    out = {}
    for d, offs in p._groups.items():
        idx = offs[:, None] + np.arange(d * d)[None, :]
        t = _param_map(d)
        mats = (x[idx] @ t.T).reshape(len(offs), d, d)
        out[d] = (idx, mats)
    return out


def _strictly_feasible(p, x):
    s = p.L @ x + p.b
    if np.any(s <= 0):
        return False
    if p.A.shape[0] and np.any(p.B - p.constraint_values(x) <= 0):
        return False
    if len(p._sc_idx) and np.any(x[p._sc_idx] - p._sc_lb <= 0):
        return False
    for d, (_, mats) in _psd_blocks(p, x).items():
        try:
            np.linalg.cholesky(mats)
        except np.linalg.LinAlgError:
            return False
    return True


def _barrier_value(p, x, t):
    s = p.L @ x + p.b
    if np.any(s <= 0):
        return np.inf
    ls = np.log(s)
    val = -t * (p.w @ ls + p.a0 @ x)
    if p.A.shape[0]:
        sl = p.B - (p.A @ x - p.C @ ls)
        if np.any(sl <= 0):
            return np.inf
        val -= np.sum(np.log(sl))
    if len(p._sc_idx):
        r = x[p._sc_idx] - p._sc_lb
        if np.any(r <= 0):
            return np.inf
        val -= np.sum(np.log(r))
    for d, (_, mats) in _psd_blocks(p, x).items():
        try:
            ch = np.linalg.cholesky(mats)
        except np.linalg.LinAlgError:
            return np.inf
        diag = np.abs(np.diagonal(ch, axis1=1, axis2=2))
        val -= 2.0 * np.sum(np.log(diag))
    return float(val)


def _barrier_derivs(p, x, t):
    n = x.size
    s = p.L @ x + p.b
    inv_s = 1.0 / s
    grad = -t * (p.L.T @ (p.w * inv_s) + p.a0)
    curv = t * p.w * inv_s ** 2
    hess = np.zeros((n, n))
    if p.A.shape[0]:
        ls = np.log(s)
        sl = p.B - (p.A @ x - p.C @ ls)
        G = p.A - (p.C * inv_s[None, :]) @ p.L
        inv_sl = 1.0 / sl
        grad += G.T @ inv_sl
        curv = curv + (p.C.T @ inv_sl) * inv_s ** 2
        Gs = G * inv_sl[:, None]
        hess += Gs.T @ Gs
    hess += (p.L.T * curv) @ p.L
    if len(p._sc_idx):
        r = 1.0 / (x[p._sc_idx] - p._sc_lb)
        grad[p._sc_idx] -= r
        hess[p._sc_idx, p._sc_idx] += r ** 2
    for d, (idx, mats) in _psd_blocks(p, x).items():
        t_map = _param_map(d)
        t_h = t_map.conj().T
        nb = len(idx)
        minv = np.linalg.inv(mats)
        minv = 0.5 * (minv + np.conj(np.swapaxes(minv, 1, 2)))
        # gradient of -logdet: -Re(T^H vec(M)); Hessian Re(T^H (M kron M^T) T)
        g_blk = -np.real(minv.reshape(nb, -1) @ t_map.conj())
        kk = (minv[:, :, None, :, None] * np.swapaxes(minv, 1, 2)[:, None, :, None, :])
        h_blk = np.real(t_h @ kk.reshape(nb, d * d, d * d) @ t_map)
        grad[idx] += g_blk
        hess[idx[:, :, None], idx[:, None, :]] += h_blk
    return grad, hess


def _newton_step(p, grad, hess):
    n = grad.size
    q = p.E.shape[0]
    scale = np.sqrt(np.maximum(np.abs(np.diag(hess)), 1e-300))
    hs = hess / scale[:, None] / scale[None, :]
    gs = grad / scale
    if q == 0:
        try:
            c = np.linalg.cholesky(hs + 1e-14 * np.eye(n))
            dx = -np.linalg.solve(c.T, np.linalg.solve(c, gs))
        except np.linalg.LinAlgError:
            dx = -np.linalg.lstsq(hs, gs, rcond=None)[0]
        return dx / scale
    es = p.E / scale[None, :]
    kkt = np.zeros((n + q, n + q))
    kkt[:n, :n] = hs
    kkt[:n, n:] = es.T
    kkt[n:, :n] = es
    rhs = np.concatenate([-gs, np.zeros(q)])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:n] / scale


@dataclass
class SolverReport:
    assignment: dict
    x: np.ndarray
    objective: float
    max_violation: float
    gap: float
    iterations: int
    status: str


def _shrink_candidates(p, x0):
    """Scale PSD blocks and scalars toward their floors; equality-bound variables stay."""
    mask = np.zeros(x0.size, dtype=bool)
    for _, dim, off in p.layout.psd:
        mask[off:off + dim * dim] = True
    floor = np.zeros(x0.size)
    for key, lb, off in p.layout.scalars:
        if key[0] == "R":
            mask[off] = True
            floor[off] = lb
    if p.E.shape[0]:
        mask &= ~np.any(p.E != 0, axis=0)
    theta = 0.5
    while theta >= 1e-10:
        yield np.where(mask, floor + theta * (x0 - floor), x0)
        theta *= 0.5


def find_start(p, warm_start=None):
    """Strictly feasible starting vector, or None."""
    cands = []
    for cand in (warm_start, p.start):
        if cand is None:
            continue
        x = cand if isinstance(cand, np.ndarray) else p.layout.pack(cand)
        cands.append(np.asarray(x, dtype=float))
    for x in cands:
        if _strictly_feasible(p, x) and _eq_ok(p, x):
            return x.copy()
    for x in cands:
        for y in _shrink_candidates(p, x):
            if _strictly_feasible(p, y) and _eq_ok(p, y):
                return y
    return None


def _eq_ok(p, x, tol=1e-8):
    if p.E.shape[0] == 0:
        return True
    return bool(np.max(np.abs(p.E @ x - p.e)) <= tol * (1.0 + np.max(np.abs(p.e))))


def solve(p, warm_start=None, mu0=1.0, mu_factor=0.2, mu_min=1e-8, rel_gap=1e-6,
          max_newton=60, max_total=800, center_tol=1e-4):
    """Maximize the subproblem objective; see the module docstring for the form.

    Barrier weights run from ``mu0`` down by ``mu_factor`` until ``mu_min``;
    intermediate centering steps stop at a Newton decrement of ``center_tol``,
    the final one at 1e-10.
    """
    x = find_start(p, warm_start)
    if x is None:
        n = p.layout.n
        return SolverReport({}, np.full(n, np.nan), -np.inf, np.inf, np.inf, 0, INFEASIBLE)
    mu = float(mu0)
    total = 0
    status = OPTIMAL
    while True:
        t = 1.0 / mu
        final = mu <= mu_min
        tol = 1e-10 if final else center_tol
        phi = _barrier_value(p, x, t)
        for _ in range(max_newton):
            grad, hess = _barrier_derivs(p, x, t)
            dx = _newton_step(p, grad, hess)
            decrement = -grad @ dx
            total += 1
            if decrement <= tol or not np.isfinite(decrement):
                break
            step = 1.0
            accepted = False
            while step > 1e-14:
                y = x + step * dx
                val = _barrier_value(p, y, t)
                if val <= phi - 0.25 * step * decrement:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break
            x, phi = y, val
            if 0.5 * decrement <= tol or total >= max_total:
                break
        obj = p.objective(x)
        gap = p.m_barrier * mu
        if total >= max_total:
            status = MAX_ITER
            break
        if final and gap <= rel_gap * (1.0 + abs(obj)):
            break
        if mu < 1e-14:
            status = MAX_ITER
            break
        mu *= mu_factor
    rep = check_feasible(p, x)
    return SolverReport(p.layout.unpack(x), x, p.objective(x), rep.worst(),
                        p.m_barrier * mu, total, status)


# -- text dump -------------------------------------------------------------------

def _row_text(row):
    nz = np.flatnonzero(row)
    return " ".join(f"{i}:{float(row[i])!r}" for i in nz)


def dump_problem(p):
    lines = []
    for key, dim, _ in p.layout.psd:
        lines.append(f"var psd {key_to_str(key)} {dim}")
    for key, lb, _ in p.layout.scalars:
        lines.append(f"var scalar {key_to_str(key)} {lb!r}")
    for m in range(p.L.shape[0]):
        lines.append(f"atom {float(p.b[m])!r} | {_row_text(p.L[m])}")
    lines.append(f"objective {float(p.c0)!r} | {_row_text(p.a0)}")
    for m in np.flatnonzero(p.w):
        lines.append(f"logterm {m} {float(p.w[m])!r}")
    for c, nm in enumerate(p.names):
        logs = " ".join(f"{m}:{float(p.C[c, m])!r}" for m in np.flatnonzero(p.C[c]))
        lines.append(f"le {nm} {float(p.B[c])!r} | {_row_text(p.A[c])} | {logs}")
    for c, nm in enumerate(p.eq_names):
        lines.append(f"eq {nm} {float(p.e[c])!r} | {_row_text(p.E[c])}")
    if p.start is not None:
        lines.append(f"start | {_row_text(p.start)}")
    return "\n".join(lines) + "\n"


def _parse_row(text, n):
    row = np.zeros(n)
    for tok in text.split():
        i, v = tok.split(":")
        row[int(i)] = float(v)
    return row


def load_problem(text):
    layout = Layout()
    body = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head = line.split()
        if head[0] == "var":
            if head[1] == "psd":
                layout.add_psd(key_from_str(head[2]), int(head[3]))
            elif head[1] == "scalar":
                layout.add_scalar(key_from_str(head[2]), float(head[3]))
            else:
                raise DomainError(f"unknown variable kind in line: {line}")
        else:
            body.append(line)
    n = layout.n
    atoms, w, le, eq = [], {}, [], []
    a0, c0, start = np.zeros(n), 0.0, None
    for line in body:
        parts = [s.strip() for s in line.split("|")]
        head = parts[0].split()
        kind = head[0]
        if kind == "atom":
            atoms.append((_parse_row(parts[1], n), float(head[1])))
        elif kind == "objective":
            c0 = float(head[1])
            a0 = _parse_row(parts[1], n)
        elif kind == "logterm":
            w[int(head[1])] = float(head[2])
        elif kind == "le":
            logs = {}
            for tok in parts[2].split():
                i, v = tok.split(":")
                logs[int(i)] = float(v)
            le.append((head[1], _parse_row(parts[1], n), float(head[2]), logs))
        elif kind == "eq":
            eq.append((head[1], _parse_row(parts[1], n), float(head[2])))
        elif kind == "start":
            start = _parse_row(parts[1], n)
        else:
            raise DomainError(f"unknown line kind {kind!r}")
    m = len(atoms)
    L = np.array([r for r, _ in atoms]).reshape(m, n)
    b = np.array([c for _, c in atoms])
    wv = np.zeros(m)
    for i, v in w.items():
        wv[i] = v
    A = np.array([r for _, r, _, _ in le]).reshape(len(le), n)
    B = np.array([bd for _, _, bd, _ in le])
    C = np.zeros((len(le), m))
    for c, (_, _, _, logs) in enumerate(le):
        for i, v in logs.items():
            C[c, i] = v
    E = np.array([r for _, r, _ in eq]).reshape(len(eq), n)
    e = np.array([v for _, _, v in eq])
    return ConvexSubproblem(layout, L, b, wv, a0, c0, A, C, B, E, e,
                            [nm for nm, *_ in le], [nm for nm, *_ in eq], start)
