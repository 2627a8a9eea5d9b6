"""Layered compress-after-precoding: DC short-term stage and SSUM long-term stage."""
from dataclasses import dataclass, field

import numpy as np

from .. import surrogates as sg
from ..channel import draw_block, draw_long_term_state
from ..errors import DomainError, InfeasibleError
from ..solver import (INFEASIBLE, ConvexSubproblem, Layout, ProblemBuilder, matrix_to_params,
                      solve)
from .base import (Budgets, DCTrace, StrategyConfig, check_budgets, dc_loop, elevation_traces,
                   zero_covariances)

AUDIT_TOL = 1e-6


@dataclass
class ShortTermResult:
    cov: sg.CovarianceSet
    objective: float          # exact objective at cov, nats
    trace: DCTrace
    rates: dict = field(default_factory=dict)


def _n_az(real):
    return tuple(real.h_az[0][i].size for i in range(real.n_ru))


def initial_cap(real, v_el, budgets):
    """Strictly feasible start: half the fronthaul, at most 3/4 of the power."""
    n_ms, n_ru = real.n_ms, real.n_ru
    n_az = _n_az(real)
    cov = zero_covariances(n_ms, n_ru, n_az, v_el, per_ru_sigma=False)
    for i in range(n_ru):
        if not budgets.active(i):
            continue
        tau = elevation_traces(v_el, range(n_ms), i)
        if tau <= 0:
            raise DomainError(f"elevation covariances at RU {i} are all zero")
        p_bar, c_bar, na = budgets.power[i], budgets.fronthaul[i], n_az[i]
        sigma = max(p_bar / (4.0 * na * tau), 10 * sg.SIGMA_MIN)
        c = min(p_bar / (2.0 * tau), sigma * np.expm1(c_bar / (2.0 * n_ms)))
        for k in range(n_ms):
            cov.v_az[(k, i)] = (c / na) * np.eye(na, dtype=complex)
            cov.sigma_pair[(k, i)] = sigma
    return cov


def cap_feasible(cov, budgets, n_ms, tol=AUDIT_TOL):
    for i in range(budgets.n_ru):
        if sg.fronthaul_cap_exact(i, cov, n_ms) > budgets.fronthaul[i] + tol:
            return False
        if sg.power_exact(i, cov, sg.CAP, n_ms=n_ms) > budgets.power[i] + tol:
            return False
    return True


def _shrunk(anchor, keys, theta):
    start = {}
    for key in keys:
        val = anchor.get(key)
        start[key] = theta * val if key[0] == "VA" else val
    return start


def is_silent(cov, k, i):
    return cov.sigma_pair[(k, i)] == 0.0 and not np.any(cov.v_az[(k, i)])


def prune_cap(cov, budgets, cfg):
    """Switch off streams whose azimuth power is negligible; None if nothing changes."""
    out = None
    for (k, i), v in cov.v_az.items():
        if is_silent(cov, k, i):
            continue
        if np.real(np.trace(v)) <= cfg.prune_tol * budgets.power[i]:
            out = out or cov.copy()
            out.v_az[(k, i)] = np.zeros_like(v)
            out.sigma_pair[(k, i)] = 0.0
    return out


def cap_problem(real, anchor, budgets, cfg=StrategyConfig()):
    """Convexified short-term problem around ``anchor`` (azimuth + per-stream variances).

    Returns None when every stream is switched off.
    """
    n_ms = real.n_ms
    layout = Layout()
    keys = []
    for i in range(real.n_ru):
        if not budgets.active(i):
            continue
        for k in range(n_ms):
            if is_silent(anchor, k, i):
                continue
            layout.add_psd(sg.VA(k, i), anchor.v_az[(k, i)].shape[0])
            layout.add_scalar(sg.SP(k, i), sg.SIGMA_MIN)
            keys += [sg.VA(k, i), sg.SP(k, i)]
    pb = ProblemBuilder(layout, fixed=anchor)
    for j in range(n_ms):
        pb.maximize_rate_bound(sg.rate_surrogate(j, anchor, real, sg.CAP))
    if not keys:
        return None
    for i in range(real.n_ru):
        if not budgets.active(i):
            continue
        pb.le_convex(f"fronthaul:{i}", sg.fronthaul_cap_surrogate(i, anchor, n_ms),
                     budgets.fronthaul[i])
        pb.le(f"power:{i}", sg.power_form(i, anchor, sg.CAP, n_ms=n_ms), budgets.power[i])
    return pb.build(start=_shrunk(anchor, keys, cfg.start_scale))


def short_term_cap(real, v_el, budgets, cfg=StrategyConfig(), init=None):
    """Azimuth covariances and per-stream quantization variances for one block.

    ``v_el`` maps (k, i) to the fixed elevation covariance of stream k at RU i.
    RUs without fronthaul stay silent.
    """
    check_budgets(budgets, real.n_ru)
    anchor = init if init is not None else initial_cap(real, v_el, budgets)
    if not any(budgets.active(i) for i in range(real.n_ru)):
        f = sg.sum_rate_exact(anchor, real, sg.CAP)
        return ShortTermResult(anchor, f, DCTrace([f]))
    cov, trace = dc_loop(
        anchor,
        lambda a: cap_problem(real, a, budgets, cfg),
        lambda c: sg.sum_rate_exact(c, real, sg.CAP),
        cfg,
        feasible=lambda c: cap_feasible(c, budgets, real.n_ms),
        refine=lambda c: prune_cap(c, budgets, cfg))
    return ShortTermResult(cov, trace.objective[-1], trace)


# -- long-term stage ------------------------------------------------------------

@dataclass
class SsumEntry:
    realization: object
    v_az: dict
    sigma: dict               # per-pair (CAP) or per-RU (CBP) quantization variances
    anchor_v_el: dict
    objective: float          # exact short-term objective of this sample, nats
    rates: dict = field(default_factory=dict)


@dataclass
class SsumState:
    v_el: dict
    iteration: int = 0
    history: list = field(default_factory=list)
    running: list = field(default_factory=list)     # running-average objective
    rates: dict = field(default_factory=dict)       # long-term rates (CBP)
    converged: bool = False


def initial_elevation(n_ms, n_el):
    return {(k, i): np.eye(n_el[i], dtype=complex) / n_el[i]
            for k in range(n_ms) for i in range(len(n_el))}


class SsumAccumulator:
    """Stacks per-sample surrogate rows over a fixed elevation-variable layout."""

    def __init__(self, layout):
        self.layout = layout
        self.rows = []
        self.offsets = []
        self.affine = np.zeros(layout.n)
        self.const = 0.0
        self.groups = []          # per sample: list of (atom index, user j)
        self.affine_by_user = {}

    def add_sample(self, bounds, fixed):
        """``bounds``: dict j -> ConcaveRateBound for one history entry."""
        group = []
        for j, bd in bounds.items():
            row, c = self.layout.vec(bd.log_form, fixed)
            self.rows.append(row)
            self.offsets.append(c)
            group.append((len(self.rows) - 1, j))
            arow, ac = self.layout.vec(bd.affine, fixed)
            self.affine += arow
            self.const += ac
            prev = self.affine_by_user.get(j, (np.zeros(self.layout.n), 0.0))
            self.affine_by_user[j] = (prev[0] + arow, prev[1] + ac)
        self.groups.append(group)

    @property
    def n(self):
        return len(self.groups)

    def L(self):
        return np.array(self.rows).reshape(len(self.rows), self.layout.n)

    def b(self):
        return np.array(self.offsets)


def trace_equalities(layout):
    rows, names = [], []
    for key, dim, off in layout.psd:
        row = np.zeros(layout.n)
        row[off:off + dim] = 1.0
        rows.append(row)
        names.append(f"trace:{key[1]}:{key[2]}")
    return np.array(rows).reshape(len(rows), layout.n), np.ones(len(rows)), names


def mixed_start(layout, v_el, mix):
    """Parameter vector with every PSD block at (1 - mix) V^E + mix I / N (others zero)."""
    x = np.zeros(layout.n)
    for key, dim, off in layout.psd:
        v = (1.0 - mix) * v_el[key[1:]] + mix * np.eye(dim) / dim
        x[off:off + dim * dim] = matrix_to_params(v)
    return x


def elevation_layout(n_ms, n_el, budgets, members=None):
    layout = Layout()
    for i in range(budgets.n_ru):
        if not budgets.active(i) or n_el[i] == 1:
            continue
        for k in (range(n_ms) if members is None else members[i]):
            layout.add_psd(sg.VE(k, i), n_el[i])
    return layout


def ssum_cap_problem(acc, v_el, cfg):
    lay = acc.layout
    n = acc.n
    E, e, eq_names = trace_equalities(lay)
    L = acc.L()
    return ConvexSubproblem(lay, L, acc.b(), np.full(L.shape[0], 1.0 / n), acc.affine / n,
                            acc.const / n, np.zeros((0, lay.n)), np.zeros((0, L.shape[0])),
                            np.zeros(0), E, e, [], eq_names, mixed_start(lay, v_el, cfg.ssum_mix))


class SsumStopRule:
    """Relative change of the running average below ``tol`` for ``patience`` steps."""

    def __init__(self, tol, patience):
        self.tol, self.patience = tol, patience
        self.total = 0.0
        self.count = 0
        self.streak = 0
        self.avg = None

    def update(self, value):
        self.total += value
        self.count += 1
        new = self.total / self.count
        if self.avg is not None:
            change = abs(new - self.avg) / max(abs(self.avg), 1e-12)
            self.streak = self.streak + 1 if change < self.tol else 0
        self.avg = new
        return self.streak >= self.patience


def _check_entry_cap(entry, budgets, n_ms, it):
    # the fronthaul and power of a stored sample do not depend on the elevation
    # variable once tr(V^E) = 1; verify them instead of constraining
    cov = sg.CovarianceSet(entry.v_az, entry.anchor_v_el, sigma_pair=entry.sigma)
    for i in range(budgets.n_ru):
        fh = sg.fronthaul_cap_exact(i, cov, n_ms)
        if fh > budgets.fronthaul[i] + AUDIT_TOL:
            raise InfeasibleError(f"sample {it}: fronthaul of RU {i} is {fh:.6g} > "
                                  f"{budgets.fronthaul[i]:.6g}")
        tr_e = {key: 1.0 for key in cov.v_el}
        pw = sum(float(np.real(np.trace(cov.v_az[(k, i)]))) * tr_e[(k, i)]
                 + cov.v_az[(k, i)].shape[0] * cov.sigma_pair[(k, i)] for k in range(n_ms))
        if pw > budgets.power[i] + AUDIT_TOL:
            raise InfeasibleError(f"sample {it}: power of RU {i} is {pw:.6g} > "
                                  f"{budgets.power[i]:.6g}")


def long_term_cap(topology, seed=None, cfg=StrategyConfig(), max_outer=None, replay_block=None,
                  lt_state=None):
    """Stochastic successive convex approximation of the elevation covariances.

    Returns the final ``v_el`` and the :class:`SsumState` with the full
    sample history. ``replay_block`` reuses one fixed realization at every
    iteration (a degenerate channel distribution).
    """
    seed = topology.rng_seed if seed is None else seed
    budgets = Budgets.from_topology(topology)
    lt = lt_state if lt_state is not None else draw_long_term_state(topology, seed)
    n_ms = topology.n_ms
    max_outer = cfg.ssum_max_outer if max_outer is None else max_outer
    v_el = initial_elevation(n_ms, topology.n_el)
    state = SsumState(v_el=v_el)
    layout = elevation_layout(n_ms, topology.n_el, budgets)
    if layout.n == 0:
        state.converged = True
        return v_el, state
    acc = SsumAccumulator(layout)
    stop = SsumStopRule(cfg.ssum_tol, cfg.ssum_patience)
    for it in range(max_outer):
        real = replay_block if replay_block is not None else draw_block(lt, it, seed, "train")
        st = short_term_cap(real, v_el, budgets, cfg)
        entry = SsumEntry(real, st.cov.v_az, st.cov.sigma_pair, v_el, st.objective)
        _check_entry_cap(entry, budgets, n_ms, it)
        state.history.append(entry)
        bounds = {j: sg.rate_surrogate(j, st.cov, real, sg.CAP, variable="elevation")
                  for j in range(n_ms)}
        acc.add_sample(bounds, st.cov)
        rep = solve(ssum_cap_problem(acc, v_el, cfg), mu0=cfg.mu0 if it == 0 else cfg.mu_warm)
        if rep.status == INFEASIBLE:
            raise InfeasibleError("elevation subproblem has no strictly feasible start")
        v_el = dict(v_el)
        for key, val in rep.assignment.items():
            v_el[key[1:]] = val
        state.v_el = v_el
        state.iteration = it + 1
        done = stop.update(st.objective)
        state.running.append(stop.avg)
        if done:
            state.converged = True
            break
    return v_el, state
