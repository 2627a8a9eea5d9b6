"""Monte Carlo ergodic rates of trained strategies, with exact budget audits.

A strategy is trained once per topology on the ``train`` block stream and then
deployed on ``n_blocks`` blocks of the independent ``eval`` stream. Per block
it re-optimizes the short-term variables at the fixed rank-one elevation
precoders, extracts rank-one precoders and evaluates the exact rates.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import numerics as nx
from . import surrogates as sg
from .channel import draw_block, draw_long_term_state
from .errors import DomainError
from .strategies.base import Budgets, StrategyConfig
from .strategies.cap import long_term_cap, short_term_cap
from .strategies.cbp import long_term_cbp, short_term_cbp
from .strategies.conventional import (conventional_cap, conventional_cbp,
                                      conventional_cbp_short_term, conventional_realization,
                                      full_dims)
from .strategies.extraction import extract_and_normalize

STRATEGIES = ("layered_cap", "layered_cbp", "conv_cap", "conv_cbp")
AXES = ("n_el", "n_ms", "fronthaul", "coherence")
AUDIT_TOL = 1e-6


@dataclass
class AuditReport:
    ok: bool
    fronthaul_slack: tuple      # nats per symbol, per RU
    power_slack: tuple

    @property
    def worst(self):
        return min(self.fronthaul_slack + self.power_slack)


def audit(solution, budgets, tol=AUDIT_TOL):
    """Exact fronthaul and power slacks of one block's solution; fails below -tol."""
    if len(solution.fronthaul_use) != budgets.n_ru:
        raise DomainError("solution and budgets disagree on the number of RUs")
    fh = tuple(budgets.fronthaul[i] - solution.fronthaul_use[i] for i in range(budgets.n_ru))
    pw = tuple(budgets.power[i] - solution.power_use[i] for i in range(budgets.n_ru))
    return AuditReport(min(fh + pw) >= -tol, fh, pw)


@dataclass
class TrainedStrategy:
    """Long-term outputs a strategy needs to serve new coherence blocks."""
    strategy: str
    topology: object
    lt_state: object
    seed: int
    w_el: dict = field(default_factory=dict)     # unit-norm elevation precoders
    rates: dict = field(default_factory=dict)    # committed CBP rates, nats
    ssum: object = None

    @property
    def v_el(self):
        return {key: np.outer(w, w.conj()) for key, w in self.w_el.items()}

    @property
    def budgets(self):
        return Budgets.from_topology(self.topology)


def _rank_one(v_el):
    return {key: nx.principal_eigvec(v)[1] for key, v in v_el.items()}


def train(strategy, topology, seed=None, cfg=StrategyConfig(), max_outer=None, replay_block=None):
    """Run the long-term stage of ``strategy`` (nothing to do for conventional CAP)."""
    if strategy not in STRATEGIES:
        raise DomainError(f"unknown strategy {strategy!r}; valid: {', '.join(STRATEGIES)}")
    seed = topology.rng_seed if seed is None else int(seed)
    lt = draw_long_term_state(topology, seed)
    out = TrainedStrategy(strategy, topology, lt, seed)
    if strategy == "layered_cap":
        v_el, out.ssum = long_term_cap(topology, seed, cfg, max_outer, replay_block, lt)
        out.w_el = _rank_one(v_el)
    elif strategy == "layered_cbp":
        v_el, out.rates, out.ssum = long_term_cbp(topology, seed, None, cfg, max_outer,
                                                  replay_block, lt)
        out.w_el = _rank_one(v_el)
    elif strategy == "conv_cbp":
        out.rates, out.ssum = conventional_cbp(topology, seed, None, cfg, max_outer, lt,
                                               replay_block)
    return out


def serve_block(trained, real, cfg=StrategyConfig()):
    """Short-term optimization and rank-one extraction for one realization."""
    budgets = trained.budgets
    s = trained.strategy
    if s == "layered_cap":
        st = short_term_cap(real, trained.v_el, budgets, cfg)
        return extract_and_normalize(st.cov, real, budgets, sg.CAP)
    if s == "layered_cbp":
        st = short_term_cbp(real, trained.v_el, budgets, rates=trained.rates, cfg=cfg)
        return extract_and_normalize(st.cov, real, budgets, sg.CBP, committed=trained.rates)
    nd = full_dims(trained.topology)
    creal, bases = conventional_realization(trained.lt_state, real)
    if s == "conv_cap":
        st = conventional_cap(creal, budgets, nd, cfg)
        return extract_and_normalize(st.cov, creal, budgets, sg.CONV_CAP, noise_dim=nd,
                                     bases=bases)
    st = conventional_cbp_short_term(creal, budgets, nd, rates=trained.rates, cfg=cfg)
    return extract_and_normalize(st.cov, creal, budgets, sg.CBP, noise_dim=nd,
                                 committed=trained.rates, bases=bases)


@dataclass
class BlockOutcome:
    rates: tuple                # nats
    fronthaul_use: tuple
    power_use: tuple
    worst_slack: float
    flags: tuple


def _run_block(args):
    trained, b, cfg, replay_block = args
    real = replay_block if replay_block is not None else draw_block(
        trained.lt_state, b, trained.seed, "eval")
    sol = serve_block(trained, real, cfg)
    rep = audit(sol, trained.budgets)
    n_ms = trained.topology.n_ms
    return BlockOutcome(tuple(sol.rates[j] for j in range(n_ms)), sol.fronthaul_use,
                        sol.power_use, rep.worst, tuple(sol.flags))


@dataclass
class PointResult:
    """Ergodic outcome of one strategy at one sweep point (rates in bits/symbol)."""
    axis_value: float
    rates: tuple
    sum_rate: float
    se_sum_rate: float
    fronthaul_use: tuple        # mean per RU, bits/symbol
    power_use: tuple            # mean per RU
    n_blocks: int
    seed: int
    audit_ok: bool = True
    worst_slack: float = 0.0
    n_flagged: int = 0
    committed: tuple = ()       # CBP long-term rates, bits/symbol
    block_average: tuple = ()   # empirical per-MS average, bits/symbol


@dataclass
class SweepResult:
    strategy: str
    axis: str
    points: list = field(default_factory=list)

    @property
    def values(self):
        return [p.axis_value for p in self.points]

    def sum_rates(self):
        return np.array([p.sum_rate for p in self.points])

    def standard_errors(self):
        return np.array([p.se_sum_rate for p in self.points])


def summarize(trained, outcomes, axis_value=0.0):
    n = len(outcomes)
    per_block = np.array([o.rates for o in outcomes])            # (n, n_ms), nats
    avg = per_block.mean(axis=0)
    if trained.strategy in ("layered_cbp", "conv_cbp"):
        committed = np.array([trained.rates.get(j, 0.0) for j in range(per_block.shape[1])])
        rates = np.minimum(committed, avg)
        committed_bits = tuple(float(x) for x in sg.to_bits(committed))
    else:
        rates = avg
        committed_bits = ()
    sums = per_block.sum(axis=1)
    se = float(sums.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    rates_bits = tuple(float(x) for x in sg.to_bits(np.maximum(rates, 0.0)))
    worst = min(o.worst_slack for o in outcomes)
    return PointResult(
        axis_value=axis_value,
        rates=rates_bits,
        sum_rate=float(sum(rates_bits)),
        se_sum_rate=float(sg.to_bits(se)),
        fronthaul_use=tuple(float(x) for x in sg.to_bits(
            np.mean([o.fronthaul_use for o in outcomes], axis=0))),
        power_use=tuple(float(x) for x in np.mean([o.power_use for o in outcomes], axis=0)),
        n_blocks=n,
        seed=trained.seed,
        audit_ok=worst >= -AUDIT_TOL,
        worst_slack=float(worst),
        n_flagged=sum(1 for o in outcomes if o.flags),
        committed=committed_bits,
        block_average=tuple(float(x) for x in sg.to_bits(avg)))


def evaluate_trained(trained, n_blocks, cfg=StrategyConfig(), axis_value=0.0, workers=1,
                     replay_block=None):
    if n_blocks < 1:
        raise DomainError("n_blocks must be >= 1")
    jobs = [(trained, b, cfg, replay_block) for b in range(n_blocks)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            outcomes = list(ex.map(_run_block, jobs, chunksize=max(1, n_blocks // (4 * workers))))
    else:
        outcomes = [_run_block(job) for job in jobs]
    return summarize(trained, outcomes, axis_value)


def evaluate_ergodic(strategy, topology, n_blocks, seed=None, cfg=StrategyConfig(),
                     max_outer=None, axis_value=0.0, workers=1, replay_block=None):
    """Train ``strategy`` on ``topology`` and average exact rates over ``n_blocks``.

    ``replay_block`` replaces both the training and the evaluation draws with
    one fixed realization (a degenerate channel distribution).
    """
    trained = train(strategy, topology, seed, cfg, max_outer, replay_block)
    return evaluate_trained(trained, n_blocks, cfg, axis_value, workers, replay_block)


def sweep_params(params, axis, value):
    """Topology parameters of one sweep point; RU-wide axes apply to every RU."""
    n = params.n_ru
    if axis == "n_el":
        return replace(params, n_el=(int(value),) * n)
    if axis == "n_ms":
        return replace(params, n_ms=int(value))
    if axis == "fronthaul":
        return replace(params, fronthaul_bits=(float(value),) * n)
    if axis == "coherence":
        return replace(params, coherence=int(value))
    raise DomainError(f"unknown sweep axis {axis!r}; valid: {', '.join(AXES)}")
