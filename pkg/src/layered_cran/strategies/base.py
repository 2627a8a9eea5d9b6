"""Shared plumbing for the strategy drivers: budgets, settings, DC loop."""
from dataclasses import dataclass, field

import numpy as np

from .. import surrogates as sg
from ..errors import DomainError, InfeasibleError
from ..solver import INFEASIBLE, solve


@dataclass(frozen=True)
class Budgets:
    """Per-RU fronthaul capacity (nats/symbol), power and the coherence time."""
    fronthaul: tuple
    power: tuple
    coherence: int = 1

    @classmethod
    def from_topology(cls, topology):
        return cls(tuple(topology.fronthaul_nats), tuple(topology.power), topology.coherence)

    @property
    def n_ru(self):
        return len(self.fronthaul)

    def active(self, i):
        return self.fronthaul[i] > 0


@dataclass(frozen=True)
class StrategyConfig:
    dc_tol: float = 1e-6
    dc_max_iter: int = 100
    ssum_tol: float = 1e-4
    ssum_patience: int = 5
    ssum_max_outer: int = 200
    ssum_mix: float = 1e-3        # weight of I/N_E blended into the SSUM start point
    start_scale: float = 0.95     # anchor shrink factor used as the solver start
    prune_tol: float = 1e-6       # streams below this fraction of the RU power are switched off
    mu0: float = 1.0
    mu_warm: float = 1.0          # initial barrier weight for solves started next to a previous optimum


def full_clustering(n_ru, n_ms):
    return sg.full_clustering(n_ru, n_ms)


@dataclass
class DCTrace:
    objective: list = field(default_factory=list)
    solver_iterations: list = field(default_factory=list)
    statuses: list = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.objective) - 1


def dc_loop(anchor, build, exact_objective, cfg, feasible=None, refine=None):
    """Iterate surrogate solves from ``anchor`` while the exact objective improves.

    ``build(anchor)`` returns a solver problem whose solution assignment is
    merged into the anchor. A candidate is only accepted when its exact
    objective does not decrease and, if given, ``feasible(candidate)`` holds;
    this keeps the recorded sequence monotone even when the solver stops a
    little short of the surrogate optimum.

    ``refine(cov)`` may propose a modified point after each accepted step
    (e.g. switching off streams that carry no power); it is kept under the
    same acceptance test. ``build`` returning None ends the loop.
    """
    trace = DCTrace()
    f = exact_objective(anchor)
    trace.objective.append(f)
    for it in range(cfg.dc_max_iter):
        problem = build(anchor)
        if problem is None:
            break
        rep = solve(problem, mu0=cfg.mu0 if it == 0 else cfg.mu_warm)
        trace.statuses.append(rep.status)
        trace.solver_iterations.append(rep.iterations)
        if rep.status == INFEASIBLE:
            raise InfeasibleError("surrogate problem has no strictly feasible start")
        cand = anchor.updated(rep.assignment)
        if feasible is not None and not feasible(cand):
            break
        f_new = exact_objective(cand)
        if not f_new >= f:
            break
        change = (f_new - f) / max(abs(f), 1e-12)
        anchor, f = cand, f_new
        if refine is not None:
            alt = refine(anchor)
            if alt is not None and (feasible is None or feasible(alt)):
                f_alt = exact_objective(alt)
                if f_alt >= f:
                    change += (f_alt - f) / max(abs(f), 1e-12)
                    anchor, f = alt, f_alt
        trace.objective.append(f)
        if change < cfg.dc_tol:
            break
    return anchor, trace


def elevation_traces(v_el, members, i):
    return sum(float(np.real(np.trace(v_el[(k, i)]))) for k in members)


def zero_covariances(n_ms, n_ru, n_az, v_el, per_ru_sigma):
    """All-silent covariance set (used for RUs without fronthaul)."""
    v_az = {(k, i): np.zeros((n_az[i], n_az[i]), dtype=complex)
            for k in range(n_ms) for i in range(n_ru)}
    cov = sg.CovarianceSet(v_az, dict(v_el))
    if per_ru_sigma:
        cov.sigma_ru = {i: 0.0 for i in range(n_ru)}
    else:
        cov.sigma_pair = {(k, i): 0.0 for k in range(n_ms) for i in range(n_ru)}
    return cov


def check_budgets(budgets, n_ru):
    if len(budgets.fronthaul) != n_ru or len(budgets.power) != n_ru:
        raise DomainError(f"budgets given for {len(budgets.fronthaul)} RUs, expected {n_ru}")
    if min(budgets.fronthaul) < 0 or min(budgets.power) <= 0:
        raise DomainError("fronthaul budgets must be >= 0 and power budgets > 0")
    if budgets.coherence < 1:
        raise DomainError("coherence time must be >= 1")
