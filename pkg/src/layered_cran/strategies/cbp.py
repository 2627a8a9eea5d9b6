"""Layered compress-before-precoding (CBP) drivers.

The short-term stage has two modes. In training mode (``rates=None``) the
per-user rates R_j are optimized jointly with the azimuth covariances and
returned as auxiliaries for the long-term averages. In deployment mode the
rates committed by the long-term stage are fixed and eat their share of the
fronthaul, and the block's azimuth covariances maximize the sum-rate with
what is left.
"""
from dataclasses import replace

import numpy as np

from .. import surrogates as sg
from ..channel import draw_block, draw_long_term_state
from ..errors import DomainError, InfeasibleError
from ..solver import INFEASIBLE, ConvexSubproblem, Layout, ProblemBuilder, solve
from .base import (Budgets, DCTrace, StrategyConfig, check_budgets, dc_loop, elevation_traces,
                   full_clustering, zero_covariances)
from .cap import (AUDIT_TOL, ShortTermResult, SsumAccumulator, SsumEntry, SsumState,
                  SsumStopRule, elevation_layout, initial_elevation, mixed_start,
                  trace_equalities)

TRAIN_SHARE = 0.25     # fraction of fronthaul given to the precoder at initialization
DEPLOY_SHARE = 0.5


def served_users(clustering, budgets):
    return sorted({j for i, m in enumerate(clustering) if budgets.active(i) for j in m})


def _dim(real, i):
    return real.h_az[0][i].size


def initial_cbp(real, v_el, budgets, clustering, share, noise_dim=None):
    """Strictly feasible covariances using ``share`` of each RU's precoder budget."""
    n_ms, n_ru, T = real.n_ms, real.n_ru, budgets.coherence
    n_az = tuple(_dim(real, i) for i in range(n_ru))
    cov = zero_covariances(n_ms, n_ru, n_az, v_el, per_ru_sigma=True)
    for i in range(n_ru):
        if not budgets.active(i):
            continue
        members = clustering[i]
        tau = elevation_traces(v_el, members, i)
        if tau <= 0:
            raise DomainError(f"elevation covariances at RU {i} are all zero")
        na = n_az[i]
        nd = na if noise_dim is None else noise_dim[i]
        p_bar = budgets.power[i]
        sigma = max(p_bar / (4.0 * nd * tau), 10 * sg.SIGMA_MIN)
        c = min(p_bar / (2.0 * tau),
                sigma * na / len(members) * np.expm1(min(T * share * budgets.fronthaul[i] / na, 700.0)))
        for k in members:
            cov.v_az[(k, i)] = (c / na) * np.eye(na, dtype=complex)
        cov.sigma_ru[i] = sigma
    return cov


def cbp_usage(cov, budgets, clustering, n_ms, noise_dim=None):
    """Exact (precoder fronthaul, power) per RU."""
    fh, pw = [], []
    for i in range(budgets.n_ru):
        if not budgets.active(i):
            fh.append(0.0)
            pw.append(0.0)
            continue
        fh.append(sg.fronthaul_cbp_exact(i, cov, budgets.coherence, clustering, n_ms))
        nd = None if noise_dim is None else noise_dim[i]
        pw.append(sg.power_exact(i, cov, sg.CBP, clustering, nd, n_ms))
    return fh, pw


def cbp_feasible(cov, real, budgets, clustering, noise_dim=None, rates=None, tol=AUDIT_TOL):
    """Exact feasibility; ``rates`` (committed) or ``cov.rates`` (training) use fronthaul."""
    fh, pw = cbp_usage(cov, budgets, clustering, real.n_ms, noise_dim)
    r = rates if rates is not None else cov.rates
    for i in range(budgets.n_ru):
        if not budgets.active(i):
            continue
        msg = sum(r.get(j, 0.0) for j in clustering[i])
        if fh[i] + msg > budgets.fronthaul[i] + tol or pw[i] > budgets.power[i] + tol:
            return False
    if rates is None:
        for j, rj in cov.rates.items():
            if rj > sg.rate_exact(j, cov, real, sg.CBP, clustering) + tol:
                return False
    return True


def _active_layout(anchor, real, budgets, clustering, users):
    layout = Layout()
    keys = []
    for i in range(real.n_ru):
        if not budgets.active(i):
            continue
        for k in clustering[i]:
            layout.add_psd(sg.VA(k, i), anchor.v_az[(k, i)].shape[0])
            keys.append(sg.VA(k, i))
        layout.add_scalar(sg.SR(i), sg.SIGMA_MIN)
        keys.append(sg.SR(i))
    for j in users:
        layout.add_scalar(sg.R(j), 0.0)
    return layout, keys


def _scaled(anchor, keys, theta):
    cov = anchor.copy()
    for key in keys:
        if key[0] == "VA":
            cov.set(key, theta * anchor.get(key))
    return cov


def _training_start(anchor, real, budgets, clustering, keys, users, surr, fh_surr, theta):
    """Scaled anchor with rates at half of what the surrogate constraints allow."""
    for scale in (theta, 0.99, 0.999, 1.0, 0.8, 0.5, 0.2):
        start = _scaled(anchor, keys, scale)
        caps = {j: surr[j].evaluate(start) for j in users}
        if min(caps.values(), default=1.0) <= 0:
            continue
        ok = True
        for i in range(real.n_ru):
            if not budgets.active(i):
                continue
            slack = budgets.fronthaul[i] - fh_surr[i].evaluate(start)
            if slack <= 0:
                ok = False
                break
            share = slack / len(clustering[i])
            for j in clustering[i]:
                caps[j] = min(caps[j], share)
        if not ok:
            continue
        start.rates = {j: 0.5 * caps[j] for j in users}
        return start
    return None


def cbp_problem(real, anchor, budgets, clustering, rates=None, noise_dim=None,
                cfg=StrategyConfig()):
    """Convexified short-term CBP problem around ``anchor``.

    With ``rates=None`` the objective is sum_j R_j under R_j <= rate bound
    (training mode); otherwise the sum of rate bounds with the committed rates
    charged to the fronthaul (deployment mode).
    """
    n_ms, T = real.n_ms, budgets.coherence
    users = served_users(clustering, budgets) if rates is None else []
    layout, keys = _active_layout(anchor, real, budgets, clustering, users)
    if not keys:
        return None
    pb = ProblemBuilder(layout, fixed=anchor)
    surr = {j: sg.rate_surrogate(j, anchor, real, sg.CBP, clustering)
            for j in range(n_ms)}
    fh_surr = {i: sg.fronthaul_cbp_surrogate(i, anchor, T, clustering, n_ms)
               for i in range(real.n_ru) if budgets.active(i)}
    if rates is None:
        for j in users:
            pb.maximize_affine(sg.LinearForm({sg.R(j): 1.0}))
            pb.le_rate(f"rate:{j}", sg.LinearForm({sg.R(j): 1.0}), surr[j])
    else:
        for j in range(n_ms):
            pb.maximize_rate_bound(surr[j])
    for i, fs in fh_surr.items():
        if rates is None:
            msg = sg.LinearForm({sg.R(j): 1.0 for j in clustering[i]})
            pb.le_convex(f"fronthaul:{i}", fs, budgets.fronthaul[i], extra=msg)
        else:
            pb.le_convex(f"fronthaul:{i}", fs, budgets.fronthaul[i])
        nd = None if noise_dim is None else noise_dim[i]
        pb.le(f"power:{i}", sg.power_form(i, anchor, sg.CBP, clustering, nd, n_ms),
              budgets.power[i])
    if rates is None:
        start = _training_start(anchor, real, budgets, clustering, keys, users, surr, fh_surr,
                                cfg.start_scale)
        if start is None:
            return pb.build()
    else:
        start = _scaled(anchor, keys, cfg.start_scale)
    return pb.build(start={key: start.get(key) for key in layout.index})


def precoder_budgets(budgets, clustering, rates):
    """Fronthaul left for precoder transfer once the committed messages are paid."""
    left = []
    for i in range(budgets.n_ru):
        rest = budgets.fronthaul[i] - sum(rates.get(j, 0.0) for j in clustering[i])
        if rest < -AUDIT_TOL:
            raise DomainError(f"committed rates exceed the fronthaul of RU {i} "
                              f"({-rest:.3g} nats over)")
        left.append(rest if rest > 1e-9 else 0.0)
    return replace(budgets, fronthaul=tuple(left))


def short_term_cbp(real, v_el, budgets, clustering=None, rates=None, cfg=StrategyConfig(),
                   noise_dim=None, init=None):
    """Azimuth covariances and per-RU quantization variances for one block.

    Returns a :class:`ShortTermResult`; in training mode ``result.rates`` holds
    the optimized R_j (nats), in deployment mode the exact block rates.
    """
    n_ms, n_ru = real.n_ms, real.n_ru
    check_budgets(budgets, n_ru)
    clustering = full_clustering(n_ru, n_ms) if clustering is None else clustering
    sg.check_clustering(clustering, n_ru, n_ms)
    if rates is None:
        work = budgets
        share = TRAIN_SHARE
    else:
        work = precoder_budgets(budgets, clustering, rates)
        share = DEPLOY_SHARE
    anchor = init if init is not None else initial_cbp(real, v_el, work, clustering, share,
                                                       noise_dim)
    if rates is None:
        users = served_users(clustering, work)
        for j in range(n_ms):
            anchor.rates[j] = 0.0
        if users:
            fh, _ = cbp_usage(anchor, work, clustering, n_ms, noise_dim)
            for j in users:
                cap = sg.rate_exact(j, anchor, real, sg.CBP, clustering)
                for i in range(n_ru):
                    if work.active(i) and j in clustering[i]:
                        cap = min(cap, (work.fronthaul[i] - fh[i]) / len(clustering[i]))
                anchor.rates[j] = 0.5 * cap

        def objective(c):
            return float(sum(c.rates.values()))

        def feasible(c):
            return cbp_feasible(c, real, work, clustering, noise_dim)
    else:
        def objective(c):
            return sg.sum_rate_exact(c, real, sg.CBP, clustering)

        def feasible(c):
            return cbp_feasible(c, real, work, clustering, noise_dim, rates={})

    if not any(work.active(i) for i in range(n_ru)):
        f = objective(anchor)
        return ShortTermResult(anchor, f, DCTrace([f]), dict(anchor.rates))
    cov, trace = dc_loop(
        anchor,
        lambda a: cbp_problem(real, a, work, clustering, rates, noise_dim, cfg),
        objective, cfg, feasible=feasible)
    if rates is None:
        out_rates = dict(cov.rates)
    else:
        out_rates = {j: sg.rate_exact(j, cov, real, sg.CBP, clustering) for j in range(n_ms)}
    return ShortTermResult(cov, trace.objective[-1], trace, out_rates)


# -- long-term stage ------------------------------------------------------------

def _check_entry_cbp(entry, budgets, clustering, n_ms, noise_dim, it):
    cov = sg.CovarianceSet(entry.v_az, entry.anchor_v_el, sigma_ru=entry.sigma)
    for i in range(budgets.n_ru):
        if not budgets.active(i):
            continue
        nd = None if noise_dim is None else noise_dim[i]
        pw = sum(float(np.real(np.trace(cov.v_az[(k, i)])))
                 + (cov.v_az[(k, i)].shape[0] if nd is None else nd) * cov.sigma_ru[i]
                 for k in clustering[i])
        if pw > budgets.power[i] + AUDIT_TOL:
            raise InfeasibleError(f"sample {it}: power of RU {i} is {pw:.6g} > "
                                  f"{budgets.power[i]:.6g}")


def ssum_cbp_problem(acc, layout, users, budgets, clustering, fh_used, v_el, cfg):
    """Elevation covariances and committed rates from the accumulated samples."""
    n = acc.n
    lay = layout
    L = acc.L()
    m = L.shape[0]
    rows, bounds, names = [], [], []
    C = []
    for j in users:
        arow, ac = acc.affine_by_user[j]
        row = -arow / n
        row[lay.index[sg.R(j)][1]] += 1.0
        rows.append(row)
        bounds.append(ac / n)
        cj = np.zeros(m)
        for group in acc.groups:
            for atom, user in group:
                if user == j:
                    cj[atom] = 1.0 / n
        C.append(cj)
        names.append(f"rate:{j}")
    for i in range(budgets.n_ru):
        if not budgets.active(i):
            continue
        row = np.zeros(lay.n)
        for j in clustering[i]:
            row[lay.index[sg.R(j)][1]] = 1.0
        rows.append(row)
        bounds.append(budgets.fronthaul[i] - fh_used[i])
        C.append(np.zeros(m))
        names.append(f"fronthaul:{i}")
    A = np.array(rows).reshape(len(rows), lay.n)
    B = np.array(bounds)
    C = np.array(C).reshape(len(rows), m)
    a0 = np.zeros(lay.n)
    for j in users:
        a0[lay.index[sg.R(j)][1]] = 1.0
    E, e, eq_names = trace_equalities(lay)
    p = ConvexSubproblem(lay, L, acc.b(), np.zeros(m), a0, 0.0, A, C, B, E, e, names,
                         eq_names, None)
    # start: mixed elevation, rates at half of the tightest cap
    x = mixed_start(lay, v_el, cfg.ssum_mix)
    s = L @ x + acc.b()
    if np.any(s <= 0):
        return p
    caps = {}
    for c_idx, j in enumerate(users):
        caps[j] = B[c_idx] - (A[c_idx] @ x) + C[c_idx] @ np.log(s)
    for i in range(budgets.n_ru):
        if not budgets.active(i):
            continue
        share = (budgets.fronthaul[i] - fh_used[i]) / len(clustering[i])
        for j in clustering[i]:
            caps[j] = min(caps[j], share)
    for j in users:
        x[lay.index[sg.R(j)][1]] = 0.5 * caps[j]
    p.start = x
    return p


def long_term_cbp(topology, seed=None, clustering=None, cfg=StrategyConfig(), max_outer=None,
                  replay_block=None, lt_state=None, block_map=None, noise_dim=None):
    """SSUM over elevation covariances and committed user rates.

    ``block_map(realization) -> realization`` lets the
    conventional baseline substitute its effective full-dimension channel.
    Returns ``(v_el, rates, state)`` with rates in nats.
    """
    seed = topology.rng_seed if seed is None else seed
    budgets = Budgets.from_topology(topology)
    lt = lt_state if lt_state is not None else draw_long_term_state(topology, seed)
    n_ms, n_ru = topology.n_ms, topology.n_ru
    clustering = full_clustering(n_ru, n_ms) if clustering is None else clustering
    sg.check_clustering(clustering, n_ru, n_ms)
    max_outer = cfg.ssum_max_outer if max_outer is None else max_outer
    users = served_users(clustering, budgets)
    n_el = topology.n_el if block_map is None else (1,) * n_ru
    v_el = initial_elevation(n_ms, n_el)
    state = SsumState(v_el=v_el, rates={j: 0.0 for j in range(n_ms)})
    if not users:
        state.converged = True
        return v_el, state.rates, state
    layout = elevation_layout(n_ms, n_el, budgets, clustering)
    for j in users:
        layout.add_scalar(sg.R(j), 0.0)
    acc = SsumAccumulator(layout)
    stop = SsumStopRule(cfg.ssum_tol, cfg.ssum_patience)
    fh_used = [0.0] * n_ru
    rates = dict(state.rates)
    for it in range(max_outer):
        real = replay_block if replay_block is not None else draw_block(lt, it, seed, "train")
        if block_map is not None:
            real = block_map(real)
        st = short_term_cbp(real, v_el, budgets, clustering, None, cfg, noise_dim)
        entry = SsumEntry(real, st.cov.v_az, st.cov.sigma_ru, v_el, st.objective, st.rates)
        _check_entry_cbp(entry, budgets, clustering, n_ms, noise_dim, it)
        state.history.append(entry)
        fh, _ = cbp_usage(st.cov, budgets, clustering, n_ms, noise_dim)
        fh_used = [max(a, b) for a, b in zip(fh_used, fh)]
        for i in range(n_ru):
            if budgets.active(i) and fh_used[i] >= budgets.fronthaul[i]:
                raise InfeasibleError(f"precoder transfer alone exhausts the fronthaul of RU {i}")
        bounds = {j: sg.rate_surrogate(j, st.cov, real, sg.CBP, clustering, variable="elevation")
                  for j in users}
        acc.add_sample(bounds, st.cov)
        rep = solve(ssum_cbp_problem(acc, layout, users, budgets, clustering, fh_used, v_el, cfg),
                    mu0=cfg.mu0 if it == 0 else cfg.mu_warm)
        if rep.status == INFEASIBLE:
            raise InfeasibleError("long-term CBP subproblem has no strictly feasible start")
        v_el = dict(v_el)
        for key, val in rep.assignment.items():
            if key[0] == "VE":
                v_el[key[1:]] = val
            else:
                rates[key[1]] = val
        state.v_el, state.rates = v_el, dict(rates)
        state.iteration = it + 1
        done = stop.update(st.objective)
        state.running.append(stop.avg)
        if done:
            state.converged = True
            break
    return v_el, rates, state
