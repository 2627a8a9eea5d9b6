"""Independent reference computations shared by unit and acceptance tests."""
import numpy as np

from layered_cran import solver as sv
from layered_cran import surrogates as sg
from layered_cran.surrogates import LinearForm

from conftest import random_cov, random_realization


def _psd_batch(rng, count, n, traces):
    g = rng.standard_normal((count, n, n)) + 1j * rng.standard_normal((count, n, n))
    m = g @ g.conj().transpose(0, 2, 1)
    tr = np.einsum("kii->k", m).real
    return m * (np.asarray(traces) / tr)[:, None, None]


def perturbed(rng, anchor, mode, variable):
    """A random feasible point: free group redrawn, the other group kept from ``anchor``."""
    cov = anchor.copy()
    scale = rng.choice([0.01, 0.3, 1.0, 3.0, 30.0])
    group = cov.v_az if variable == "azimuth" else cov.v_el
    keys = list(group)
    n = group[keys[0]].shape[0]
    hi = 1.0 if variable == "azimuth" else 2.0
    mats = _psd_batch(rng, len(keys), n, scale * rng.uniform(0, hi, len(keys)))
    for key, m in zip(keys, mats):
        group[key] = m
    if variable == "azimuth":
        sig = cov.sigma_pair if mode == sg.CAP else cov.sigma_ru
        for key, s in zip(list(sig), scale * rng.uniform(1e-3, 1.0, len(sig))):
            sig[key] = float(s)
    return cov


def surrogate_suite(seed, n_anchors, n_points, dims=(2, 2, 2, 3)):
    """Worst tightness error and worst one-sided slack over random anchors.

    Anchors alternate between the two splits and the two variable groups.
    Returns (max |surrogate - exact| at anchors, min slack over all points);
    a negative slack means a rate surrogate exceeded the exact rate or a
    fronthaul surrogate fell below the exact fronthaul.
    """
    rng = np.random.default_rng(seed)
    n_ms, n_ru, n_az, n_el = dims
    tight, slack = 0.0, np.inf
    for a in range(n_anchors):
        mode = (sg.CAP, sg.CBP)[a % 2]
        variable = ("azimuth", "elevation")[(a // 2) % 2]
        real = random_realization(rng, n_ms, n_ru, n_az, n_el)
        anchor = random_cov(rng, n_ms, n_ru, n_az, n_el, mode)
        T = int(rng.integers(1, 50))
        rs = [sg.rate_surrogate(j, anchor, real, mode, variable=variable) for j in range(n_ms)]
        if mode == sg.CAP:
            fs = [sg.fronthaul_cap_surrogate(i, anchor, n_ms) for i in range(n_ru)]

            def fex(i, c):
                return sg.fronthaul_cap_exact(i, c, n_ms)
        else:
            fs = [sg.fronthaul_cbp_surrogate(i, anchor, T, None, n_ms) for i in range(n_ru)]

            def fex(i, c):
                return sg.fronthaul_cbp_exact(i, c, T, None, n_ms)
        for j, r in enumerate(rs):
            tight = max(tight, abs(r.evaluate(anchor) - sg.rate_exact(j, anchor, real, mode)))
        if variable == "azimuth":
            for i, f in enumerate(fs):
                tight = max(tight, abs(f.evaluate(anchor) - fex(i, anchor)))
        for _ in range(n_points):
            x = perturbed(rng, anchor, mode, variable)
            for j, r in enumerate(rs):
                slack = min(slack, sg.rate_exact(j, x, real, mode) - r.evaluate(x))
            if variable == "azimuth":
                for i, f in enumerate(fs):
                    slack = min(slack, f.evaluate(x) - fex(i, x))
    return tight, slack


def scalar_cap_oracle(gain, p_bar, c_bar, steps=1000):
    """Grid search of the single-link layered CAP problem over (tr V^A, sigma).

    Rate ln(1 + g v / (1 + g s)) subject to ln(1 + v/s) <= C and v + s <= P.
    A coarse grid is followed by two rounds of local refinement.
    """
    def rate(v, s):
        ok = (np.log1p(v / s) <= c_bar + 1e-12) & (v + s <= p_bar + 1e-12)
        return np.where(ok, np.log1p(gain * v / (1.0 + gain * s)), -np.inf)

    lo_v, hi_v, lo_s, hi_s = 0.0, p_bar, 1e-9, p_bar
    best = (-np.inf, 0.0, 0.0)
    for _ in range(3):
        v = np.linspace(lo_v, hi_v, steps + 1)
        s = np.linspace(lo_s, hi_s, steps + 1)
        vv, ss = np.meshgrid(v, s, indexing="ij")
        r = rate(vv, ss)
        k = np.unravel_index(np.argmax(r), r.shape)
        best = max(best, (float(r[k]), float(vv[k]), float(ss[k])))
        dv, ds = 4 * (hi_v - lo_v) / steps, 4 * (hi_s - lo_s) / steps
        lo_v, hi_v = max(0.0, best[1] - dv), min(p_bar, best[1] + dv)
        lo_s, hi_s = max(1e-12, best[2] - ds), min(p_bar, best[2] + ds)
    return best[0]


def grid_max(f, bounds, steps=1000, rounds=3):
    """Maximize f over a box of dimension <= 3 by grid search with local refinement."""
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    n = len(bounds)
    per_dim = {1: steps, 2: steps, 3: 120}[n]
    best, arg = -np.inf, None
    for _ in range(rounds):
        axes = [np.linspace(lo[d], hi[d], per_dim + 1) for d in range(n)]
        grids = np.meshgrid(*axes, indexing="ij")
        vals = f(*grids)
        k = np.unravel_index(np.nanargmax(vals), vals.shape)
        if vals[k] > best:
            best, arg = float(vals[k]), np.array([g[k] for g in grids])
        width = 4 * (hi - lo) / per_dim
        lo = np.maximum(np.array([b[0] for b in bounds]), arg - width)
        hi = np.minimum(np.array([b[1] for b in bounds]), arg + width)
    return best, arg


X, Y = ("x",), ("y",)


def scalar_layout(*keys):
    lay = sv.Layout()
    for k in keys:
        lay.add_scalar(k, 0.0)
    return lay


def lf(const=0.0, **coefs):
    return LinearForm({(k,): c for k, c in coefs.items()}, const)


def random_problem(rng):
    """Two-variable log objective with a power cap and a log constraint, plus its grid oracle."""
    a, b, c = rng.uniform(0.1, 3, 3)
    w1, w2 = rng.uniform(0.2, 2, 2)
    d = rng.uniform(0, 0.5)
    p_bar, q = rng.uniform(0.5, 3), rng.uniform(0.1, 1.5)

    def f(x, y):
        ok = (x + y <= p_bar) & (x - q * np.log1p(y) <= 0.3)
        val = w1 * np.log1p(a * x + b * y) + w2 * np.log1p(c * x) - d * y
        return np.where(ok, val, -np.inf)

    pb = sv.ProblemBuilder(scalar_layout(X, Y))
    pb.maximize_log(lf(1.0, x=a, y=b), w1)
    pb.maximize_log(lf(1.0, x=c), w2)
    pb.maximize_affine(lf(y=-d))
    pb.le("power", lf(x=1.0, y=1.0), p_bar)
    pb.le("log", lf(x=1.0), 0.3, logs=[(q, lf(1.0, y=1.0))])
    return pb.build(start={X: 0.01, Y: 0.01}), f, p_bar
