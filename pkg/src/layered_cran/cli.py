"""Experiment front-end: flat key = value configs, figure presets, CSV/JSON output.

Config files hold one ``key = value`` per line; ``#`` starts a comment. Lists
are comma separated. Powers are given in dB and fronthaul capacities in bits
per symbol. Per-RU keys accept one value (used for every RU) or one value per RU.
"""
import argparse
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from . import __version__
from .channel import TopologyParams, generate_topology
from .errors import ConfigError, DomainError, InfeasibleError
from .evaluation import AXES, STRATEGIES, SweepResult, evaluate_ergodic, sweep_params
from .strategies.base import StrategyConfig

CSV_HEADER = ("axis_value,per_ms_rates,sum_rate,se_sum_rate,fronthaul_use,power_use,"
              "n_blocks,seed")
SIDECAR = "run.json"
TIMING = "timing.json"

INT_KEYS = {"n_ru", "n_ms", "coherence", "n_blocks", "seed", "workers", "max_outer",
            "dc_max_iter", "ssum_patience", "ssum_max_outer"}
FLOAT_KEYS = {"side", "d0", "eta", "az_corr", "dc_tol", "ssum_tol", "ssum_mix", "start_scale",
              "prune_tol", "mu0", "mu_warm"}
PER_RU_KEYS = {"n_az": int, "n_el": int, "fronthaul_bits": float, "power_db": float,
               "power": float}
LIST_KEYS = {"strategies", "values", "tilt_deg"}
OTHER_KEYS = {"axis", "name"}
KNOWN_KEYS = INT_KEYS | FLOAT_KEYS | set(PER_RU_KEYS) | LIST_KEYS | OTHER_KEYS
SOLVER_KEYS = tuple(f.name for f in fields(StrategyConfig))

PRESETS = {
    "fig5": """\
name = fig5
strategies = layered_cap, layered_cbp, conv_cap, conv_cbp
axis = n_ms
values = 2, 4, 6
n_ru = 2
n_az = 2
n_el = 4
fronthaul_bits = 3
power_db = 5
coherence = 20
""",
    "fig6": """\
name = fig6
strategies = layered_cap, layered_cbp, conv_cap, conv_cbp
axis = n_el
values = 1, 2, 4, 8
n_ru = 2
n_ms = 2
n_az = 2
fronthaul_bits = 1
power_db = 0
coherence = 20
""",
    "fig7": """\
name = fig7
strategies = layered_cap, layered_cbp, conv_cap, conv_cbp
axis = fronthaul
values = 1, 2, 3, 4, 5
n_ru = 2
n_ms = 2
n_az = 2
n_el = 4
power_db = 5
coherence = 10
""",
    "fig8": """\
name = fig8
strategies = layered_cap, layered_cbp, conv_cap, conv_cbp
axis = coherence
values = 5, 20, 80
n_ru = 2
n_ms = 2
n_az = 2
n_el = 4
fronthaul_bits = 4
power_db = 5
""",
}


@dataclass
class ExperimentConfig:
    """Fully resolved experiment: base topology, sweep, Monte Carlo sizes, settings."""
    strategies: tuple
    axis: str
    values: tuple
    params: TopologyParams
    power_db: tuple
    n_blocks: int = 200
    seed: int = 1
    max_outer: int = None
    workers: int = 1
    name: str = "run"
    solver: StrategyConfig = field(default_factory=StrategyConfig)

    def to_dict(self):
        p = asdict(self.params)
        p.pop("power")
        return {"name": self.name, "strategies": list(self.strategies), "axis": self.axis,
                "values": list(self.values), "topology": p, "power_db": list(self.power_db),
                "n_blocks": self.n_blocks, "seed": self.seed, "max_outer": self.max_outer,
                "workers": self.workers, "solver": asdict(self.solver)}

    @classmethod
    def from_dict(cls, d):
        topo = dict(d["topology"])
        for key in ("n_az", "n_el", "fronthaul_bits", "tilt_deg"):
            topo[key] = tuple(topo[key])
        power_db = tuple(d["power_db"])
        params = TopologyParams(power=tuple(db_to_linear(x) for x in power_db), **topo)
        return cls(tuple(d["strategies"]), d["axis"], tuple(d["values"]), params, power_db,
                   d["n_blocks"], d["seed"], d["max_outer"], d["workers"], d["name"],
                   StrategyConfig(**d["solver"]))


def db_to_linear(db):
    return float(10.0 ** (db / 10.0))


class ConfigDiagnostic(Exception):
    def __init__(self, diagnostics):
        self.diagnostics = diagnostics
        super().__init__("\n".join(diagnostics))


def _read_pairs(text):
    pairs, diags = {}, []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            diags.append(f"line {lineno}: expected 'key = value'")
        elif key not in KNOWN_KEYS:
            diags.append(f"line {lineno}: {key}: unknown key")
        elif key in pairs:
            diags.append(f"line {lineno}: {key}: duplicate key (first on line {pairs[key][0]})")
        else:
            pairs[key] = (lineno, value)
    return pairs, diags


def parse_config(text, overrides=None):
    """Parse config text into an :class:`ExperimentConfig`.

    Raises :class:`ConfigDiagnostic` listing every problem found, each naming
    the line (when known) and the field.
    """
    pairs, diags = _read_pairs(text)
    for key, value in (overrides or {}).items():
        if value is not None:
            pairs[key] = (None, str(value))

    def where(key):
        line = pairs[key][0]
        return f"line {line}: {key}" if line is not None else key

    def get(key, conv, default=None):
        if key not in pairs:
            return default
        try:
            return conv(pairs[key][1])
        except ValueError:
            diags.append(f"{where(key)}: cannot parse {pairs[key][1]!r}")
            return default

    def split(s):
        return [t.strip() for t in s.split(",") if t.strip()]

    n_ru = get("n_ru", int, 2)
    n_ms = get("n_ms", int, 2)
    strategies = tuple(get("strategies", split, list(STRATEGIES)))
    bad = [s for s in strategies if s not in STRATEGIES]
    if bad:
        diags.append(f"{where('strategies')}: unknown strategy {', '.join(bad)}; "
                     f"valid names: {', '.join(STRATEGIES)}")
    if not strategies:
        diags.append("strategies: at least one strategy is required")
    axis = get("axis", str, None)
    if axis is None:
        diags.append("axis: missing key")
    elif axis not in AXES:
        diags.append(f"{where('axis')}: unknown axis {axis!r}; valid: {', '.join(AXES)}")
    values = tuple(get("values", lambda s: [float(t) for t in split(s)], []))
    if not values:
        diags.append("values: at least one sweep value is required")
    elif min(values) <= 0:
        diags.append(f"{where('values')}: sweep values must be positive")
    elif list(values) != sorted(values) or len(set(values)) != len(values):
        diags.append(f"{where('values')}: sweep values must be strictly increasing")
    if axis in ("n_el", "n_ms", "coherence") and values:
        if any(v != int(v) for v in values):
            diags.append(f"{where('values')}: axis {axis} needs integer values")
        values = tuple(int(v) for v in values)

    per_ru = {}
    defaults = {"n_az": 2, "n_el": 4, "fronthaul_bits": 1.0, "power_db": 0.0, "power": 1.0}
    for key, conv in PER_RU_KEYS.items():
        vals = get(key, lambda s, c=conv: [c(t) for t in split(s)], [defaults[key]])
        if len(vals) == 1:
            vals = vals * max(n_ru, 1)
        elif len(vals) != n_ru:
            diags.append(f"{where(key)}: expected 1 or {n_ru} values, got {len(vals)}")
            vals = vals[:1] * max(n_ru, 1)
        per_ru[key] = tuple(vals)
    if "power" in pairs:
        # linear power given directly; power_db is derived from it
        if "power_db" in pairs:
            diags.append(f"{where('power')}: give either power or power_db, not both")
        if min(per_ru["power"]) <= 0:
            diags.append(f"{where('power')}: must be > 0")
            per_ru["power"] = (1.0,) * max(n_ru, 1)
        per_ru["power_db"] = tuple(10.0 * math.log10(v) for v in per_ru["power"])
    if any(not abs(v) < float("inf") for v in per_ru["power_db"]):
        diags.append(f"{where('power_db')}: must be finite")
        per_ru["power_db"] = (0.0,) * max(n_ru, 1)
    tilt = tuple(get("tilt_deg", lambda s: [float(t) for t in split(s)], [70.0, 110.0]))
    if len(tilt) != 2:
        diags.append(f"{where('tilt_deg')}: expected two values (min, max)")
        tilt = (70.0, 110.0)

    topo_kw = {}
    for key in ("side", "d0", "eta", "az_corr"):
        val = get(key, float)
        if val is not None:
            topo_kw[key] = val
    coherence = get("coherence", int, 20)
    params = TopologyParams(
        n_ru=n_ru, n_ms=n_ms, n_az=per_ru["n_az"], n_el=per_ru["n_el"],
        fronthaul_bits=per_ru["fronthaul_bits"],
        power=tuple(db_to_linear(x) for x in per_ru["power_db"]),
        coherence=coherence, tilt_deg=tilt, **topo_kw)
    try:
        params.validate()
        if axis in AXES and values:
            for v in values:
                sweep_params(params, axis, v).validate()
    except ConfigError as exc:
        key = exc.field
        if key == "power" and "power" not in pairs:
            key = "power_db"
        loc = where(key) if key in pairs else key
        diags.append(f"{loc}: {str(exc).split(': ', 1)[-1]}")

    solver_kw = {}
    for key in SOLVER_KEYS:
        conv = int if key in INT_KEYS else float
        val = get(key, conv)
        if val is not None:
            solver_kw[key] = val
    for key in ("dc_tol", "ssum_tol", "prune_tol", "mu0", "mu_warm"):
        if key in solver_kw and solver_kw[key] <= 0:
            diags.append(f"{where(key)}: must be > 0")
    for key in ("dc_max_iter", "ssum_patience", "ssum_max_outer"):
        if key in solver_kw and solver_kw[key] < 1:
            diags.append(f"{where(key)}: must be >= 1")
    if "start_scale" in solver_kw and not 0 < solver_kw["start_scale"] < 1:
        diags.append(f"{where('start_scale')}: must lie in (0, 1)")
    if "ssum_mix" in solver_kw and not 0 < solver_kw["ssum_mix"] < 1:
        diags.append(f"{where('ssum_mix')}: must lie in (0, 1)")

    n_blocks = get("n_blocks", int, 200)
    seed = get("seed", int, 1)
    workers = get("workers", int, 1)
    max_outer = get("max_outer", int, None)
    if n_blocks is not None and n_blocks < 1:
        diags.append(f"{where('n_blocks')}: must be >= 1")
    if seed is not None and seed < 0:
        diags.append(f"{where('seed')}: must be >= 0")
    if workers is not None and workers < 1:
        diags.append(f"{where('workers')}: must be >= 1")
    if max_outer is not None and max_outer < 1:
        diags.append(f"{where('max_outer')}: must be >= 1")
    if diags:
        raise ConfigDiagnostic(diags)
    return ExperimentConfig(strategies, axis, values, params, per_ru["power_db"], n_blocks,
                            seed, max_outer, workers, get("name", str, "run"),
                            StrategyConfig(**solver_kw))


def validate_config(path):
    """Diagnostics for a config file (empty list when valid); no side effects."""
    text = Path(path).read_text()
    try:
        parse_config(text)
    except ConfigDiagnostic as exc:
        return exc.diagnostics
    return []


# -- running ---------------------------------------------------------------------

class PointFailure(RuntimeError):
    pass


def _run_point(args):
    cfg, strategy, value = args
    params = sweep_params(cfg.params, cfg.axis, value)
    topo = generate_topology(params, cfg.seed)
    t0 = time.perf_counter()
    try:
        res = evaluate_ergodic(strategy, topo, cfg.n_blocks, cfg.seed, cfg.solver,
                               cfg.max_outer, axis_value=value)
    except (InfeasibleError, DomainError, FloatingPointError, ArithmeticError,
            ValueError) as exc:
        raise PointFailure(f"{strategy} at {cfg.axis} = {value}: {exc}") from None
    return res, 1000.0 * (time.perf_counter() - t0)


def run_sweep(cfg):
    """Evaluate every (strategy, sweep value); returns ({strategy: SweepResult}, timings)."""
    jobs = [(cfg, s, v) for s in cfg.strategies for v in cfg.values]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            outs = list(ex.map(_run_point, jobs))
    else:
        outs = [_run_point(job) for job in jobs]
    results = {s: SweepResult(s, cfg.axis) for s in cfg.strategies}
    timings = {s: [] for s in cfg.strategies}
    for (_, s, v), (res, ms) in zip(jobs, outs):
        results[s].points.append(res)
        timings[s].append({"axis_value": v, "wall_ms": ms})
    return results, timings


def _num(x):
    return repr(float(x))


def format_csv(sweep):
    lines = [CSV_HEADER]
    for p in sweep.points:
        lines.append(",".join([
            str(p.axis_value),
            ";".join(_num(r) for r in p.rates),
            _num(p.sum_rate),
            _num(p.se_sum_rate),
            ";".join(_num(f) for f in p.fronthaul_use),
            ";".join(_num(w) for w in p.power_use),
            str(p.n_blocks),
            str(p.seed)]))
    return "\n".join(lines) + "\n"


def read_csv(path):
    """Rows of a result CSV as dicts with numeric fields parsed."""
    text = Path(path).read_text().splitlines()
    keys = text[0].split(",")
    rows = []
    for line in text[1:]:
        row = dict(zip(keys, line.split(",")))
        for key in ("per_ms_rates", "fronthaul_use", "power_use"):
            row[key] = [float(t) for t in row[key].split(";")]
        for key in ("axis_value", "sum_rate", "se_sum_rate"):
            row[key] = float(row[key])
        row["n_blocks"], row["seed"] = int(row["n_blocks"]), int(row["seed"])
        rows.append(row)
    return rows


def write_outputs(cfg, results, timings, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for s, sweep in results.items():
        (out / f"{s}.csv").write_text(format_csv(sweep))
    sidecar = {"version": __version__, "config": cfg.to_dict()}
    (out / SIDECAR).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    (out / TIMING).write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")
    return out


def execute(cfg, out, log=print):
    results, timings = run_sweep(cfg)
    path = write_outputs(cfg, results, timings, out)
    for s, sweep in results.items():
        log(f"{s}: " + ", ".join(f"{p.axis_value}->{p.sum_rate:.4g}" for p in sweep.points))
    log(f"wrote {path}")
    return results


def load_sidecar(path):
    data = json.loads(Path(path).read_text())
    if data.get("version") != __version__:
        raise ConfigError("version", f"sidecar written by version {data.get('version')}, "
                                     f"this is {__version__}; refusing to replay")
    return ExperimentConfig.from_dict(data["config"])


def _overrides(args):
    return {"seed": args.seed, "n_blocks": args.blocks, "workers": args.workers}


def _apply(cfg, args):
    changes = {k: v for k, v in (("seed", args.seed), ("n_blocks", args.blocks),
                                 ("workers", args.workers)) if v is not None}
    return replace(cfg, **changes)


def build_parser():
    ap = argparse.ArgumentParser(prog="layered-cran", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "run the sweep described by a config file"),
                        ("validate", "check a config file and print diagnostics"),
                        ("replay", "rerun the experiment recorded in a sidecar"),
                        ("preset", "run a named figure sweep")):
        p = sub.add_parser(name, help=help_)
        if name == "preset":
            p.add_argument("target", choices=sorted(PRESETS))
        else:
            p.add_argument("target", help="config file" if name != "replay" else "run.json")
        p.add_argument("--seed", type=int)
        p.add_argument("--blocks", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--out", type=Path)
        if name == "preset":
            p.add_argument("--max-outer", type=int, dest="max_outer")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            diags = validate_config(args.target)
            for d in diags:
                print(f"{args.target}: {d}", file=sys.stderr)
            if not diags:
                print(f"{args.target}: ok")
            return 1 if diags else 0
        if args.command == "run":
            cfg = parse_config(Path(args.target).read_text(), _overrides(args))
            out = args.out or Path("results") / cfg.name
        elif args.command == "preset":
            over = _overrides(args)
            over["max_outer"] = args.max_outer
            cfg = parse_config(PRESETS[args.target], over)
            out = args.out or Path("results") / args.target
        else:
            cfg = _apply(load_sidecar(args.target), args)
            out = args.out or Path(args.target).parent / "replay"
        execute(cfg, out)
        return 0
    except ConfigDiagnostic as exc:
        for d in exc.diagnostics:
            print(f"{args.target}: {d}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"{args.target}: {exc}", file=sys.stderr)
        return 2
    except PointFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"{args.target}: {exc}", file=sys.stderr)
        return 4
