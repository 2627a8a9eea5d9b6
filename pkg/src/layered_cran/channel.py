"""Topologies and Kronecker-structured FD-MIMO channels.

Each (MS j, RU i) link is h_ji = sqrt(alpha_ji) * kron(h^A_ji, u^E_ji): the
elevation direction u^E_ji and path gain alpha_ji are drawn once per long-term
state, the azimuth fading h^A_ji ~ CN(0, R^A_ji) is redrawn every coherence
block.

Random draws come from per-link substreams keyed on (seed, stream, indices), so
sweeping N_E, N_M or T keeps the shared links identical across sweep points.
"""
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import numerics as nx
from .errors import ConfigError, DomainError

STREAMS = {"topology": 1, "longterm": 2, "train": 3, "eval": 4}


def substream(seed, stream, *index):
    """Independent generator for ``(seed, stream, *index)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAMS[stream], *map(int, index)))
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class TopologyParams:
    n_ru: int = 2
    n_ms: int = 2
    n_az: tuple = (2, 2)
    n_el: tuple = (4, 4)
    side: float = 500.0
    d0: float = 50.0
    eta: float = 3.0
    fronthaul_bits: tuple = (1.0, 1.0)
    power: tuple = (1.0, 1.0)
    coherence: int = 20
    az_corr: float = 0.5
    tilt_deg: tuple = (70.0, 110.0)

    def validate(self):
        for name in ("n_ru", "n_ms", "coherence"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(name, "must be >= 1")
        per_ru = {"n_az": self.n_az, "n_el": self.n_el,
                  "fronthaul_bits": self.fronthaul_bits, "power": self.power}
        for name, vals in per_ru.items():
            if len(vals) != self.n_ru:
                raise ConfigError(name, f"expected {self.n_ru} per-RU values, got {len(vals)}")
        if min(self.n_az) < 1:
            raise ConfigError("n_az", "antenna counts must be >= 1")
        if min(self.n_el) < 1:
            raise ConfigError("n_el", "antenna counts must be >= 1")
        if min(self.fronthaul_bits) < 0:
            raise ConfigError("fronthaul_bits", "must be >= 0")
        if min(self.power) <= 0:
            raise ConfigError("power", "must be > 0")
        if self.side <= 0:
            raise ConfigError("side", "must be > 0")
        if self.d0 <= 0:
            raise ConfigError("d0", "must be > 0")
        if self.eta <= 0:
            raise ConfigError("eta", "must be > 0")
        if not -1.0 < self.az_corr < 1.0:
            raise ConfigError("az_corr", "must lie in (-1, 1)")
        lo, hi = self.tilt_deg
        if not 0.0 <= lo <= hi <= 180.0:
            raise ConfigError("tilt_deg", "need 0 <= min <= max <= 180")
        return self

    @classmethod
    def uniform(cls, n_ru, n_ms, n_az, n_el, fronthaul_bits, power, **kw):
        """Same antenna counts and budgets at every RU."""
        return cls(n_ru=n_ru, n_ms=n_ms, n_az=(n_az,) * n_ru, n_el=(n_el,) * n_ru,
                   fronthaul_bits=(float(fronthaul_bits),) * n_ru,
                   power=(float(power),) * n_ru, **kw)


@dataclass(frozen=True)
class Topology:
    params: TopologyParams
    ru_pos: np.ndarray
    ms_pos: np.ndarray
    rng_seed: int

    @property
    def n_ru(self):
        return self.params.n_ru

    @property
    def n_ms(self):
        return self.params.n_ms

    @property
    def n_az(self):
        return self.params.n_az

    @property
    def n_el(self):
        return self.params.n_el

    @property
    def fronthaul_nats(self):
        return tuple(c * np.log(2.0) for c in self.params.fronthaul_bits)

    @property
    def power(self):
        return self.params.power

    @property
    def coherence(self):
        return self.params.coherence

    def distances(self):
        diff = self.ms_pos[:, None, :] - self.ru_pos[None, :, :]
        return np.linalg.norm(diff, axis=-1)

    def with_params(self, **changes):
        """Same positions and seed, different non-geometric parameters."""
        p = replace(self.params, **changes).validate()
        if p.n_ru != self.n_ru or p.n_ms != self.n_ms:
            raise ConfigError("n_ru/n_ms", "cannot change node counts of a placed topology")
        return replace(self, params=p)


def generate_topology(params, rng_seed):
    """Place RUs and MSs uniformly at random in the square [0, side]^2."""
    params.validate()
    side = params.side
    ru = np.array([substream(rng_seed, "topology", 0, i).uniform(0.0, side, 2)
                   for i in range(params.n_ru)])
    ms = np.array([substream(rng_seed, "topology", 1, j).uniform(0.0, side, 2)
                   for j in range(params.n_ms)])
    return Topology(params=params, ru_pos=ru, ms_pos=ms, rng_seed=int(rng_seed))


def path_loss(d, d0, eta):
    d = np.asarray(d, dtype=float)
    if np.any(d < 0) or d0 <= 0:
        raise DomainError("path_loss needs d >= 0 and d0 > 0")
    out = 1.0 / (1.0 + (d / d0) ** eta)
    return float(out) if out.ndim == 0 else out


def exp_correlation(n, rho):
    idx = np.arange(n)
    return rho ** np.abs(idx[:, None] - idx[None, :]).astype(float) + 0j


def steering_vector(n, theta):
    """Unit-norm ULA response for tilt angle ``theta`` (radians), half-wavelength spacing."""
    return np.exp(1j * np.pi * np.cos(theta) * np.arange(n)) / np.sqrt(n)


@dataclass(frozen=True)
class LongTermChannelState:
    topology: Topology
    alpha: np.ndarray          # (n_ms, n_ru)
    theta: np.ndarray          # (n_ms, n_ru), radians
    u_el: tuple                # u_el[j][i], unit vectors of length n_el[i]
    r_az: tuple                # r_az[j][i]
    r_az_sqrt: tuple = field(repr=False, default=())

    @property
    def lambda_el(self):
        # the elevation gain in the rate expressions reduces to the path gain
        return self.alpha


def draw_long_term_state(topology, seed=None):
    """Path gains, fixed elevation directions and azimuth correlation matrices."""
    seed = topology.rng_seed if seed is None else seed
    p = topology.params
    alpha = path_loss(topology.distances(), p.d0, p.eta)
    lo, hi = np.deg2rad(p.tilt_deg)
    theta = np.array([[substream(seed, "longterm", j, i).uniform(lo, hi)
                       for i in range(p.n_ru)] for j in range(p.n_ms)])
    u_el = tuple(tuple(steering_vector(p.n_el[i], theta[j, i]) for i in range(p.n_ru))
                 for j in range(p.n_ms))
    r_az = tuple(tuple(exp_correlation(p.n_az[i], p.az_corr) for i in range(p.n_ru))
                 for j in range(p.n_ms))
    r_sqrt = tuple(tuple(nx.sqrtm_psd(r) for r in row) for row in r_az)
    return LongTermChannelState(topology, np.atleast_2d(alpha), theta, u_el, r_az, r_sqrt)


@dataclass(frozen=True)
class ChannelRealization:
    """Everything the rate expressions need for one coherence block.

    ``lam[j, i]`` multiplies the elevation gain, ``h_az[j][i]`` enters the
    quadratic forms and ``h_norm2[j, i]`` scales the compression-noise terms.
    Conventional strategies build realizations whose ``h_az`` is the full
    (possibly subspace-reduced) channel and whose ``u_el`` is trivial.
    """
    h_az: tuple
    u_el: tuple
    lam: np.ndarray
    h_norm2: np.ndarray
    block_index: int = 0

    @property
    def n_ms(self):
        return len(self.h_az)

    @property
    def n_ru(self):
        return len(self.h_az[0])


def draw_block(state, block_index, seed=None, stream="train"):
    """Azimuth fading for one coherence block; elevation state is reused as is."""
    topo = state.topology
    seed = topo.rng_seed if seed is None else seed
    h = []
    for j in range(topo.n_ms):
        row = []
        for i in range(topo.n_ru):
            rng = substream(seed, stream, block_index, j, i)
            n = topo.n_az[i]
            g = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
            row.append(state.r_az_sqrt[j][i] @ g)
        h.append(tuple(row))
    h = tuple(h)
    norms = np.array([[np.vdot(x, x).real for x in row] for row in h])
    return ChannelRealization(h, state.u_el, state.lambda_el, norms, int(block_index))


def full_channel(state, realization, j, i):
    if not (0 <= j < realization.n_ms and 0 <= i < realization.n_ru):
        raise DomainError(f"link index ({j}, {i}) out of range")
    return np.sqrt(state.alpha[j, i]) * np.kron(realization.h_az[j][i], state.u_el[j][i])


# -- key/value serialization --------------------------------------------------

def _fmt(x):
    return repr(float(x))


def topology_to_text(topo):
    p = topo.params
    lines = [
        f"n_ru = {p.n_ru}",
        f"n_ms = {p.n_ms}",
        "n_az = " + ", ".join(str(v) for v in p.n_az),
        "n_el = " + ", ".join(str(v) for v in p.n_el),
        f"side = {_fmt(p.side)}",
        f"d0 = {_fmt(p.d0)}",
        f"eta = {_fmt(p.eta)}",
        "fronthaul_bits = " + ", ".join(_fmt(v) for v in p.fronthaul_bits),
        "power = " + ", ".join(_fmt(v) for v in p.power),
        f"coherence = {p.coherence}",
        f"az_corr = {_fmt(p.az_corr)}",
        f"tilt_deg = {_fmt(p.tilt_deg[0])}, {_fmt(p.tilt_deg[1])}",
        f"seed = {topo.rng_seed}",
        "ru_pos = " + "; ".join(f"{_fmt(x)} {_fmt(y)}" for x, y in topo.ru_pos),
        "ms_pos = " + "; ".join(f"{_fmt(x)} {_fmt(y)}" for x, y in topo.ms_pos),
    ]
    return "\n".join(lines) + "\n"


def topology_from_text(text):
    kv = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(line, "expected 'key = value'")
        kv[key.strip()] = value.strip()

    def nums(key, conv=float):
        return tuple(conv(v) for v in kv[key].split(","))

    def pos(key):
        return np.array([[float(t) for t in pair.split()] for pair in kv[key].split(";")])

    try:
        params = TopologyParams(
            n_ru=int(kv["n_ru"]), n_ms=int(kv["n_ms"]), n_az=nums("n_az", int),
            n_el=nums("n_el", int), side=float(kv["side"]), d0=float(kv["d0"]),
            eta=float(kv["eta"]), fronthaul_bits=nums("fronthaul_bits"), power=nums("power"),
            coherence=int(kv["coherence"]), az_corr=float(kv["az_corr"]),
            tilt_deg=nums("tilt_deg")).validate()
        topo = Topology(params, pos("ru_pos"), pos("ms_pos"), int(kv["seed"]))
    except KeyError as exc:
        raise ConfigError(exc.args[0], "missing key") from None
    if topo.ru_pos.shape != (params.n_ru, 2) or topo.ms_pos.shape != (params.n_ms, 2):
        raise ConfigError("ru_pos/ms_pos", "position count does not match n_ru/n_ms")
    for name, arr in (("ru_pos", topo.ru_pos), ("ms_pos", topo.ms_pos)):
        if np.any(arr < 0) or np.any(arr > params.side):
            raise ConfigError(name, "positions must lie inside [0, side]^2")
    return topo


TOPOLOGY_FIELDS = tuple(f.name for f in fields(TopologyParams))
