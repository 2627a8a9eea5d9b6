import numpy as np
import pytest

from layered_cran import surrogates as sg
from layered_cran.channel import ChannelRealization

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_psd(rng, n, scale=1.0, rank=None):
    rank = n if rank is None else rank
    g = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    m = g @ g.conj().T
    return scale * m / max(np.real(np.trace(m)), 1e-300)


def random_unit(rng, n):
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return v / np.linalg.norm(v)


def random_realization(rng, n_ms, n_ru, n_az, n_el, gain=(0.05, 1.0)):
    h = tuple(tuple(rng.standard_normal(n_az) + 1j * rng.standard_normal(n_az)
                    for _ in range(n_ru)) for _ in range(n_ms))
    u = tuple(tuple(random_unit(rng, n_el) for _ in range(n_ru)) for _ in range(n_ms))
    lam = rng.uniform(*gain, size=(n_ms, n_ru))
    norms = np.array([[np.vdot(x, x).real for x in row] for row in h])
    return ChannelRealization(h, u, lam, norms)


def random_cov(rng, n_ms, n_ru, n_az, n_el, mode, trace_el=1.0, power=1.0):
    v_az = {(k, i): random_psd(rng, n_az, rng.uniform(0.05, power))
            for k in range(n_ms) for i in range(n_ru)}
    v_el = {(k, i): random_psd(rng, n_el, trace_el)
            for k in range(n_ms) for i in range(n_ru)}
    cov = sg.CovarianceSet(v_az, v_el)
    if mode == sg.CAP:
        cov.sigma_pair = {(k, i): rng.uniform(0.01, 1.0) for k in range(n_ms) for i in range(n_ru)}
    else:
        cov.sigma_ru = {i: rng.uniform(0.01, 1.0) for i in range(n_ru)}
    return cov


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
