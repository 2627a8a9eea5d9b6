import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from layered_cran import numerics as nx
from layered_cran.errors import DomainError

from conftest import random_psd, random_unit


def herm(rng, n):
    g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return g + g.conj().T


def test_kron_identity_block_diagonal(rng):
    b = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    k = nx.kron(np.eye(2), b)
    assert np.allclose(k[:2, :2], b) and np.allclose(k[2:, 2:], b)
    assert np.allclose(k[:2, 2:], 0) and np.allclose(k[2:, :2], 0)


def test_kron_index_layout(rng):
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((3, 2))
    k = nx.kron(a, b)
    assert k.shape == (6, 6)
    assert k[1 * 3 + 2, 2 * 2 + 1] == a[1, 2] * b[2, 1]


def test_kron_empty_rejected():
    with pytest.raises(DomainError):
        nx.kron(np.zeros((0, 0)), np.eye(2))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 4), m=st.integers(1, 4))
def test_kron_mixed_product(seed, n, m):
    rng = np.random.default_rng(seed)
    a, c = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)) for _ in range(2))
    b, d = (rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m)) for _ in range(2))
    lhs = nx.kron(a, b) @ nx.kron(c, d)
    rhs = nx.kron(a @ c, b @ d)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.max(np.abs(rhs)))


def test_kron_trace(rng):
    a, b = herm(rng, 3), herm(rng, 3)
    assert np.isclose(np.trace(nx.kron(a, b)), np.trace(a) * np.trace(b))


def test_principal_eigvec_diagonal():
    lam, v = nx.principal_eigvec(np.diag([1.0, 3.0]))
    assert lam == pytest.approx(3.0)
    assert np.allclose(v, [0, 1])


def test_principal_eigvec_two_by_two():
    lam, v = nx.principal_eigvec(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert lam == pytest.approx(3.0)
    assert np.allclose(v, np.array([1, 1]) / np.sqrt(2))


def test_principal_eigvec_rank_one(rng):
    u = random_unit(rng, 4)
    lam, v = nx.principal_eigvec(np.outer(u, u.conj()))
    assert lam == pytest.approx(1.0)
    assert np.allclose(v, nx.fix_phase(u))
    assert v[0].real >= 0 and abs(v[0].imag) < 1e-12


def test_principal_eigvec_rejects_non_hermitian():
    with pytest.raises(DomainError):
        nx.principal_eigvec(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_principal_eigvec_residual_sweep(rng):
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        m = herm(rng, n)
        lam, v = nx.principal_eigvec(m)
        assert np.linalg.norm(m @ v - lam * v) <= 1e-9 * max(1.0, abs(lam))
        assert abs(np.linalg.norm(v) - 1) < 1e-12
        lam2, v2 = nx.principal_eigvec(m)
        assert lam2 == lam and np.array_equal(v, v2)


def test_project_psd_fixed_point(rng):
    m = random_psd(rng, 3)
    assert np.max(np.abs(nx.project_psd(m) - m)) < 1e-12


def test_project_psd_clamp():
    assert np.allclose(nx.project_psd(np.diag([1.0, -2.0])), np.diag([1.0, 0.0]))


def test_project_psd_is_nearest(rng):
    for _ in range(20):
        m = herm(rng, 4)
        p = nx.project_psd(m)
        assert nx.min_eig(p) >= -1e-12
        w, u = np.linalg.eigh(m)
        oracle = (u * np.clip(w, 0, None)) @ u.conj().T
        assert np.allclose(p, oracle, atol=1e-12)
        # any other PSD candidate is no closer
        q = random_psd(rng, 4, np.real(np.trace(p)) + 0.1)
        assert np.linalg.norm(m - p) <= np.linalg.norm(m - q) + 1e-12


def test_quad_form_examples(rng):
    u = random_unit(rng, 3)
    assert nx.quad_form(u, np.eye(3)) == pytest.approx(1.0)
    assert nx.quad_form([1, 0], np.diag([4.0, 7.0])) == 4.0
    v, w = random_unit(rng, 3), rng.standard_normal(3) + 1j * rng.standard_normal(3)
    assert nx.quad_form(v, np.outer(w, w.conj())) == pytest.approx(abs(np.vdot(v, w)) ** 2)


def test_quad_form_dimension_mismatch():
    with pytest.raises(DomainError):
        nx.quad_form([1, 0, 0], np.eye(2))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 6))
def test_quad_form_nonnegative_on_psd(seed, n):
    rng = np.random.default_rng(seed)
    p = nx.project_psd(herm(rng, n))
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    assert nx.quad_form(v, p) >= -1e-10


def test_logdet_pd(rng):
    m = random_psd(rng, 3) + 0.1 * np.eye(3)
    assert nx.logdet_pd(m) == pytest.approx(np.log(np.linalg.det(m).real))
    with pytest.raises(DomainError):
        nx.logdet_pd(np.diag([1.0, 0.0]))
