"""Small dense complex linear algebra used throughout the package.

All matrices here are tiny (dimension <= 32), so everything is plain numpy.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class Tolerances:
    symmetry: float = 1e-9
    residual: float = 1e-9
    psd_clamp: float = 1e-12
    imag: float = 1e-10
    phase: float = 1e-9


TOL = Tolerances()


def kron(a, b):
    a = np.atleast_2d(np.asarray(a))
    b = np.atleast_2d(np.asarray(b))
    if a.size == 0 or b.size == 0:
        raise DomainError("kron of an empty matrix")
    return np.kron(a, b)


def check_hermitian(m, tol=TOL.symmetry):
    m = np.atleast_2d(np.asarray(m, dtype=complex))
    if m.shape[0] != m.shape[1]:
        raise DomainError(f"matrix is not square: {m.shape}")
    resid = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
    if resid > tol * max(1.0, np.max(np.abs(m))):
        raise DomainError(f"matrix is not Hermitian (residual {resid:.3e})")
    return m


def hermitize(m):
    m = np.asarray(m)
    return 0.5 * (m + m.conj().T)


def fix_phase(v, tol=TOL.phase):
    """Rotate ``v`` so its first non-negligible entry is real and >= 0."""
    v = np.asarray(v, dtype=complex)
    idx = np.flatnonzero(np.abs(v) > tol)
    if idx.size == 0:
        return v
    lead = v[idx[0]]
    return v * (np.abs(lead) / lead)


def eigh(m):
    """Hermitian eigendecomposition with ascending real eigenvalues."""
    m = check_hermitian(m)
    w, u = np.linalg.eigh(hermitize(m))
    return w, u


def principal_eigvec(m):
    """Largest eigenvalue and its unit eigenvector under the phase convention."""
    w, u = eigh(m)
    v = fix_phase(u[:, -1])
    v = v / np.linalg.norm(v)
    return float(w[-1]), v


def project_psd(m):
    """Nearest PSD matrix in Frobenius norm (negative eigenvalues set to zero)."""
    w, u = eigh(m)
    w = np.where(w > 0, w, 0.0)
    return hermitize((u * w) @ u.conj().T)


def sqrtm_psd(m):
    w, u = eigh(m)
    w = np.sqrt(np.clip(w, 0.0, None))
    return (u * w) @ u.conj().T


def quad_form(v, m):
    """Real value of v^H m v."""
    v = np.asarray(v)
    if v.ndim != 1:
        v = v.ravel()
    m = np.asarray(m)
    if m.ndim != 2:
        m = np.atleast_2d(m)
    if m.shape != (v.size, v.size):
        raise DomainError(f"dimension mismatch: vector {v.size}, matrix {m.shape}")
    q = complex(np.vdot(v, m.dot(v)))
    if abs(q.imag) > TOL.imag * max(1.0, abs(q.real)):
        raise DomainError(f"quadratic form has imaginary part {q.imag:.3e}")
    return q.real


def logdet_pd(m, min_eig=1e-10):
    """log det of a positive definite Hermitian matrix (natural log)."""
    w, _ = eigh(m)
    if w[0] <= min_eig:
        raise DomainError(f"matrix is not positive definite (min eigenvalue {w[0]:.3e})")
    return float(np.sum(np.log(w)))


def min_eig(m):
    return float(np.linalg.eigvalsh(hermitize(np.atleast_2d(m)))[0])
