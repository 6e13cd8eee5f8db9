"""
Dense complex matrix algebra for two-qubit density matrices.

Matrices are plain ``numpy`` arrays of dtype ``complex128``. Dimensions never
exceed 4x4, so everything here is dense and allocation-light.
"""

from __future__ import annotations

import logging
import math

import numpy as np
import numpy.typing as npt

logger = logging.getLogger(__name__)

CMatrix = npt.NDArray[np.complex128]

HERMITIAN_TOL = 1e-10
PSD_TOL = 1e-10
JACOBI_TOL = 1e-14
MAX_JACOBI_SWEEPS = 100
# Off-diagonal entries below this fraction of ||A||_F are treated as zero.
ROTATION_FLOOR = 1e-3 * np.finfo(np.float64).eps


def _frozen(values) -> CMatrix:
    matrix = np.array(values, dtype=np.complex128)
    matrix.setflags(write=False)
    return matrix


IDENTITY_2 = _frozen([[1, 0], [0, 1]])
SIGMA_X = _frozen([[0, 1], [1, 0]])
SIGMA_Y = _frozen([[0, -1j], [1j, 0]])
SIGMA_Z = _frozen([[1, 0], [0, -1]])


# -------------------------
# Construction & checks
# -------------------------


def as_cmatrix(a) -> CMatrix:
    """
    Coerce array-like input to a square complex matrix.

    Raises:
        ValueError: If the input is not a square 2D array
    """
    matrix = np.asarray(a, dtype=np.complex128)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"Expected a square matrix, got shape {matrix.shape}")
    return matrix


def hermiticity_error(a: CMatrix) -> float:
    """Largest entrywise deviation max|A - A^dagger|."""
    a = as_cmatrix(a)
    return float(np.max(np.abs(a - a.conj().T)))


def is_hermitian(a: CMatrix, tol: float = 1e-12) -> bool:
    """Check max|A - A^dagger| <= tol."""
    return hermiticity_error(a) <= tol


def dagger(a: CMatrix) -> CMatrix:
    """Conjugate transpose."""
    return as_cmatrix(a).conj().T


# -------------------------
# Products
# -------------------------


def kron(a: CMatrix, b: CMatrix) -> CMatrix:
    """
    Kronecker product with dim = a.dim * b.dim.

    Entry ((i*b.dim + k), (j*b.dim + l)) equals a[i, j] * b[k, l].
    """
    return np.kron(as_cmatrix(a), as_cmatrix(b))


def _check_same_dim(a: CMatrix, b: CMatrix, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: dimension mismatch {a.shape} vs {b.shape}")


def commutator(a: CMatrix, b: CMatrix) -> CMatrix:
    """[a, b] = ab - ba."""
    a, b = as_cmatrix(a), as_cmatrix(b)
    _check_same_dim(a, b, "commutator")
    return a @ b - b @ a


def anticommutator(a: CMatrix, b: CMatrix) -> CMatrix:
    """{a, b} = ab + ba."""
    a, b = as_cmatrix(a), as_cmatrix(b)
    _check_same_dim(a, b, "anticommutator")
    return a @ b + b @ a


# -------------------------
# Hermitian eigensolver
# -------------------------


def _off_diagonal_norm(a: CMatrix) -> float:
    return float(np.linalg.norm(a - np.diag(np.diag(a))))


def _jacobi_rotation(a: CMatrix, p: int, q: int, floor: float = 0.0) -> CMatrix | None:
    """
    Unitary J with (J^dagger A J)[p, q] = 0.

    The phase of a[p, q] is absorbed into column q first, which reduces the
    complex case to the real symmetric 2x2 rotation. Entries with magnitude
    at or below ``floor`` are left alone.
    """
    apq = a[p, q]
    r = abs(apq)
    if r <= floor:
        return None

    phase = apq / r
    app = a[p, p].real
    aqq = a[q, q].real

    tau = (aqq - app) / (2.0 * r)
    t = math.copysign(1.0, tau) / (abs(tau) + math.hypot(1.0, tau))
    c = 1.0 / math.hypot(1.0, t)
    s = t * c

    n = a.shape[0]
    rotation = np.eye(n, dtype=np.complex128)
    rotation[p, p] = c
    rotation[p, q] = s
    rotation[q, p] = -s * np.conj(phase)
    rotation[q, q] = c * np.conj(phase)
    return rotation


def hermitian_eig(a: CMatrix) -> tuple[npt.NDArray[np.float64], CMatrix]:
    """
    Eigen-decomposition of a Hermitian matrix by cyclic Jacobi rotations.

    Sweeps over all (p, q) pairs until the off-diagonal Frobenius norm drops to
    JACOBI_TOL (relative to the matrix norm when that exceeds one).

    Args:
        a: Hermitian matrix (within HERMITIAN_TOL)

    Returns:
        (eigenvalues ascending, eigenvectors as columns) with A V = V diag(w)

    Raises:
        ValueError: If the input is not Hermitian or not finite, or the
            rotations produce non-finite entries
    """
    a = as_cmatrix(a)
    if not np.isfinite(a).all():
        raise ValueError("hermitian_eig: input has non-finite entries")
    error = hermiticity_error(a)
    if error > HERMITIAN_TOL:
        raise ValueError(f"hermitian_eig: input is not Hermitian (max|A - A^dagger| = {error:.3e})")

    work = 0.5 * (a + dagger(a))
    n = work.shape[0]
    vectors = np.eye(n, dtype=np.complex128)
    scale = float(np.linalg.norm(work))
    tol = JACOBI_TOL * max(1.0, scale)
    floor = max(ROTATION_FLOOR * scale, np.finfo(np.float64).tiny)

    for _ in range(MAX_JACOBI_SWEEPS):
        if _off_diagonal_norm(work) <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                rotation = _jacobi_rotation(work, p, q, floor)
                if rotation is None:
                    continue
                work = dagger(rotation) @ work @ rotation
                work[p, q] = 0.0
                work[q, p] = 0.0
                vectors = vectors @ rotation
    else:
        logger.debug(
            f"Jacobi stopped after {MAX_JACOBI_SWEEPS} sweeps "
            f"(off-diagonal norm {_off_diagonal_norm(work):.3e})"
        )

    if not (np.isfinite(work).all() and np.isfinite(vectors).all()):
        raise ValueError("hermitian_eig: Jacobi rotations produced non-finite entries")

    eigenvalues = np.real(np.diag(work))
    order = np.argsort(eigenvalues, kind="stable")
    return eigenvalues[order], vectors[:, order]


def psd_sqrt(a: CMatrix, tol: float = PSD_TOL) -> CMatrix:
    """
    Principal square root of a positive semidefinite Hermitian matrix.

    Eigenvalues in (-tol, 0) are clamped to zero.

    Raises:
        ValueError: If an eigenvalue is below -tol
    """
    eigenvalues, vectors = hermitian_eig(a)
    if eigenvalues[0] < -tol:
        raise ValueError(
            "psd_sqrt: matrix is not positive semidefinite "
            f"(negative eigenvalue {eigenvalues[0]:.3e})"
        )
    roots = np.sqrt(np.clip(eigenvalues, 0.0, None))
    return (vectors * roots) @ dagger(vectors)
