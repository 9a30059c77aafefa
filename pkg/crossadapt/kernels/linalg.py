"""Deterministic dense kernels: QR, symmetric eigendecomposition, Gaussian draws.

All matrices are 64-bit numpy arrays. Random draws come from numpy's
``Generator`` over the PCG64 bit generator (``numpy.random.default_rng``),
which is the documented PRNG for every seeded operation in crossadapt.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import numpy.typing as npt

from crossadapt.errors import DimensionError, ShapeError

Matrix = npt.NDArray[np.float64]

SYMMETRY_TOL = 1e-9
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


@dataclass(frozen=True)
class EigenResult:
    """Eigenvalues in descending order with matching unit eigenvector columns."""

    eigenvalues: npt.NDArray[np.float64]
    eigenvectors: Matrix


def as_matrix(data: npt.ArrayLike, *, name: str = "matrix") -> Matrix:
    """Return ``data`` as a finite, read-only 2-D float64 array."""
    m = np.array(data, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ShapeError(f"{name} contains non-finite entries")
    m.setflags(write=False)
    return m


def _require_square(m: Matrix, op: str) -> None:
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"{op} needs a square matrix, got {m.shape[0]}x{m.shape[1]}")


def qr_decompose(m: npt.ArrayLike) -> tuple[Matrix, Matrix]:
    """Householder QR of a square matrix with a non-negative diagonal on ``r``.

    LAPACK's ``geqrf`` (Householder reflections) does the factorisation; signs
    are then normalised so that ``r[i, i] >= 0``, which makes the result unique
    for full-rank input and reproducible in tests.
    """
    a = as_matrix(m, name="qr input")
    _require_square(a, "qr_decompose")
    q, r = np.linalg.qr(a, mode="complete")
    signs = np.where(np.diag(r) < 0.0, -1.0, 1.0)
    q = q * signs[np.newaxis, :]
    r = r * signs[:, np.newaxis]
    return q, np.triu(r)


def _orient(vectors: Matrix) -> Matrix:
    """Flip each column so its first non-negligible component is positive."""
    out = vectors.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0.0:
            out[:, j] = -col
    return out


def _jacobi(c: Matrix) -> tuple[npt.NDArray[np.float64], Matrix]:
    a = np.array(c, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(JACOBI_MAX_SWEEPS):
        if np.sqrt(np.sum(np.tril(a, -1) ** 2)) < JACOBI_TOL:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                cos = 1.0 / np.sqrt(t * t + 1.0)
                sin = t * cos
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p], a[:, q] = cos * ap - sin * aq, sin * ap + cos * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :], a[q, :] = cos * ap - sin * aq, sin * ap + cos * aq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p], v[:, q] = cos * vp - sin * vq, sin * vp + cos * vq
    return np.diag(a).copy(), v


def sym_eig(
    c: npt.ArrayLike,
    *,
    method: Literal["lapack", "jacobi"] = "lapack",
) -> EigenResult:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    ``method="lapack"`` uses ``numpy.linalg.eigh``; ``method="jacobi"`` runs
    cyclic Jacobi rotations until the off-diagonal norm drops below 1e-12 or
    100 sweeps elapse. Eigenvector columns are oriented so their first
    non-negligible entry is positive. Tied eigenvalues keep solver order and
    their basis is not unique.
    """
    a = as_matrix(c, name="eigen input")
    _require_square(a, "sym_eig")
    if not np.allclose(a, a.T, rtol=0.0, atol=SYMMETRY_TOL):
        raise ShapeError("sym_eig input is not symmetric within 1e-9")
    sym = 0.5 * (a + a.T)
    if method == "lapack":
        values, vectors = np.linalg.eigh(sym)
    elif method == "jacobi":
        values, vectors = _jacobi(sym)
    else:
        raise ValueError(f"Unknown eigen method: {method}")
    order = np.argsort(-values, kind="stable")
    return EigenResult(
        eigenvalues=values[order],
        eigenvectors=_orient(vectors[:, order]),
    )


def gaussian_matrix(rows: int, cols: int, seed: int) -> Matrix:
    """Draw a ``rows x cols`` matrix of i.i.d. standard normals from PCG64(seed)."""
    if rows < 1 or cols < 1:
        raise DimensionError(f"gaussian_matrix needs positive dimensions, got {rows}x{cols}")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((rows, cols))


def orthonormal_columns(rows: int, cols: int, seed: int) -> Matrix:
    """Random ``rows x cols`` matrix with orthonormal columns (``cols <= rows``)."""
    if cols > rows:
        raise DimensionError(f"cannot fit {cols} orthonormal columns in dimension {rows}")
    q, _ = qr_decompose(gaussian_matrix(rows, rows, seed))
    return q[:, :cols]
