"""Dimension-adaptive embedding-table transfer.

Three cases, chosen by comparing the student dimension ``d_S`` with the
teacher dimension ``d_T``:

* ``COPY``   (``d_S == d_T``): the table is reused verbatim.
* ``EXPAND`` (``d_S > d_T``): ``W = Q[:, :d_T].T`` from the QR factor of a
  seeded ``d_S x d_S`` Gaussian; ``W @ W.T = I`` so every inner product
  survives exactly.
* ``REDUCE`` (``d_S < d_T``): ``W`` holds the top ``d_S`` eigenvectors of the
  centred covariance ``C = E_bar.T @ E_bar / V``. The Gram distortion of the
  centred table is then ``V**2 * sum(lambda_k**2 for k > d_S)``, the minimum
  over all rank-``d_S`` orthogonal projections.

The projected table is always ``E_T @ W``; the mean is projected along with
the rows, so ``E_bar @ W + 1 (mu @ W)`` and ``E_T @ W`` coincide.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Literal

import numpy as np
import numpy.typing as npt

from crossadapt.errors import ContractError, ParameterError, ShapeError
from crossadapt.kernels.linalg import (
    EigenResult,
    Matrix,
    as_matrix,
    gaussian_matrix,
    orthonormal_columns,
    qr_decompose,
    sym_eig,
)
from crossadapt.model.checkpoint import EncodedArray

logger = logging.getLogger(__name__)


class ProjectionKind(str, Enum):
    COPY = "copy"
    EXPAND = "expand"
    REDUCE = "reduce"


@dataclass(frozen=True)
class ProjectionPlan:
    """A replayable mapping from a ``d_T``-wide table to a ``d_S``-wide one."""

    kind: ProjectionKind
    d_T: int
    d_S: int
    seed: int
    W: Matrix | None = None
    mean: npt.NDArray[np.float64] | None = None
    eigenvalues: npt.NDArray[np.float64] | None = None
    retained_variance: float | None = None

    def to_dict(self) -> dict[str, Any]:
        def enc(a: np.ndarray | None) -> dict[str, Any] | None:
            return None if a is None else EncodedArray.encode(a).model_dump()

        return {
            "kind": self.kind.value,
            "d_T": self.d_T,
            "d_S": self.d_S,
            "seed": self.seed,
            "W": enc(self.W),
            "mean": enc(self.mean),
            "eigenvalues": enc(self.eigenvalues),
            "retained_variance": self.retained_variance,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ProjectionPlan:
        def dec(v: dict[str, Any] | None) -> np.ndarray | None:
            return None if v is None else EncodedArray.model_validate(v).decode()

        return cls(
            kind=ProjectionKind(data["kind"]),
            d_T=int(data["d_T"]),
            d_S=int(data["d_S"]),
            seed=int(data["seed"]),
            W=dec(data.get("W")),
            mean=dec(data.get("mean")),
            eigenvalues=dec(data.get("eigenvalues")),
            retained_variance=data.get("retained_variance"),
        )


def _centre(table: Matrix) -> tuple[Matrix, npt.NDArray[np.float64]]:
    mu = table.mean(axis=0)
    return table - mu[np.newaxis, :], mu


def spectrum(
    teacher_table: npt.ArrayLike, *, method: Literal["lapack", "jacobi"] = "lapack"
) -> EigenResult:
    """Eigen-decomposition of the centred covariance ``E_bar.T @ E_bar / V``."""
    table = as_matrix(teacher_table, name="teacher table")
    centred, _ = _centre(table)
    cov = centred.T @ centred / table.shape[0]
    return sym_eig(cov, method=method)


def _retained(eigenvalues: npt.NDArray[np.float64], k: int) -> float:
    lam = np.clip(eigenvalues, 0.0, None)
    total = lam.sum()
    return 1.0 if total <= 0.0 else float(lam[:k].sum() / total)


def build_plan(
    teacher_table: npt.ArrayLike,
    d_S: int,
    seed: int = 0,
    *,
    method: Literal["lapack", "jacobi"] = "lapack",
) -> ProjectionPlan:
    """Select the projection case for ``d_S`` and compute its matrix.

    Costs one ``d_T x d_T`` eigendecomposition (Reduce) or one ``d_S x d_S``
    QR (Expand); no per-row optimisation.
    """
    table = as_matrix(teacher_table, name="teacher table")
    if table.shape[0] < 1:
        raise ShapeError("teacher table has no rows")
    if d_S < 1:
        raise ParameterError(f"d_S must be >= 1, got {d_S}")
    d_T = table.shape[1]
    if d_S == d_T:
        plan = ProjectionPlan(kind=ProjectionKind.COPY, d_T=d_T, d_S=d_S, seed=seed)
    elif d_S > d_T:
        q, _ = qr_decompose(gaussian_matrix(d_S, d_S, seed))
        plan = ProjectionPlan(
            kind=ProjectionKind.EXPAND, d_T=d_T, d_S=d_S, seed=seed, W=q[:, :d_T].T.copy()
        )
    else:
        centred, mu = _centre(table)
        eig = sym_eig(centred.T @ centred / table.shape[0], method=method)
        plan = ProjectionPlan(
            kind=ProjectionKind.REDUCE,
            d_T=d_T,
            d_S=d_S,
            seed=seed,
            W=eig.eigenvectors[:, :d_S].copy(),
            mean=mu,
            eigenvalues=eig.eigenvalues.copy(),
            retained_variance=_retained(eig.eigenvalues, d_S),
        )
    logger.info(
        "Projection plan %s: d_T=%d -> d_S=%d%s",
        plan.kind.value,
        d_T,
        d_S,
        "" if plan.retained_variance is None else f" (retained {plan.retained_variance:.4f})",
    )
    return plan


def apply_plan(teacher_table: npt.ArrayLike, plan: ProjectionPlan) -> Matrix:
    """Project a teacher table into the student dimension: ``E_S = E_T @ W``."""
    table = np.asarray(teacher_table, dtype=np.float64)
    if table.ndim != 2 or table.shape[1] != plan.d_T:
        raise ShapeError(f"table shape {table.shape} does not match plan d_T={plan.d_T}")
    if plan.kind == ProjectionKind.COPY:
        return table.copy()
    return table @ plan.W


def gram_distortion(teacher_table: npt.ArrayLike, W: npt.ArrayLike) -> float:
    """``||E_bar E_bar^T - E_bar W W^T E_bar^T||_F^2`` computed from the V x V Grams."""
    table = as_matrix(teacher_table, name="teacher table")
    w = np.asarray(W, dtype=np.float64)
    if w.shape[0] != table.shape[1]:
        raise ShapeError(f"W has {w.shape[0]} rows, table has {table.shape[1]} columns")
    centred, _ = _centre(table)
    projected = centred @ w
    diff = centred @ centred.T - projected @ projected.T
    return float(np.sum(diff * diff))


def gram_error(teacher_table: npt.ArrayLike, plan: ProjectionPlan) -> tuple[float, float]:
    """Measured and predicted Gram distortion of a Reduce plan."""
    if plan.kind != ProjectionKind.REDUCE:
        raise ContractError(f"gram_error needs a reduce plan, got {plan.kind.value}")
    table = as_matrix(teacher_table, name="teacher table")
    measured = gram_distortion(table, plan.W)
    v = table.shape[0]
    tail = plan.eigenvalues[plan.d_S :]
    predicted = float(v * v * np.sum(tail * tail))
    return measured, predicted


def random_projection_baseline(
    teacher_table: npt.ArrayLike, d_S: int, trials: int, seed: int = 0
) -> list[float]:
    """Gram distortion of ``trials`` random orthonormal ``d_T x d_S`` projections."""
    table = as_matrix(teacher_table, name="teacher table")
    d_T = table.shape[1]
    if not 1 <= d_S < d_T:
        raise ParameterError(f"baseline needs 1 <= d_S < d_T={d_T}, got {d_S}")
    if trials < 1:
        raise ParameterError(f"trials must be >= 1, got {trials}")
    seeds = np.random.SeedSequence(seed).generate_state(trials)
    return [
        gram_distortion(table, orthonormal_columns(d_T, d_S, int(s))) for s in seeds
    ]


def choose_reduced_dim(teacher_table: npt.ArrayLike, min_retained_variance: float) -> int:
    """Smallest ``d_S`` whose leading eigenvalues retain the requested variance share."""
    if not 0.0 < min_retained_variance <= 1.0:
        raise ParameterError(
            f"min_retained_variance must be in (0, 1], got {min_retained_variance}"
        )
    eig = spectrum(teacher_table)
    for k in range(1, eig.eigenvalues.shape[0] + 1):
        if _retained(eig.eigenvalues, k) >= min_retained_variance - 1e-12:
            return k
    return int(eig.eigenvalues.shape[0])


def project_model_table(
    teacher_table: npt.ArrayLike, d_S: int, seed: int = 0
) -> tuple[Matrix, ProjectionPlan]:
    """Build a plan and apply it in one call."""
    plan = build_plan(teacher_table, d_S, seed)
    return apply_plan(teacher_table, plan), plan
