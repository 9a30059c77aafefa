"""Task and distillation losses with their logit gradients.

Probabilities are clamped to ``[1e-7, 1 - 1e-7]`` before any logarithm.
Teacher targets are constants: no gradient flows back to the teacher.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy.special import expit, logit

from crossadapt.errors import NumericError, ParameterError, ShapeError

PROB_EPS = 1e-7

FloatArray = npt.NDArray[np.float64]


def clamp_probs(p: npt.ArrayLike) -> FloatArray:
    return np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)


def _cross_entropy(p: FloatArray, target: FloatArray) -> FloatArray:
    p = clamp_probs(p)
    return -(target * np.log(p) + (1.0 - target) * np.log1p(-p))


def bce_loss(probs: npt.ArrayLike, labels: npt.ArrayLike) -> float:
    """Mean binary cross-entropy (natural log); labels may be hard or soft."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"probs shape {p.shape} != labels shape {y.shape}")
    if p.size == 0:
        raise ShapeError("bce_loss of an empty batch")
    return float(_cross_entropy(p, y).mean())


def _check_temperature(temperature: float) -> None:
    if not temperature > 0.0:
        raise ParameterError(f"temperature must be positive, got {temperature}")


def kd_loss(
    student_probs: npt.ArrayLike,
    teacher_probs: npt.ArrayLike,
    temperature: float = 1.0,
    *,
    student_logits: npt.ArrayLike | None = None,
    teacher_logits: npt.ArrayLike | None = None,
) -> float:
    """Binary cross-entropy of student against teacher probabilities.

    At ``temperature != 1`` both sides are re-derived as ``sigmoid(logit / T)``;
    logits are recovered from the probabilities when not supplied.
    """
    _check_temperature(temperature)
    ps = np.asarray(student_probs, dtype=np.float64)
    pt = np.asarray(teacher_probs, dtype=np.float64)
    if ps.shape != pt.shape:
        raise ShapeError(f"student shape {ps.shape} != teacher shape {pt.shape}")
    if temperature != 1.0:
        zs = logit(clamp_probs(ps)) if student_logits is None else np.asarray(student_logits)
        zt = logit(clamp_probs(pt)) if teacher_logits is None else np.asarray(teacher_logits)
        ps, pt = expit(zs / temperature), expit(zt / temperature)
    return float(_cross_entropy(ps, pt).mean())


@dataclass(frozen=True)
class LossTerms:
    """Logged loss components; ``total == bce + lam * kd``."""

    bce: float
    kd: float
    total: float


def distill_objective(
    logits: FloatArray,
    labels: FloatArray,
    observed: npt.NDArray[np.bool_],
    target_logits: FloatArray | None,
    lam: float,
    temperature: float,
) -> tuple[LossTerms, FloatArray]:
    """``BCE + lam * KD`` over one batch and its gradient w.r.t. the student logits.

    ``observed`` rows carry hard labels and enter the BCE term. ``target_logits``
    holds the KD target per row (teacher logits, or the logit of a pseudo-label);
    NaN entries are excluded from KD. Both terms are normalised by the full batch
    size so the gradient decomposes exactly.
    """
    _check_temperature(temperature)
    if lam < 0.0:
        raise ParameterError(f"lambda must be non-negative, got {lam}")
    n = logits.shape[0]
    if labels.shape != (n,) or observed.shape != (n,):
        raise ShapeError("labels/observed must match the number of logits")
    p = expit(logits)
    obs = observed.astype(np.float64)
    bce = float((_cross_entropy(p, labels) * obs).sum() / n)
    grad = obs * (p - labels) / n
    kd = 0.0
    if target_logits is not None:
        has_target = ~np.isnan(target_logits)
        if has_target.any():
            q = expit(np.where(has_target, target_logits, 0.0) / temperature)
            ps = expit(logits / temperature)
            mask = has_target.astype(np.float64)
            kd = float((_cross_entropy(ps, q) * mask).sum() / n)
            grad = grad + lam * mask * (ps - q) / (temperature * n)
    total = bce + lam * kd
    if not np.isfinite(total):
        raise NumericError(f"non-finite loss (bce={bce}, kd={kd})")
    return LossTerms(bce=bce, kd=kd, total=total), grad


def pseudo_label_logits(soft_label: FloatArray | None, n: int) -> FloatArray:
    """Logits of pseudo-labels, NaN on rows without one."""
    if soft_label is None:
        return np.full(n, np.nan)
    out = np.full(n, np.nan)
    has = ~np.isnan(soft_label)
    out[has] = logit(clamp_probs(soft_label[has]))
    return out
