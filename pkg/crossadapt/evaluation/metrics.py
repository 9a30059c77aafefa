"""Evaluation metrics, run reports and the switching-cost decomposition."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from pathlib import Path

import numpy as np
import numpy.typing as npt
import pandas as pd
from pydantic import BaseModel, Field
from scipy.stats import rankdata, spearmanr

from crossadapt.data.schema import SampleBatch
from crossadapt.errors import ContractError, MetricUndefinedError, ParameterError, ShapeError
from crossadapt.model.core import PredictionModel, predict
from crossadapt.model.losses import bce_loss

logger = logging.getLogger(__name__)

DEFAULT_NDCG_KS = (5, 10)


def _pair(a: npt.ArrayLike, b: npt.ArrayLike) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(b, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"length mismatch: {x.size} vs {y.size}")
    return x, y


def auc(preds: npt.ArrayLike, labels: npt.ArrayLike) -> float:
    """Rank-based ROC AUC; a positive tied with a negative counts one half."""
    p, y = _pair(preds, labels)
    pos = y >= 0.5
    n_pos = int(pos.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("AUC needs both positive and negative labels")
    ranks = rankdata(p, method="average")
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def logloss(preds: npt.ArrayLike, labels: npt.ArrayLike) -> float:
    return bce_loss(*_pair(preds, labels))


class BiasBreakdown(BaseModel):
    bias: float
    n_items: int = Field(..., description="Items included in the mean")
    n_excluded: int = Field(..., description="Items dropped for a zero actual rate")


def pcvr_bias_detail(
    preds: npt.ArrayLike,
    actuals: npt.ArrayLike,
    items: npt.ArrayLike | None = None,
) -> BiasBreakdown:
    """Mean absolute relative deviation of predicted from actual rates per item.

    Without ``items`` each position is already one item's (predicted, actual)
    rate pair. With ``items`` the rates are per-item means of row predictions
    and row outcomes.
    """
    p, a = _pair(preds, actuals)
    if items is not None:
        frame = pd.DataFrame({"item": np.asarray(items), "pred": p, "actual": a})
        grouped = frame.groupby("item", sort=True)[["pred", "actual"]].mean()
        p, a = grouped["pred"].to_numpy(), grouped["actual"].to_numpy()
    keep = a > 0.0
    n_excluded = int((~keep).sum())
    if n_excluded:
        logger.warning("pCVR bias: excluded %d items with zero actual rate", n_excluded)
    if not keep.any():
        raise MetricUndefinedError("pCVR bias has no items with a positive actual rate")
    bias = float(np.mean(np.abs((p[keep] - a[keep]) / a[keep])))
    return BiasBreakdown(bias=bias, n_items=int(keep.sum()), n_excluded=n_excluded)


def pcvr_bias(
    preds: npt.ArrayLike, actuals: npt.ArrayLike, items: npt.ArrayLike | None = None
) -> float:
    return pcvr_bias_detail(preds, actuals, items).bias


def spearman(xs: npt.ArrayLike, ys: npt.ArrayLike, *, exact: bool = False) -> float:
    """Rank correlation with average ranks for ties.

    The default is ``1 - 6 sum(d^2) / (n (n^2 - 1))``; ``exact=True`` returns
    Pearson correlation of the ranks instead, which differs under ties.
    """
    x, y = _pair(xs, ys)
    n = x.size
    if n < 2:
        raise MetricUndefinedError("Spearman correlation needs at least two points")
    if exact:
        return float(spearmanr(x, y).statistic)
    d = rankdata(x, method="average") - rankdata(y, method="average")
    return float(1.0 - 6.0 * np.sum(d * d) / (n * (n * n - 1.0)))


def _dcg(rels: np.ndarray, k: int) -> float:
    top = rels[:k]
    discounts = np.log2(np.arange(2, top.size + 2, dtype=np.float64))
    return float(np.sum((np.power(2.0, top) - 1.0) / discounts))


def ndcg_at_k(predicted_rels: npt.ArrayLike, ideal_rels: npt.ArrayLike, k: int) -> float:
    """DCG of the first ``k`` predicted positions over the ideal DCG; 0 if the ideal is 0."""
    if k < 1:
        raise ParameterError(f"K must be >= 1, got {k}")
    pred = np.asarray(predicted_rels, dtype=np.float64)
    ideal = np.sort(np.asarray(ideal_rels, dtype=np.float64))[::-1]
    idcg = _dcg(ideal, k)
    if idcg == 0.0:
        return 0.0
    return _dcg(pred, k) / idcg


def ndcg_against_reference(preds: npt.ArrayLike, reference: npt.ArrayLike, k: int) -> float:
    """NDCG@K of the ordering by ``preds`` with ``reference`` scores as relevance."""
    p, r = _pair(preds, reference)
    order = np.argsort(-p, kind="stable")
    return ndcg_at_k(r[order], r, k)


class RunReport(BaseModel):
    """Metric bundle for one model on one evaluation split."""

    label: str = Field(default="", description="Model or run name")
    n_samples: int
    split_fingerprint: str
    auc: float | None = None
    logloss: float | None = None
    pcvr_bias: float | None = None
    bias_excluded_items: int | None = None
    spearman: float | None = None
    ndcg_at: dict[int, float] = Field(default_factory=dict)
    steps: int = 0
    elapsed_ms: float = 0.0

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2))
        return path


def report_from_predictions(
    preds: npt.ArrayLike,
    batch: SampleBatch,
    *,
    reference: npt.ArrayLike | None = None,
    item_column: int | None = None,
    ks: Sequence[int] = DEFAULT_NDCG_KS,
    label: str = "",
    steps: int = 0,
    elapsed_ms: float = 0.0,
) -> RunReport:
    """Build a RunReport; each metric is present only when its inputs exist."""
    p = np.asarray(preds, dtype=np.float64)
    y = batch.label
    report = RunReport(
        label=label,
        n_samples=len(batch),
        split_fingerprint=batch.fingerprint(),
        steps=steps,
        elapsed_ms=elapsed_ms,
    )
    if len(batch):
        report.logloss = logloss(p, y)
        try:
            report.auc = auc(p, y)
        except MetricUndefinedError:
            logger.warning("AUC undefined on %s: single-class labels", label or "split")
    if item_column is not None and len(batch):
        try:
            detail = pcvr_bias_detail(p, y, batch.categorical[:, item_column])
            report.pcvr_bias = detail.bias
            report.bias_excluded_items = detail.n_excluded
        except MetricUndefinedError:
            logger.warning("pCVR bias undefined: no item has conversions")
    if reference is not None and len(batch) >= 2:
        ref = np.asarray(reference, dtype=np.float64)
        report.spearman = spearman(p, ref)
        report.ndcg_at = {k: ndcg_against_reference(p, ref, k) for k in ks}
    return report


def evaluate(
    model: PredictionModel,
    batch: SampleBatch,
    *,
    reference: PredictionModel | None = None,
    item_column: int | None = None,
    ks: Sequence[int] = DEFAULT_NDCG_KS,
    label: str = "",
    steps: int = 0,
    elapsed_ms: float = 0.0,
) -> RunReport:
    """Predict with ``model`` and report; ``reference`` is a model whose
    predictions define the ideal ranking for Spearman and NDCG."""
    preds = predict(model, batch)
    ref = None if reference is None else predict(reference, batch)
    return report_from_predictions(
        preds,
        batch,
        reference=ref,
        item_column=item_column,
        ks=ks,
        label=label,
        steps=steps,
        elapsed_ms=elapsed_ms,
    )


class SwitchingCostReport(BaseModel):
    """Computational and performance parts of replacing a deployed model."""

    c_comp_steps: int = Field(..., description="Training iterations spent")
    c_comp_ms: float = Field(..., description="Wall-clock training time")
    c_perf: float = Field(..., description="Student test loss minus teacher test loss")
    student_logloss: float
    teacher_logloss: float


def switching_cost(
    student: RunReport, teacher: RunReport, steps: int, elapsed_ms: float
) -> SwitchingCostReport:
    if student.split_fingerprint != teacher.split_fingerprint:
        raise ContractError("student and teacher were evaluated on different splits")
    if student.logloss is None or teacher.logloss is None:
        raise MetricUndefinedError("switching cost needs LogLoss on both reports")
    return SwitchingCostReport(
        c_comp_steps=steps,
        c_comp_ms=elapsed_ms,
        c_perf=student.logloss - teacher.logloss,
        student_logloss=student.logloss,
        teacher_logloss=teacher.logloss,
    )


def experiment_table(rows: Sequence[dict], by: Sequence[str] = ("method",)) -> pd.DataFrame:
    """Mean and std over seeds per method.

    Each row needs ``method``, ``seed``, ``auc``, ``logloss``, ``time_s`` and
    ``steps``; extra numeric columns are aggregated too. ``by`` lists the
    grouping columns, e.g. ``("sweep_value", "method")`` for a sweep.
    """
    frame = pd.DataFrame(list(rows))
    if frame.empty:
        return frame
    keys = list(by)
    numeric = [c for c in frame.columns if c not in (*keys, "seed")]
    # missing metrics arrive as None
    frame[numeric] = frame[numeric].apply(pd.to_numeric, errors="coerce")
    groups = frame.groupby(keys, sort=False, dropna=False)
    grouped = groups[numeric].agg(["mean", "std"])
    grouped.columns = [f"{col}_{stat}" for col, stat in grouped.columns]
    grouped = grouped.reset_index()
    grouped.insert(len(keys), "n_seeds", groups.size().to_numpy())
    return grouped
