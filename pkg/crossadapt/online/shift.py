"""Windowed distribution-shift scoring and the adaptive enhancement ratio.

The training split is cut into ``n`` equal consecutive windows. For every
adjacent window pair and every feature a divergence is measured between
the two empirical distributions (shared histogram edges for numerical
features, the union of observed tokens for categorical ones). The shift
scalar is the mean over pairs of the mean over features; it maps to the
share of historical rows mixed into each streaming batch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import rel_entr
from scipy.stats import wasserstein_distance

from crossadapt.data.schema import ColumnKind, FieldSchema, SampleBatch
from crossadapt.errors import (
    ContractError,
    DataError,
    ParameterError,
    ShapeError,
    UnsupportedMetricError,
)

logger = logging.getLogger(__name__)

KL_SMOOTHING = 1e-10


class DivergenceMetric(str, Enum):
    JS = "js"
    KL = "kl"
    WASSERSTEIN = "wasserstein"


class ShiftSettings(BaseModel):
    """Window count, binning, metric and the enhancement-ratio thresholds."""

    model_config = ConfigDict(extra="forbid")

    n_windows: int = Field(default=10, ge=1, description="Consecutive windows n")
    bins: int = Field(default=50, ge=1, description="Histogram bins b for numerical features")
    metric: DivergenceMetric = Field(default=DivergenceMetric.JS)
    theta_low: float = Field(default=0.01, gt=0.0, description="Minor-shift threshold")
    theta_high: float = Field(default=0.05, gt=0.0, description="Major-shift threshold")
    k: float = Field(default=0.1, ge=0.0, description="Maximum enhancement ratio")

    @model_validator(mode="after")
    def _check_thresholds(self) -> ShiftSettings:
        if self.theta_low >= self.theta_high:
            raise ValueError("theta_low must be smaller than theta_high")
        return self


@dataclass(frozen=True)
class Feature:
    """A column of a SampleBatch addressed by kind and position."""

    name: str
    kind: ColumnKind
    column: int

    def values(self, batch: SampleBatch) -> np.ndarray:
        if self.kind == ColumnKind.CATEGORICAL:
            return batch.categorical[:, self.column]
        return batch.numerical[:, self.column]


def features_of(batch: SampleBatch, field_schema: FieldSchema | None = None) -> list[Feature]:
    if field_schema is not None:
        cats = [f.name for f in field_schema.categorical]
        nums = [f.name for f in field_schema.numerical]
    else:
        cats = [f"cat{i}" for i in range(batch.categorical.shape[1])]
        nums = [f"num{i}" for i in range(batch.numerical.shape[1])]
    return [Feature(n, ColumnKind.CATEGORICAL, i) for i, n in enumerate(cats)] + [
        Feature(n, ColumnKind.NUMERICAL, i) for i, n in enumerate(nums)
    ]


@dataclass(frozen=True)
class WindowDistribution:
    """Empirical distribution of one feature in one window."""

    feature: str
    kind: ColumnKind
    probs: npt.NDArray[np.float64]
    edges: npt.NDArray[np.float64] | None = None
    categories: npt.NDArray[np.int64] | None = None

    @property
    def bin_width(self) -> float:
        return 1.0 if self.edges is None else float(self.edges[1] - self.edges[0])


def partition_windows(data: SampleBatch, n: int) -> list[SampleBatch]:
    """``n`` contiguous, order-preserving windows whose sizes differ by at most one."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if n > len(data):
        raise ParameterError(f"cannot cut {len(data)} samples into {n} windows")
    data = data.sorted_by_time()
    return [data.take(idx) for idx in np.array_split(np.arange(len(data)), n)]


def shared_edges(values: list[np.ndarray], bins: int) -> npt.NDArray[np.float64]:
    """Equal-width edges over the pooled range of ``values``."""
    pooled = np.concatenate(values)
    lo, hi = float(pooled.min()), float(pooled.max())
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, bins + 1)


def estimate_distribution(
    window: SampleBatch,
    feature: Feature,
    *,
    bins: int = 50,
    edges: npt.NDArray[np.float64] | None = None,
    categories: npt.NDArray[np.int64] | None = None,
) -> WindowDistribution:
    """Histogram (numerical) or normalised token counts (categorical).

    ``edges`` / ``categories`` fix a support shared with another window; by
    default the window's own range or token set is used.
    """
    if len(window) == 0:
        raise DataError(f"empty window for feature {feature.name!r}")
    values = feature.values(window)
    if feature.kind == ColumnKind.CATEGORICAL:
        cats = np.unique(values) if categories is None else np.asarray(categories)
        pos = np.searchsorted(cats, values)
        if np.any(pos >= cats.size) or np.any(cats[np.minimum(pos, cats.size - 1)] != values):
            raise ShapeError(f"feature {feature.name!r} has tokens outside the given support")
        counts = np.bincount(pos, minlength=cats.size).astype(np.float64)
        return WindowDistribution(
            feature=feature.name,
            kind=feature.kind,
            probs=counts / counts.sum(),
            categories=cats,
        )
    if edges is None:
        edges = shared_edges([values], bins)
    counts, _ = np.histogram(values, bins=edges)
    counts = counts.astype(np.float64)
    return WindowDistribution(
        feature=feature.name, kind=feature.kind, probs=counts / counts.sum(), edges=edges
    )


def _smooth(p: np.ndarray) -> np.ndarray:
    p = p + KL_SMOOTHING
    return p / p.sum()


def divergence(
    p: WindowDistribution | npt.ArrayLike,
    q: WindowDistribution | npt.ArrayLike,
    metric: DivergenceMetric | str = DivergenceMetric.JS,
) -> float:
    """Divergence between two distributions on one support, natural log.

    Raw probability vectors are treated as numerical histograms of unit bin
    width.

    Args:
        p: First distribution.
        q: Second distribution on the same support.
        metric: ``js`` (symmetric, bounded by ln 2), ``kl`` (smoothed) or
            ``wasserstein`` (numerical features only, in bin-width units).

    Returns:
        A non-negative divergence.

    Raises:
        ShapeError: The supports differ in size.
        UnsupportedMetricError: Wasserstein on a categorical distribution.
    """
    metric = DivergenceMetric(metric)
    kind = ColumnKind.NUMERICAL
    width = 1.0
    if isinstance(p, WindowDistribution):
        kind, width = p.kind, p.bin_width
        p = p.probs
    if isinstance(q, WindowDistribution):
        q = q.probs
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeError(f"support mismatch: {p.shape} vs {q.shape}")
    if metric == DivergenceMetric.JS:
        m = 0.5 * (p + q)
        return float(max(0.5 * rel_entr(p, m).sum() + 0.5 * rel_entr(q, m).sum(), 0.0))
    if metric == DivergenceMetric.KL:
        return float(max(rel_entr(_smooth(p), _smooth(q)).sum(), 0.0))
    if kind == ColumnKind.CATEGORICAL:
        raise UnsupportedMetricError("Wasserstein distance needs a numerical feature")
    centres = np.arange(p.size, dtype=np.float64) * width
    if p.sum() == 0.0 or q.sum() == 0.0:
        raise DataError("Wasserstein distance of an empty histogram")
    return float(wasserstein_distance(centres, centres, u_weights=p, v_weights=q))


def pair_divergence(
    a: SampleBatch, b: SampleBatch, feature: Feature, settings: ShiftSettings
) -> float:
    """Divergence of one feature between two windows on their shared support."""
    va, vb = feature.values(a), feature.values(b)
    if feature.kind == ColumnKind.CATEGORICAL:
        if settings.metric == DivergenceMetric.WASSERSTEIN:
            raise UnsupportedMetricError(
                f"Wasserstein distance is undefined for categorical feature {feature.name!r}"
            )
        cats = np.union1d(va, vb)
        pa = estimate_distribution(a, feature, categories=cats)
        pb = estimate_distribution(b, feature, categories=cats)
    else:
        edges = shared_edges([va, vb], settings.bins)
        pa = estimate_distribution(a, feature, edges=edges)
        pb = estimate_distribution(b, feature, edges=edges)
    return divergence(pa, pb, settings.metric)


def enhancement_ratio(delta: float, theta_low: float, theta_high: float, k: float) -> float:
    """Share of historical rows per streaming row for a shift magnitude ``delta``.

    Args:
        delta: Mean adjacent-window divergence.
        theta_low: At or below this the full ratio ``k`` applies.
        theta_high: Above this no history is replayed.
        k: Ratio at low shift.

    Returns:
        ``k`` for ``delta <= theta_low``, ``k * (1 - delta / theta_high)`` up to
        ``theta_high``, else ``0``.
    """
    if not 0.0 < theta_low < theta_high:
        raise ParameterError(
            f"need 0 < theta_low < theta_high, got {theta_low} and {theta_high}"
        )
    if k < 0.0:
        raise ParameterError(f"k must be >= 0, got {k}")
    if delta <= theta_low:
        return k
    if delta <= theta_high:
        return k * (1.0 - delta / theta_high)
    return 0.0


class ShiftReport(BaseModel):
    """Per-pair, per-feature divergences and the derived enhancement ratio."""

    metric: DivergenceMetric
    n_windows: int
    bins: int
    n_features: int = Field(..., description="Number of features averaged per pair")
    feature_names: list[str]
    deltas: list[list[float]] = Field(..., description="Rows: window pairs; columns: features")
    pair_means: list[float]
    feature_profile: list[float] = Field(..., description="Mean divergence per feature")
    max_pair: int = Field(..., description="Index i of the pair (i, i+1) with the largest mean")
    delta_shift: float
    theta_low: float
    theta_high: float
    k: float
    r_enh: float

    def recompute_delta(self) -> float:
        return float(np.mean(np.asarray(self.deltas).mean(axis=1)))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2))
        return path

    @classmethod
    def load(cls, path: str | Path) -> ShiftReport:
        return cls.model_validate_json(Path(path).read_text())


def compute_shift(
    data: SampleBatch,
    settings: ShiftSettings | None = None,
    *,
    field_schema: FieldSchema | None = None,
) -> ShiftReport:
    """Score distribution shift across adjacent windows of ``data``.

    Args:
        data: Rows to cut into ``settings.n_windows`` temporal windows.
        settings: Windowing, binning, metric and thresholds; defaults when None.
        field_schema: Names the features; positional names are used without it.

    Returns:
        A report with the per-pair, per-feature divergence table, the pair with
        the largest mean divergence, ``delta_shift`` and the enhancement ratio.

    Raises:
        ParameterError: Fewer than two windows, or more windows than rows.
        ContractError: ``data`` has no feature columns.
    """
    settings = settings or ShiftSettings()
    if settings.n_windows < 2:
        raise ParameterError("shift needs at least two windows")
    windows = partition_windows(data, settings.n_windows)
    features = features_of(data, field_schema)
    if not features:
        raise ContractError("no features to compare")
    table = np.array(
        [
            [pair_divergence(windows[i], windows[i + 1], f, settings) for f in features]
            for i in range(len(windows) - 1)
        ]
    )
    pair_means = table.mean(axis=1)
    delta = float(pair_means.mean())
    r_enh = enhancement_ratio(delta, settings.theta_low, settings.theta_high, settings.k)
    report = ShiftReport(
        metric=settings.metric,
        n_windows=settings.n_windows,
        bins=settings.bins,
        n_features=len(features),
        feature_names=[f.name for f in features],
        deltas=table.tolist(),
        pair_means=pair_means.tolist(),
        feature_profile=table.mean(axis=0).tolist(),
        max_pair=int(np.argmax(pair_means)),
        delta_shift=delta,
        theta_low=settings.theta_low,
        theta_high=settings.theta_high,
        k=settings.k,
        r_enh=r_enh,
    )
    logger.info(
        "Shift %s over %d windows: delta=%.5f -> r_enh=%.4f (max pair %d)",
        settings.metric.value,
        settings.n_windows,
        delta,
        r_enh,
        report.max_pair,
    )
    return report
