"""Strategic selection of distillation data.

``sample_n`` is the uniform draw primitive: without replacement while the
quota fits the pool, with replacement beyond that. On top of it sit
class-balanced sampling, temporal-diversity sampling over ``K`` equal
blocks, and pCVR augmentation with teacher pseudo-labels on unclicked rows.

Quotas are rounded half-up per block, so the total may drift from
``r * |D|`` by at most ``K`` samples.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from crossadapt.data.schema import SampleBatch
from crossadapt.errors import DataError, ParameterError
from crossadapt.model.core import PredictionModel, predict

logger = logging.getLogger(__name__)

OBSERVED = "observed-label"
PSEUDO = "pseudo-label"


class SamplingConfig(BaseModel):
    """Knobs of the sampling strategy."""

    model_config = ConfigDict(extra="forbid")

    r: float = Field(default=0.1, gt=0.0, le=1.0, description="Overall sampling ratio")
    r_pos: float = Field(default=0.5, gt=0.0, lt=1.0, description="Target positive ratio")
    K: int = Field(default=10, ge=1, description="Number of temporal blocks")
    r_unclick: float = Field(
        default=0.0, ge=0.0, description="Unclicked-to-clicked ratio (pCVR only)"
    )
    seed: int = Field(default=0, description="Sampling seed")


def round_half_up(x: float) -> int:
    # tolerance absorbs float error in products like 0.1 * 0.5 * 1000
    return int(math.floor(x + 0.5 + 1e-9))


def _rng(seed: int | np.random.Generator) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_n(
    pool: npt.ArrayLike | SampleBatch, n: int, seed: int | np.random.Generator = 0
) -> npt.NDArray[np.int64] | SampleBatch:
    """Uniformly draw ``n`` items from ``pool``.

    ``pool`` is either an index array (the drawn indices are returned) or a
    SampleBatch (the drawn rows are returned).
    """
    if n < 0:
        raise ParameterError(f"n must be >= 0, got {n}")
    if isinstance(pool, SampleBatch):
        return pool.take(sample_n(np.arange(len(pool)), n, seed))
    items = np.asarray(pool, dtype=np.int64)
    if n == 0:
        return items[:0]
    if items.size == 0:
        raise DataError(f"cannot draw {n} samples from an empty pool")
    rng = _rng(seed)
    replace = n > items.size
    return items[rng.choice(items.size, size=n, replace=replace)]


@dataclass
class BlockCount:
    block_id: int
    n_pos: int
    n_neg: int
    n_pseudo: int = 0


@dataclass
class SampledDataset:
    """Selected rows in block order with their block ids and provenance.

    ``source_index`` records which training row each sample came from, so
    repeats drawn with replacement keep their multiplicity.
    """

    samples: SampleBatch
    block_ids: npt.NDArray[np.int64]
    source_index: npt.NDArray[np.int64]
    block_edges: npt.NDArray[np.float64]
    block_counts: list[BlockCount]

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def n_blocks(self) -> int:
        return len(self.block_counts)

    @property
    def provenance(self) -> npt.NDArray[np.str_]:
        return np.where(self.samples.observed, OBSERVED, PSEUDO)

    def block(self, k: int) -> SampleBatch:
        return self.samples.take(np.flatnonzero(self.block_ids == k))

    def audit_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {"block_id": c.block_id, "n_pos": c.n_pos, "n_neg": c.n_neg, "n_pseudo": c.n_pseudo}
                for c in self.block_counts
            ],
            columns=["block_id", "n_pos", "n_neg", "n_pseudo"],
        )

    def write_audit(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.audit_frame().to_csv(path, index=False)
        return path


def _split_classes(batch: SampleBatch) -> tuple[np.ndarray, np.ndarray]:
    pos = np.flatnonzero(batch.label >= 0.5)
    neg = np.flatnonzero(batch.label < 0.5)
    return pos, neg


def class_balanced_sample(
    train: SampleBatch, cfg: SamplingConfig
) -> tuple[SampleBatch, SampleBatch]:
    """Draw ``round(r*r_pos*|D|)`` positives and ``round(r*(1-r_pos)*|D|)`` negatives.

    Args:
        train: Pool to draw from.
        cfg: Sampling ratios and seed.

    Returns:
        The drawn positives and the drawn negatives. A class smaller than its
        target is drawn with replacement.

    Raises:
        DataError: The pool lacks one of the classes.
    """
    pos, neg = _split_classes(train)
    if pos.size == 0:
        raise DataError("class-balanced sampling needs positives; the pool has none")
    if neg.size == 0:
        raise DataError("class-balanced sampling needs negatives; the pool has none")
    n = len(train)
    rng = np.random.default_rng(cfg.seed)
    n_pos = round_half_up(cfg.r * cfg.r_pos * n)
    n_neg = round_half_up(cfg.r * (1.0 - cfg.r_pos) * n)
    return train.take(sample_n(pos, n_pos, rng)), train.take(sample_n(neg, n_neg, rng))


def _block_bounds(n: int, k: int) -> list[tuple[int, int]]:
    sizes = [len(a) for a in np.array_split(np.arange(n), k)]
    bounds, start = [], 0
    for s in sizes:
        bounds.append((start, start + s))
        start += s
    return bounds


def _nearest_with(pools: list[np.ndarray], k: int) -> int | None:
    for dist in range(1, len(pools)):
        for j in (k - dist, k + dist):
            if 0 <= j < len(pools) and pools[j].size:
                return j
    return None


def _draw_block(
    pools: list[np.ndarray], k: int, quota: int, rng: np.random.Generator, what: str
) -> np.ndarray:
    if quota == 0:
        return pools[k][:0]
    if pools[k].size:
        return sample_n(pools[k], quota, rng)
    j = _nearest_with(pools, k)
    if j is None:
        raise DataError(f"no block contains {what}")
    logger.warning("Block %d has no %s; borrowing %d from block %d", k, what, quota, j)
    return pools[j][rng.choice(pools[j].size, size=quota, replace=True)]


def temporal_diversity_sample(train: SampleBatch, cfg: SamplingConfig) -> SampledDataset:
    """Split ``train`` into ``K`` equal temporal blocks and sample each class-balanced.

    Rows keep temporal order within each block; blocks are emitted oldest first.

    Args:
        train: Training split; sorted by timestamp before blocking.
        cfg: ``r``, ``r_pos``, ``K`` and the seed.

    Returns:
        The selected rows with block ids, per-block counts and source indices.

    Raises:
        DataError: ``train`` is empty or lacks one of the classes.
        ParameterError: ``K`` exceeds the number of rows.
    """
    data = train.sorted_by_time()
    n = len(data)
    if n == 0:
        raise DataError("cannot sample from an empty training split")
    if cfg.K > n:
        raise ParameterError(f"K={cfg.K} exceeds the number of samples {n}")
    pos, neg = _split_classes(data)
    if pos.size == 0 or neg.size == 0:
        missing = "positives" if pos.size == 0 else "negatives"
        raise DataError(f"temporal diversity sampling needs both classes; no {missing} in pool")

    bounds = _block_bounds(n, cfg.K)
    pos_pools = [pos[(pos >= a) & (pos < b)] for a, b in bounds]
    neg_pools = [neg[(neg >= a) & (neg < b)] for a, b in bounds]
    q_pos = round_half_up(cfg.r * cfg.r_pos * n / cfg.K)
    q_neg = round_half_up(cfg.r * (1.0 - cfg.r_pos) * n / cfg.K)

    children = np.random.SeedSequence(cfg.seed).spawn(cfg.K)
    chosen, block_ids, counts = [], [], []
    for k, child in enumerate(children):
        rng = np.random.default_rng(child)
        drawn = np.concatenate(
            [
                _draw_block(pos_pools, k, q_pos, rng, "positives"),
                _draw_block(neg_pools, k, q_neg, rng, "negatives"),
            ]
        )
        drawn = np.sort(drawn, kind="stable")
        chosen.append(drawn)
        block_ids.append(np.full(drawn.size, k, dtype=np.int64))
        counts.append(BlockCount(block_id=k, n_pos=q_pos, n_neg=q_neg))

    index = np.concatenate(chosen)
    edges = np.array([data.timestamp[a] for a, _ in bounds], dtype=np.float64)
    result = SampledDataset(
        samples=data.take(index),
        block_ids=np.concatenate(block_ids),
        source_index=index,
        block_edges=edges,
        block_counts=counts,
    )
    logger.info(
        "Sampled %d of %d rows across %d blocks (%d pos / %d neg per block)",
        len(result),
        n,
        cfg.K,
        q_pos,
        q_neg,
    )
    return result


def full_dataset(train: SampleBatch, K: int = 1) -> SampledDataset:
    """Every training row, blocked like a sample but without selection."""
    data = train.sorted_by_time()
    n = len(data)
    if n == 0:
        raise DataError("empty training split")
    bounds = _block_bounds(n, min(K, n))
    block_ids = np.concatenate(
        [np.full(b - a, k, dtype=np.int64) for k, (a, b) in enumerate(bounds)]
    )
    counts = []
    for k, (a, b) in enumerate(bounds):
        n_pos = int((data.label[a:b] >= 0.5).sum())
        counts.append(BlockCount(block_id=k, n_pos=n_pos, n_neg=(b - a) - n_pos))
    return SampledDataset(
        samples=data,
        block_ids=block_ids,
        source_index=np.arange(n, dtype=np.int64),
        block_edges=np.array([data.timestamp[a] for a, _ in bounds], dtype=np.float64),
        block_counts=counts,
    )


def unclicked_augment(
    sampled: SampledDataset,
    unclicked: SampleBatch,
    teacher: PredictionModel,
    cfg: SamplingConfig,
) -> SampledDataset:
    """Append ``round(r_unclick * |sampled|)`` unclicked rows labelled by the teacher.

    Pseudo-labelled rows carry the teacher's pCVR in ``soft_label``; they are
    placed into the temporal block their timestamp falls in.

    Args:
        sampled: Stage-1 dataset of clicked rows.
        unclicked: Pool of unclicked exposures.
        teacher: Model whose predictions become the pseudo-labels.
        cfg: ``r_unclick`` and the seed.

    Returns:
        ``sampled`` unchanged when no rows are due, otherwise a new dataset.

    Raises:
        DataError: Rows are due and ``unclicked`` is empty.
    """
    n_extra = round_half_up(cfg.r_unclick * len(sampled))
    if n_extra == 0:
        return sampled
    if len(unclicked) == 0:
        raise DataError("unclicked augmentation requested but the unclicked pool is empty")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    draw_index = sample_n(np.arange(len(unclicked)), n_extra, rng)
    extra = unclicked.take(draw_index)
    extra.soft_label = predict(teacher, extra)

    extra_blocks = np.clip(
        np.searchsorted(sampled.block_edges, extra.timestamp, side="right") - 1,
        0,
        sampled.n_blocks - 1,
    )
    samples = SampleBatch.concat([sampled.samples, extra])
    block_ids = np.concatenate([sampled.block_ids, extra_blocks])
    source = np.concatenate([sampled.source_index, -1 - draw_index])
    order = np.lexsort((samples.timestamp, block_ids))
    counts = [
        BlockCount(
            block_id=c.block_id,
            n_pos=c.n_pos,
            n_neg=c.n_neg,
            n_pseudo=c.n_pseudo + int((extra_blocks == c.block_id).sum()),
        )
        for c in sampled.block_counts
    ]
    logger.info("Appended %d pseudo-labelled unclicked rows", n_extra)
    return SampledDataset(
        samples=samples.take(order),
        block_ids=block_ids[order],
        source_index=source[order],
        block_edges=sampled.block_edges,
        block_counts=counts,
    )
