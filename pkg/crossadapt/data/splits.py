"""Temporal splits with the historical partition withheld from student code."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import pandas as pd

from crossadapt.data.preprocess import Vocabulary, encode_frame
from crossadapt.data.schema import FieldSchema, SampleBatch, SchemaConfig
from crossadapt.errors import DataError, HistoryAccessError, ParameterError

logger = logging.getLogger(__name__)

DEFAULT_RATIO = (4, 4, 1, 1)
SPLIT_NAMES = ("hist", "train", "online", "test")


class HistoryGrant(str, Enum):
    """Parties allowed to read the historical split."""

    TEACHER = "teacher"
    FULL_RETRAIN = "full_retrain"


def split_bounds(n: int, ratio: Sequence[int]) -> list[tuple[int, int]]:
    """Contiguous ``[start, stop)`` row ranges proportional to ``ratio``."""
    if len(ratio) != 4 or any(r < 0 for r in ratio):
        raise ParameterError(f"ratio needs four non-negative parts, got {list(ratio)}")
    if ratio[2] < 1 or ratio[3] < 1:
        raise ParameterError("online and test ratio parts must be >= 1")
    total = sum(ratio)
    if n < total:
        raise DataError(f"{n} samples cannot be split {':'.join(map(str, ratio))}")
    cum = np.cumsum([0, *ratio])
    edges = [int(round(n * c / total)) for c in cum]
    return list(zip(edges[:-1], edges[1:]))


@dataclass
class DatasetSplits:
    """hist < train < online < test, contiguous in time.

    ``train``, ``online`` and ``test`` are public. ``hist`` is readable only
    with a :class:`HistoryGrant`.
    """

    _hist: SampleBatch
    train: SampleBatch
    online: SampleBatch
    test: SampleBatch
    ratio: tuple[int, ...] = DEFAULT_RATIO
    bounds: list[tuple[int, int]] = field(default_factory=list)

    def hist(self, grant: HistoryGrant | None = None) -> SampleBatch:
        if grant is None:
            raise HistoryAccessError("the historical split is not available to student modes")
        grant = HistoryGrant(grant)
        if len(self._hist) == 0 and grant == HistoryGrant.FULL_RETRAIN:
            raise DataError("full retraining needs a non-empty historical split")
        return self._hist

    @property
    def has_history(self) -> bool:
        return len(self._hist) > 0

    def teacher_data(self) -> SampleBatch:
        """hist + train, the teacher's training data."""
        parts = [p for p in (self._hist, self.train) if len(p)]
        if not parts:
            raise DataError("teacher needs hist or train samples")
        return SampleBatch.concat(parts)

    def sizes(self) -> dict[str, int]:
        parts = (self._hist, self.train, self.online, self.test)
        return {name: len(p) for name, p in zip(SPLIT_NAMES, parts)}


def split_temporal(samples: SampleBatch, ratio: Sequence[int] = DEFAULT_RATIO) -> DatasetSplits:
    """Cut time-sorted samples into the four contiguous splits."""
    data = samples.sorted_by_time()
    bounds = split_bounds(len(data), ratio)
    parts = [data.slice(a, b) for a, b in bounds]
    for i in range(3):
        a, b = parts[i], parts[i + 1]
        if len(a) and len(b) and a.timestamp.max() >= b.timestamp.min():
            logger.warning(
                "Splits %s and %s share a timestamp at their boundary",
                SPLIT_NAMES[i],
                SPLIT_NAMES[i + 1],
            )
    logger.info(
        "Split %d rows %s into %s",
        len(data),
        ":".join(map(str, ratio)),
        [b - a for a, b in bounds],
    )
    return DatasetSplits(
        _hist=parts[0],
        train=parts[1],
        online=parts[2],
        test=parts[3],
        ratio=tuple(ratio),
        bounds=bounds,
    )


@dataclass
class PreparedData:
    splits: DatasetSplits
    vocab: Vocabulary
    field_schema: FieldSchema
    schema: SchemaConfig


def prepare_splits(
    frame: pd.DataFrame, schema: SchemaConfig, ratio: Sequence[int] = DEFAULT_RATIO
) -> PreparedData:
    """Split a raw frame in time, build the vocabulary on hist + train, encode all.

    The student reuses this vocabulary verbatim, so tokens first seen online
    map to ``<UNK>``.
    """
    if schema.timestamp_name is not None:
        frame = frame.sort_values(schema.timestamp_name, kind="stable").reset_index(drop=True)
    bounds = split_bounds(len(frame), ratio)
    vocab = Vocabulary.build(frame.iloc[: bounds[1][1]], schema)
    samples = encode_frame(frame, schema, vocab)
    return PreparedData(
        splits=split_temporal(samples, ratio),
        vocab=vocab,
        field_schema=vocab.field_schema(schema),
        schema=schema,
    )


def task_rows(batch: SampleBatch) -> SampleBatch:
    """Rows that carry a training label: clicked rows in pCVR data, else all rows."""
    if batch.click is None:
        return batch
    return batch.take(np.flatnonzero(batch.click == 1))


def unclicked_rows(batch: SampleBatch) -> SampleBatch:
    """Exposed but unclicked rows; empty outside pCVR data."""
    if batch.click is None:
        return batch.take(np.zeros(0, dtype=np.int64))
    return batch.take(np.flatnonzero(batch.click == 0))
