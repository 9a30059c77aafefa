"""Vocabulary building and raw-frame encoding.

Index 0 of every categorical field is ``<UNK>``; it absorbs tokens seen
fewer than the threshold number of times when the vocabulary was built, and
tokens never seen at all. Numerical values ``x > 2`` become ``log2(x)``.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from crossadapt.data.schema import FieldSchema, SampleBatch, SchemaConfig
from crossadapt.errors import SchemaError

logger = logging.getLogger(__name__)

UNK = "<UNK>"
UNK_INDEX = 0


def compress(x: np.ndarray) -> np.ndarray:
    """``log2(x)`` where ``x > 2``, identity elsewhere."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 2.0, np.log2(np.maximum(x, 2.0)), x)


class Vocabulary(BaseModel):
    """Per-field token -> index maps, shared by teacher and student."""

    tokens: dict[str, dict[str, int]] = Field(default_factory=dict)
    thresholds: dict[str, int] = Field(default_factory=dict)

    @classmethod
    def build(cls, frame: pd.DataFrame, schema: SchemaConfig) -> Vocabulary:
        """Keep tokens with frequency >= threshold, most frequent first."""
        tokens: dict[str, dict[str, int]] = {}
        thresholds: dict[str, int] = {}
        for name in schema.categorical_names:
            threshold = schema.threshold_for(name)
            counts = frame[name].astype(str).value_counts()
            kept = counts[counts >= threshold]
            ordered = sorted(kept.items(), key=lambda kv: (-kv[1], kv[0]))
            tokens[name] = {tok: i + 1 for i, (tok, _) in enumerate(ordered)}
            thresholds[name] = threshold
            logger.debug(
                "Field %s: kept %d of %d tokens (threshold %d)",
                name,
                len(kept),
                len(counts),
                threshold,
            )
        return cls(tokens=tokens, thresholds=thresholds)

    def size(self, name: str) -> int:
        return len(self.tokens[name]) + 1

    def encode(self, name: str, values: pd.Series) -> np.ndarray:
        mapping = self.tokens[name]
        return values.astype(str).map(mapping).fillna(UNK_INDEX).to_numpy(dtype=np.int64)

    def field_schema(self, schema: SchemaConfig) -> FieldSchema:
        missing = [n for n in schema.categorical_names if n not in self.tokens]
        if missing:
            raise SchemaError(f"vocabulary has no entries for fields {missing}")
        return FieldSchema.build(
            categorical=[(n, self.size(n)) for n in schema.categorical_names],
            numerical=schema.numerical_names,
        )

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2))
        return path

    @classmethod
    def load(cls, path: str | Path) -> Vocabulary:
        return cls.model_validate_json(Path(path).read_text())


def encode_frame(frame: pd.DataFrame, schema: SchemaConfig, vocab: Vocabulary) -> SampleBatch:
    """Turn a raw frame into a SampleBatch using ``vocab``."""
    n = len(frame)
    cats = schema.categorical_names
    nums = schema.numerical_names
    categorical = (
        np.stack([vocab.encode(c, frame[c]) for c in cats], axis=1)
        if cats
        else np.zeros((n, 0), dtype=np.int64)
    )
    if nums:
        raw = frame[nums].to_numpy(dtype=np.float64)
        if np.isnan(raw).any():
            logger.debug("Filling %d missing numerical values with 0", int(np.isnan(raw).sum()))
            raw = np.nan_to_num(raw, nan=0.0)
        numerical = compress(raw)
    else:
        numerical = np.zeros((n, 0))
    if schema.timestamp_name is not None:
        timestamp = frame[schema.timestamp_name].to_numpy(dtype=np.float64)
    else:
        timestamp = np.arange(n, dtype=np.float64)
    click = None
    if schema.click_name is not None:
        click = frame[schema.click_name].to_numpy(dtype=np.int64)
    return SampleBatch(
        categorical=categorical,
        numerical=numerical,
        label=frame[schema.label_name].to_numpy(dtype=np.float64),
        timestamp=timestamp,
        click=click,
    )


def preprocess(
    frame: pd.DataFrame,
    schema: SchemaConfig,
    *,
    vocab: Vocabulary | None = None,
    vocab_rows: int | None = None,
) -> tuple[SampleBatch, Vocabulary]:
    """Encode ``frame``; build the vocabulary from its first ``vocab_rows`` rows if needed."""
    if vocab is None:
        source = frame if vocab_rows is None else frame.iloc[:vocab_rows]
        vocab = Vocabulary.build(source, schema)
    return encode_frame(frame, schema, vocab), vocab
