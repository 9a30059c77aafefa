"""Field schemas and the columnar sample container shared by every stage."""

from __future__ import annotations

import hashlib
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, model_validator

from crossadapt.errors import InputError, SchemaError, ShapeError


class ColumnKind(str, Enum):
    """Role of a column in a raw CSV file."""

    CATEGORICAL = "cat"
    NUMERICAL = "num"
    LABEL = "label"
    CLICK = "click"
    TIMESTAMP = "timestamp"


class ColumnSpec(BaseModel):
    """One column of a raw data file."""

    model_config = ConfigDict(extra="forbid")

    name: str = Field(..., description="Header name in the CSV file")
    kind: ColumnKind = Field(..., description="cat, num, label, click or timestamp")
    vocab_threshold: int | None = Field(
        default=None, ge=1, description="Per-column override of the rare-token threshold"
    )


class SchemaConfig(BaseModel):
    """Declares how raw CSV columns map onto model fields."""

    model_config = ConfigDict(extra="forbid")

    columns: list[ColumnSpec] = Field(..., min_length=1)
    delimiter: str = Field(default=",", description="Field delimiter, ',' or '\\t'")
    vocab_threshold: int = Field(default=10, ge=1, description="Rare-token threshold")
    temporal_row_order: bool = Field(
        default=False, description="Row order is temporal when no timestamp column exists"
    )
    strict: bool = Field(default=True, description="Fail on the first unparsable row")
    item_field: str | None = Field(
        default=None, description="Categorical field that identifies items for pCVR bias"
    )

    @model_validator(mode="after")
    def _check_roles(self) -> SchemaConfig:
        kinds = [c.kind for c in self.columns]
        if kinds.count(ColumnKind.LABEL) != 1:
            raise ValueError("schema needs exactly one label column")
        if kinds.count(ColumnKind.CLICK) > 1 or kinds.count(ColumnKind.TIMESTAMP) > 1:
            raise ValueError("schema allows at most one click and one timestamp column")
        if ColumnKind.TIMESTAMP not in kinds and not self.temporal_row_order:
            raise ValueError("schema needs a timestamp column or temporal_row_order=true")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError("column names must be unique")
        if self.item_field is not None and self.item_field not in self.categorical_names:
            raise ValueError(f"item_field {self.item_field!r} is not a categorical column")
        return self

    def _names(self, kind: ColumnKind) -> list[str]:
        return [c.name for c in self.columns if c.kind == kind]

    @property
    def categorical_names(self) -> list[str]:
        return self._names(ColumnKind.CATEGORICAL)

    @property
    def numerical_names(self) -> list[str]:
        return self._names(ColumnKind.NUMERICAL)

    @property
    def label_name(self) -> str:
        return self._names(ColumnKind.LABEL)[0]

    @property
    def click_name(self) -> str | None:
        names = self._names(ColumnKind.CLICK)
        return names[0] if names else None

    @property
    def timestamp_name(self) -> str | None:
        names = self._names(ColumnKind.TIMESTAMP)
        return names[0] if names else None

    def threshold_for(self, name: str) -> int:
        for c in self.columns:
            if c.name == name and c.vocab_threshold is not None:
                return c.vocab_threshold
        return self.vocab_threshold


class FeatureField(BaseModel):
    """A model input field and its slice of the shared embedding table."""

    name: str
    kind: ColumnKind
    vocab_size: int = Field(..., ge=1, description="Rows owned in the embedding table")
    offset: int = Field(..., ge=0, description="First embedding row of this field")


class FieldSchema(BaseModel):
    """Ordered model fields: categorical first, then numerical."""

    fields: list[FeatureField]

    @classmethod
    def build(cls, categorical: Sequence[tuple[str, int]], numerical: Sequence[str]) -> FieldSchema:
        """Lay out fields back to back; every numerical field owns one row."""
        out: list[FeatureField] = []
        offset = 0
        for name, size in categorical:
            if size < 2:
                raise SchemaError(f"categorical field {name!r} needs vocab >= 2 (incl. <UNK>)")
            out.append(
                FeatureField(name=name, kind=ColumnKind.CATEGORICAL, vocab_size=size, offset=offset)
            )
            offset += size
        for name in numerical:
            out.append(
                FeatureField(name=name, kind=ColumnKind.NUMERICAL, vocab_size=1, offset=offset)
            )
            offset += 1
        return cls(fields=out)

    @property
    def categorical(self) -> list[FeatureField]:
        return [f for f in self.fields if f.kind == ColumnKind.CATEGORICAL]

    @property
    def numerical(self) -> list[FeatureField]:
        return [f for f in self.fields if f.kind == ColumnKind.NUMERICAL]

    @property
    def num_fields(self) -> int:
        return len(self.fields)

    @property
    def total_rows(self) -> int:
        return sum(f.vocab_size for f in self.fields)

    def index_of(self, name: str) -> int:
        for i, f in enumerate(self.categorical):
            if f.name == name:
                return i
        raise SchemaError(f"no categorical field named {name!r}")


def _col(values: npt.ArrayLike | None, dtype: type, n: int | None = None) -> np.ndarray | None:
    if values is None:
        return None
    arr = np.asarray(values, dtype=dtype)
    if n is not None and arr.shape[0] != n:
        raise ShapeError(f"column length {arr.shape[0]} != batch length {n}")
    return arr


def _as_2d(values: npt.ArrayLike, dtype: type, n: int) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype)
    if arr.ndim == 2:
        if arr.shape[0] != n:
            raise ShapeError(f"feature matrix has {arr.shape[0]} rows, batch has {n}")
        return arr
    if arr.size == 0:
        return arr.reshape(n, 0)
    return arr.reshape(n, -1)


@dataclass
class SampleBatch:
    """Columnar labelled samples; a whole split is simply a large batch.

    ``soft_label`` holds teacher pseudo-labels; rows where it is NaN carry an
    observed hard ``label``. ``click`` is present in pCVR mode only.
    """

    categorical: npt.NDArray[np.int64]
    numerical: npt.NDArray[np.float64]
    label: npt.NDArray[np.float64]
    timestamp: npt.NDArray[np.float64]
    soft_label: npt.NDArray[np.float64] | None = None
    click: npt.NDArray[np.int64] | None = None
    _fingerprint: str | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.label = np.asarray(self.label, dtype=np.float64)
        n = self.label.shape[0]
        self.categorical = _as_2d(self.categorical, np.int64, n)
        self.numerical = _as_2d(self.numerical, np.float64, n)
        self.timestamp = _col(self.timestamp, np.float64, n)
        self.soft_label = _col(self.soft_label, np.float64, n)
        self.click = _col(self.click, np.int64, n)
        if self.soft_label is not None:
            soft = self.soft_label[~np.isnan(self.soft_label)]
            if np.any((soft < 0.0) | (soft > 1.0)):
                raise ShapeError("soft labels must lie in [0, 1]")

    def __len__(self) -> int:
        return int(self.label.shape[0])

    @property
    def observed(self) -> npt.NDArray[np.bool_]:
        """Rows whose hard label is real (not a pseudo-label)."""
        if self.soft_label is None:
            return np.ones(len(self), dtype=bool)
        return np.isnan(self.soft_label)

    @property
    def n_pseudo(self) -> int:
        return int((~self.observed).sum())

    def take(self, index: npt.ArrayLike) -> SampleBatch:
        idx = np.asarray(index, dtype=np.int64)
        return SampleBatch(
            categorical=self.categorical[idx],
            numerical=self.numerical[idx],
            label=self.label[idx],
            timestamp=self.timestamp[idx],
            soft_label=None if self.soft_label is None else self.soft_label[idx],
            click=None if self.click is None else self.click[idx],
        )

    def slice(self, start: int, stop: int) -> SampleBatch:
        return self.take(np.arange(start, min(stop, len(self))))

    @classmethod
    def concat(cls, parts: Sequence[SampleBatch]) -> SampleBatch:
        parts = [p for p in parts if p is not None]
        if not parts:
            raise ShapeError("cannot concatenate zero batches")
        any_soft = any(p.soft_label is not None for p in parts)
        all_click = all(p.click is not None for p in parts)
        return cls(
            categorical=np.concatenate([p.categorical for p in parts]),
            numerical=np.concatenate([p.numerical for p in parts]),
            label=np.concatenate([p.label for p in parts]),
            timestamp=np.concatenate([p.timestamp for p in parts]),
            soft_label=(
                np.concatenate(
                    [p.soft_label if p.soft_label is not None else np.full(len(p), np.nan)
                     for p in parts]
                )
                if any_soft
                else None
            ),
            click=np.concatenate([p.click for p in parts]) if all_click else None,
        )

    def is_time_sorted(self) -> bool:
        return bool(np.all(np.diff(self.timestamp) >= 0.0))

    def sorted_by_time(self) -> SampleBatch:
        if self.is_time_sorted():
            return self
        return self.take(np.argsort(self.timestamp, kind="stable"))

    def batches(self, size: int) -> Iterator[SampleBatch]:
        """Consecutive batches in stored order."""
        for start in range(0, len(self), size):
            yield self.slice(start, start + size)

    def fingerprint(self) -> str:
        """sha256 over every column; identifies an evaluation split."""
        if self._fingerprint is None:
            h = hashlib.sha256()
            for arr in (self.categorical, self.numerical, self.label, self.timestamp):
                h.update(np.ascontiguousarray(arr).tobytes())
            self._fingerprint = h.hexdigest()
        return self._fingerprint


def check_batch(schema: FieldSchema, batch: SampleBatch) -> None:
    """Raise if ``batch`` does not conform to ``schema``."""
    n_cat, n_num = len(schema.categorical), len(schema.numerical)
    if batch.categorical.shape[1] != n_cat or batch.numerical.shape[1] != n_num:
        raise SchemaError(
            f"batch has {batch.categorical.shape[1]} categorical / {batch.numerical.shape[1]} "
            f"numerical columns, schema expects {n_cat} / {n_num}"
        )
    if n_cat and len(batch):
        sizes = np.array([f.vocab_size for f in schema.categorical])
        bad = (batch.categorical < 0) | (batch.categorical >= sizes[np.newaxis, :])
        if bad.any():
            row, col = np.argwhere(bad)[0]
            raise InputError(
                f"token {batch.categorical[row, col]} out of vocabulary for field "
                f"{schema.categorical[col].name!r} (size {sizes[col]})"
            )
