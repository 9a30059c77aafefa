"""Self-describing JSON checkpoint container ("crossadapt-ckpt-v1").

Parameter blocks are stored as base64 of their little-endian float64 bytes,
so save -> load is bit-exact.
"""

from __future__ import annotations

import base64
import json
import logging
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, Field, ValidationError

from crossadapt.data.schema import FieldSchema
from crossadapt.errors import DataError, SchemaError
from crossadapt.model.core import (
    ArchKind,
    EmbeddingTable,
    InteractionNet,
    ModelSpec,
    PredictionModel,
)

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = "crossadapt-ckpt-v1"


class EncodedArray(BaseModel):
    """A float64 array as shape + base64 bytes."""

    shape: list[int]
    dtype: str = "<f8"
    data: str

    @classmethod
    def encode(cls, arr: npt.ArrayLike) -> EncodedArray:
        a = np.ascontiguousarray(arr, dtype="<f8")
        return cls(shape=list(a.shape), data=base64.b64encode(a.tobytes()).decode("ascii"))

    def decode(self) -> npt.NDArray[np.float64]:
        raw = base64.b64decode(self.data)
        return np.frombuffer(raw, dtype=self.dtype).reshape(self.shape).astype(np.float64)


class Checkpoint(BaseModel):
    """Everything needed to rebuild a PredictionModel."""

    version: str = Field(default=CHECKPOINT_VERSION)
    spec: ModelSpec
    field_schema: FieldSchema
    layer_dims: list[int]
    embedding_frozen: bool = False
    parameters: dict[str, EncodedArray]
    projection: dict[str, Any] | None = Field(
        default=None, description="Serialized ProjectionPlan used to initialise the table"
    )
    metadata: dict[str, Any] = Field(default_factory=dict)


def to_checkpoint(
    model: PredictionModel,
    *,
    projection: dict[str, Any] | None = None,
    metadata: dict[str, Any] | None = None,
) -> Checkpoint:
    return Checkpoint(
        spec=model.spec,
        field_schema=model.field_schema,
        layer_dims=list(model.net.layer_dims),
        embedding_frozen=model.embedding.frozen,
        parameters={k: EncodedArray.encode(v) for k, v in model.parameters().items()},
        projection=projection,
        metadata=metadata or {},
    )


def from_checkpoint(ckpt: Checkpoint) -> PredictionModel:
    if ckpt.version != CHECKPOINT_VERSION:
        raise SchemaError(f"unsupported checkpoint version {ckpt.version!r}")
    params = {k: v.decode() for k, v in ckpt.parameters.items()}
    n_layers = len(ckpt.layer_dims) - 1
    try:
        weights = [params[f"net.W{i}"] for i in range(n_layers)]
        biases = [params[f"net.b{i}"] for i in range(n_layers)]
        table = params["embedding"]
    except KeyError as exc:
        raise SchemaError(f"checkpoint is missing parameter block {exc}") from exc
    return PredictionModel(
        embedding=EmbeddingTable(weights=table, frozen=ckpt.embedding_frozen),
        net=InteractionNet(
            arch=ArchKind(ckpt.spec.arch),
            layer_dims=list(ckpt.layer_dims),
            weights=weights,
            biases=biases,
        ),
        field_schema=ckpt.field_schema,
        spec=ckpt.spec,
    )


def save_checkpoint(model: PredictionModel, path: str | Path, **extra: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_checkpoint(model, **extra).model_dump_json(indent=2))
    logger.debug("Saved checkpoint %s", path)
    return path


def load_checkpoint(path: str | Path) -> tuple[PredictionModel, Checkpoint]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    try:
        ckpt = Checkpoint.model_validate(json.loads(path.read_text()))
    except (json.JSONDecodeError, ValidationError) as exc:
        raise SchemaError(f"{path.name} is not a crossadapt checkpoint: {exc}") from exc
    return from_checkpoint(ckpt), ckpt


class CheckpointStore:
    """Simple file-based checkpoint storage keyed by name."""

    def __init__(self, storage_dir: str | Path):
        self.storage_dir = Path(storage_dir)
        self.storage_dir.mkdir(parents=True, exist_ok=True)

    def _get_path(self, name: str) -> Path:
        return self.storage_dir / f"{name}.ckpt.json"

    def save(self, name: str, model: PredictionModel, **extra: Any) -> Path:
        return save_checkpoint(model, self._get_path(name), **extra)

    def load(self, name: str) -> PredictionModel | None:
        path = self._get_path(name)
        if not path.exists():
            return None
        return load_checkpoint(path)[0]

    def list_all(self) -> list[str]:
        names = (p.name.removesuffix(".ckpt.json") for p in self.storage_dir.glob("*.ckpt.json"))
        return sorted(names)
