"""Embedding tables, interaction networks and hand-derived forward/backward passes.

A model is ``theta = {E, theta_net}``: one shared embedding table whose rows
are sliced per field, plus an interaction network mapping the flattened
``(num_fields x dim)`` field embeddings to a scalar logit. Numerical fields
own a single row that is scaled by the feature value.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import expit

from crossadapt.data.schema import FieldSchema, SampleBatch, check_batch
from crossadapt.errors import ShapeError, StateError

EMBEDDING = "embedding"


class ArchKind(str, Enum):
    """Interaction network architectures."""

    MLP = "mlp"
    FM_MLP = "fm_mlp"


class ModelSpec(BaseModel):
    """Architecture descriptor for a prediction model."""

    model_config = ConfigDict(extra="forbid")

    arch: ArchKind = Field(default=ArchKind.MLP, description="mlp or fm_mlp")
    embedding_dim: int = Field(default=8, ge=1, description="Embedding dimension d")
    hidden: list[int] = Field(
        default_factory=lambda: [64, 32, 4], description="Hidden layer widths"
    )


@dataclass
class EmbeddingTable:
    """Vocabulary-indexed ``V x d`` table."""

    weights: npt.NDArray[np.float64]
    frozen: bool = False

    @property
    def vocab_size(self) -> int:
        return int(self.weights.shape[0])

    @property
    def dim(self) -> int:
        return int(self.weights.shape[1])


@dataclass
class InteractionNet:
    """Dense ReLU layers ending in a scalar logit, optionally plus an FM term."""

    arch: ArchKind
    layer_dims: list[int]
    weights: list[npt.NDArray[np.float64]]
    biases: list[npt.NDArray[np.float64]]

    def parameter_names(self) -> list[str]:
        names = []
        for i in range(len(self.weights)):
            names += [f"net.W{i}", f"net.b{i}"]
        return names


class GradientSet(dict[str, npt.NDArray[np.float64]]):
    """Named gradient blocks matching a model's trainable layout."""

    def add_(self, other: GradientSet) -> GradientSet:
        for name, g in other.items():
            if name in self:
                self[name] = self[name] + g
            else:
                self[name] = g.copy()
        return self

    def scaled(self, factor: float) -> GradientSet:
        return GradientSet({k: v * factor for k, v in self.items()})

    @classmethod
    def zeros_like(cls, model: PredictionModel) -> GradientSet:
        return cls({k: np.zeros_like(v) for k, v in model.trainable().items()})


@dataclass
class ForwardCache:
    """Activations recorded by :func:`forward` for :func:`backward`."""

    rows: npt.NDArray[np.int64]
    scales: npt.NDArray[np.float64]
    emb: npt.NDArray[np.float64]
    inputs: list[npt.NDArray[np.float64]]
    pre_acts: list[npt.NDArray[np.float64]]
    logits: npt.NDArray[np.float64]
    version: int
    model_id: int


@dataclass
class PredictionModel:
    """Embedding table + interaction network over an ordered field schema."""

    embedding: EmbeddingTable
    net: InteractionNet
    field_schema: FieldSchema
    spec: ModelSpec
    version: int = field(default=0, compare=False)

    def parameters(self) -> dict[str, npt.NDArray[np.float64]]:
        """Every parameter block; the two partitions are ``embedding`` and ``net.*``."""
        params = {EMBEDDING: self.embedding.weights}
        for i, (w, b) in enumerate(zip(self.net.weights, self.net.biases)):
            params[f"net.W{i}"] = w
            params[f"net.b{i}"] = b
        return params

    def trainable(self) -> dict[str, npt.NDArray[np.float64]]:
        params = self.parameters()
        if self.embedding.frozen:
            del params[EMBEDDING]
        return params

    def freeze_embedding(self, frozen: bool = True) -> None:
        self.embedding.frozen = frozen

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, arr in self.parameters().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> npt.NDArray[np.float64]:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_model(spec: ModelSpec, schema: FieldSchema, seed: int) -> PredictionModel:
    """Randomly initialised model.

    Embeddings are uniform in ``[-1/sqrt(d), 1/sqrt(d)]``; dense layers use
    Glorot-uniform weights and zero biases.
    """
    rng = np.random.default_rng(seed)
    d = spec.embedding_dim
    bound = 1.0 / np.sqrt(d)
    table = rng.uniform(-bound, bound, size=(schema.total_rows, d))
    dims = [schema.num_fields * d, *spec.hidden, 1]
    weights = [_glorot(rng, dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
    biases = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
    return PredictionModel(
        embedding=EmbeddingTable(weights=table),
        net=InteractionNet(arch=spec.arch, layer_dims=dims, weights=weights, biases=biases),
        field_schema=schema,
        spec=spec,
    )


def with_embedding(model: PredictionModel, table: npt.NDArray[np.float64]) -> PredictionModel:
    """Replace the embedding table, e.g. with a projected teacher table."""
    table = np.array(table, dtype=np.float64)
    if table.shape != model.embedding.weights.shape:
        raise ShapeError(
            f"embedding shape {table.shape} != model layout {model.embedding.weights.shape}"
        )
    model.embedding = EmbeddingTable(weights=table, frozen=model.embedding.frozen)
    model.version += 1
    return model


def _lookup(model: PredictionModel, batch: SampleBatch) -> tuple[np.ndarray, np.ndarray]:
    schema = model.field_schema
    b = len(batch)
    cat_offsets = np.array([f.offset for f in schema.categorical], dtype=np.int64)
    num_offsets = np.array([f.offset for f in schema.numerical], dtype=np.int64)
    num_rows = np.broadcast_to(num_offsets, (b, len(num_offsets)))
    rows = np.concatenate([batch.categorical + cat_offsets[np.newaxis, :], num_rows], axis=1)
    scales = np.concatenate([np.ones((b, len(cat_offsets))), batch.numerical], axis=1)
    return rows, scales


def forward(
    model: PredictionModel, batch: SampleBatch
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64], ForwardCache]:
    """Return ``(probs, logits, cache)`` with ``probs = sigmoid(logits)``."""
    check_batch(model.field_schema, batch)
    rows, scales = _lookup(model, batch)
    emb = model.embedding.weights[rows] * scales[..., np.newaxis]
    h = emb.reshape(len(batch), -1)
    inputs, pre_acts = [], []
    n_layers = len(model.net.weights)
    for i, (w, b) in enumerate(zip(model.net.weights, model.net.biases)):
        inputs.append(h)
        z = h @ w + b
        pre_acts.append(z)
        h = np.maximum(z, 0.0) if i < n_layers - 1 else z
    logits = h[:, 0]
    if model.net.arch == ArchKind.FM_MLP:
        s = emb.sum(axis=1)
        logits = logits + 0.5 * ((s * s).sum(axis=1) - (emb * emb).sum(axis=(1, 2)))
    cache = ForwardCache(
        rows=rows,
        scales=scales,
        emb=emb,
        inputs=inputs,
        pre_acts=pre_acts,
        logits=logits,
        version=model.version,
        model_id=id(model),
    )
    return expit(logits), logits, cache


def predict(
    model: PredictionModel, batch: SampleBatch, chunk: int = 65536
) -> npt.NDArray[np.float64]:
    """Probabilities for a possibly large batch, evaluated in chunks."""
    out = [forward(model, part)[0] for part in batch.batches(chunk)]
    return np.concatenate(out) if out else np.zeros(0)


def backward(
    model: PredictionModel, cache: ForwardCache, dlogits: npt.NDArray[np.float64]
) -> GradientSet:
    """Gradients of a loss given ``dloss/dlogit`` per sample.

    Frozen embedding tables get no gradient block.
    """
    if cache.model_id != id(model) or cache.version != model.version:
        raise StateError("forward cache is stale: model changed since the forward pass")
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != cache.logits.shape:
        raise ShapeError(f"dlogits shape {dlogits.shape} != batch shape {cache.logits.shape}")
    grads = GradientSet()
    g = dlogits[:, np.newaxis]
    for i in reversed(range(len(model.net.weights))):
        grads[f"net.W{i}"] = cache.inputs[i].T @ g
        grads[f"net.b{i}"] = g.sum(axis=0)
        g = g @ model.net.weights[i].T
        if i > 0:
            g = g * (cache.pre_acts[i - 1] > 0.0)
    if model.embedding.frozen:
        return grads
    g_emb = g.reshape(cache.emb.shape)
    if model.net.arch == ArchKind.FM_MLP:
        s = cache.emb.sum(axis=1, keepdims=True)
        g_emb = g_emb + dlogits[:, np.newaxis, np.newaxis] * (s - cache.emb)
    d = model.embedding.dim
    g_table = np.zeros_like(model.embedding.weights)
    np.add.at(g_table, cache.rows.ravel(), (g_emb * cache.scales[..., np.newaxis]).reshape(-1, d))
    grads[EMBEDDING] = g_table
    return grads


def clone_frozen(model: PredictionModel) -> PredictionModel:
    """Independent deep copy; source and copy evolve separately."""
    twin = copy.deepcopy(model)
    twin.version = model.version
    return twin
