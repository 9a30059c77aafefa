"""Seeded click/conversion stream generator with scheduled drift.

Rows are drawn in order; row ``i`` gets timestamp ``i``. Categorical tokens
follow Zipf-like frequencies, numerical features are exponential counts, and
labels come from a logistic ground truth (per-token weights, a low-rank
pairwise interaction and numerical weights on ``log2``-compressed values).
At each drift point the weights are perturbed and, optionally, token
frequencies reshuffled and numerical scales changed. The intercept of every
segment is calibrated so the segment's mean positive rate hits the target.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.optimize import brentq
from scipy.special import expit

from crossadapt.data.preprocess import compress
from crossadapt.data.schema import ColumnKind, ColumnSpec, SchemaConfig

logger = logging.getLogger(__name__)

LABEL = "label"
CLICK = "click"
TIMESTAMP = "ts"
LATENT_DIM = 4


class DriftPoint(BaseModel):
    """A change in the generating process starting at ``start_fraction`` of the stream."""

    model_config = ConfigDict(extra="forbid")

    start_fraction: float = Field(..., ge=0.0, lt=1.0)
    perturbation: float = Field(default=1.0, ge=0.0, description="Std of added weight noise")
    reshuffle: bool = Field(default=True, description="Redraw token frequency ranks")
    numerical_scale: float = Field(
        default=1.0, gt=0.0, description="Multiplier on numerical feature scales"
    )


class SyntheticSpec(BaseModel):
    """Generator settings."""

    model_config = ConfigDict(extra="forbid")

    n_samples: int = Field(default=200_000, ge=1)
    vocab_sizes: list[int] = Field(
        default_factory=lambda: [40, 80, 150, 20, 300, 30, 60, 12],
        description="Raw vocabulary size of each categorical field",
    )
    n_numerical: int = Field(default=4, ge=0)
    weight_scale: float = Field(default=1.0, ge=0.0, description="Std of token weights")
    interaction_scale: float = Field(
        default=0.5, ge=0.0, description="Std of latent factors in the pairwise term"
    )
    numerical_weight_scale: float = Field(default=0.3, ge=0.0)
    numerical_mean: float = Field(default=10.0, gt=0.0, description="Mean raw count")
    zipf_exponent: float = Field(default=1.1, gt=0.0)
    drift: list[DriftPoint] = Field(
        default_factory=lambda: [DriftPoint(start_fraction=0.85, perturbation=1.0)]
    )
    base_rate: float = Field(
        default=0.1, gt=0.0, lt=1.0, description="Positive rate; conversion given click for pCVR"
    )
    pcvr: bool = Field(default=False, description="Add a click layer above conversions")
    click_rate: float = Field(default=0.2, gt=0.0, lt=1.0, description="Target click rate")
    seed: int = Field(default=0)

    @field_validator("vocab_sizes")
    @classmethod
    def _vocab_at_least_two(cls, v: list[int]) -> list[int]:
        if any(size < 2 for size in v):
            raise ValueError("every vocabulary size must be >= 2")
        return v

    @model_validator(mode="after")
    def _drift_increasing(self) -> SyntheticSpec:
        starts = [d.start_fraction for d in self.drift]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("drift start fractions must be strictly increasing")
        return self

    @property
    def categorical_names(self) -> list[str]:
        return [f"C{i + 1}" for i in range(len(self.vocab_sizes))]

    @property
    def numerical_names(self) -> list[str]:
        return [f"I{i + 1}" for i in range(self.n_numerical)]

    def drift_rows(self) -> list[int]:
        return [int(round(d.start_fraction * self.n_samples)) for d in self.drift]

    def digest(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode()).hexdigest()


def schema_for(spec: SyntheticSpec) -> SchemaConfig:
    """The SchemaConfig matching :func:`generate_stream` output."""
    cols = [ColumnSpec(name=n, kind=ColumnKind.NUMERICAL) for n in spec.numerical_names]
    cols += [ColumnSpec(name=n, kind=ColumnKind.CATEGORICAL) for n in spec.categorical_names]
    cols.append(ColumnSpec(name=LABEL, kind=ColumnKind.LABEL))
    if spec.pcvr:
        cols.append(ColumnSpec(name=CLICK, kind=ColumnKind.CLICK))
    cols.append(ColumnSpec(name=TIMESTAMP, kind=ColumnKind.TIMESTAMP))
    return SchemaConfig(
        columns=cols,
        vocab_threshold=10,
        item_field=spec.categorical_names[0] if spec.categorical_names else None,
    )


@dataclass
class _Truth:
    """Logistic ground truth for one output layer."""

    token_w: list[np.ndarray]
    latent: list[np.ndarray]
    num_w: np.ndarray

    def perturbed(self, rng: np.random.Generator, scale: float) -> _Truth:
        return _Truth(
            token_w=[w + rng.normal(0.0, scale, w.shape) for w in self.token_w],
            latent=[u + rng.normal(0.0, 0.5 * scale, u.shape) for u in self.latent],
            num_w=self.num_w + rng.normal(0.0, 0.3 * scale, self.num_w.shape),
        )

    def scores(self, tokens: np.ndarray, numerical: np.ndarray) -> np.ndarray:
        s = np.zeros(tokens.shape[0])
        lat_sum = np.zeros((tokens.shape[0], LATENT_DIM))
        lat_sq = np.zeros(tokens.shape[0])
        for f, (w, u) in enumerate(zip(self.token_w, self.latent)):
            s += w[tokens[:, f]]
            e = u[tokens[:, f]]
            lat_sum += e
            lat_sq += (e * e).sum(axis=1)
        s += 0.5 * ((lat_sum * lat_sum).sum(axis=1) - lat_sq)
        if numerical.shape[1]:
            s += compress(numerical) @ self.num_w
        return s


def _new_truth(spec: SyntheticSpec, rng: np.random.Generator) -> _Truth:
    return _Truth(
        token_w=[rng.normal(0.0, spec.weight_scale, v) for v in spec.vocab_sizes],
        latent=[rng.normal(0.0, spec.interaction_scale, (v, LATENT_DIM)) for v in spec.vocab_sizes],
        num_w=rng.normal(0.0, spec.numerical_weight_scale, spec.n_numerical),
    )


def _zipf_probs(size: int, exponent: float, rng: np.random.Generator) -> np.ndarray:
    weights = 1.0 / np.arange(1, size + 1, dtype=np.float64) ** exponent
    return (weights / weights.sum())[rng.permutation(size)]


def calibrate_intercept(scores: np.ndarray, rate: float) -> float:
    """Intercept ``b`` with ``mean(sigmoid(b + scores)) == rate``."""
    lo, hi = -60.0 - scores.max(), 60.0 - scores.min()
    return float(brentq(lambda b: expit(b + scores).mean() - rate, lo, hi, xtol=1e-12))


def generate_stream(spec: SyntheticSpec) -> pd.DataFrame:
    """Draw the full labelled stream as a raw DataFrame (tokens as strings)."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_samples
    n_fields = len(spec.vocab_sizes)
    bounds = [0, *spec.drift_rows(), n]

    freqs = [_zipf_probs(v, spec.zipf_exponent, rng) for v in spec.vocab_sizes]
    conv = _new_truth(spec, rng)
    click = _new_truth(spec, rng) if spec.pcvr else None
    num_scale = 1.0

    tokens = np.zeros((n, n_fields), dtype=np.int64)
    numerical = np.zeros((n, spec.n_numerical))
    labels = np.zeros(n, dtype=np.int64)
    clicks = np.zeros(n, dtype=np.int64)

    for seg, (start, stop) in enumerate(zip(bounds[:-1], bounds[1:])):
        if seg > 0:
            point = spec.drift[seg - 1]
            conv = conv.perturbed(rng, point.perturbation)
            if click is not None:
                click = click.perturbed(rng, point.perturbation)
            if point.reshuffle:
                freqs = [_zipf_probs(v, spec.zipf_exponent, rng) for v in spec.vocab_sizes]
            num_scale *= point.numerical_scale
        m = stop - start
        if m <= 0:
            continue
        for f, p in enumerate(freqs):
            tokens[start:stop, f] = rng.choice(p.size, size=m, p=p)
        numerical[start:stop] = np.floor(
            rng.exponential(spec.numerical_mean * num_scale, size=(m, spec.n_numerical))
        )
        v = conv.scores(tokens[start:stop], numerical[start:stop])
        v_prob = expit(calibrate_intercept(v, spec.base_rate) + v)
        converted = rng.random(m) < v_prob
        if click is not None:
            u = click.scores(tokens[start:stop], numerical[start:stop])
            clicked = rng.random(m) < expit(calibrate_intercept(u, spec.click_rate) + u)
            clicks[start:stop] = clicked
            converted &= clicked
        labels[start:stop] = converted

    frame = pd.DataFrame(
        {name: numerical[:, i].astype(np.int64) for i, name in enumerate(spec.numerical_names)}
    )
    for f, name in enumerate(spec.categorical_names):
        frame[name] = np.char.add(f"{name.lower()}_", tokens[:, f].astype(str))
    frame[LABEL] = labels
    if spec.pcvr:
        frame[CLICK] = clicks
    frame[TIMESTAMP] = np.arange(n, dtype=np.int64)
    logger.info(
        "Generated %d rows, positive rate %.4f, drift at rows %s",
        n,
        labels.mean() if n else 0.0,
        spec.drift_rows(),
    )
    return frame
