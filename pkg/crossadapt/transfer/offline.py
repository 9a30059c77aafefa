"""Stage-1 trainer: projected hand-off, frozen-table distillation, joint training.

The same supervised loop backs the baseline modes; with no teacher and
``lambda = 0`` it is plain BCE training.
"""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Iterator
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import numpy.typing as npt
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from crossadapt.data.schema import SampleBatch
from crossadapt.errors import InvariantViolation, SchemaError
from crossadapt.model.checkpoint import save_checkpoint
from crossadapt.model.core import (
    ModelSpec,
    PredictionModel,
    backward,
    forward,
    init_model,
    with_embedding,
)
from crossadapt.model.losses import distill_objective, pseudo_label_logits
from crossadapt.model.optim import AdamState, adam_step
from crossadapt.transfer.projection import ProjectionPlan, project_model_table
from crossadapt.transfer.sampler import SampledDataset, full_dataset

logger = logging.getLogger(__name__)

PHASE_FROZEN = "frozen_embedding"
PHASE_JOINT = "joint"
PHASE_SUPERVISED = "supervised"

STAGE_LOG_COLUMNS = ["step", "phase", "bce", "kd", "total", "elapsed_ms"]


class TrainerMode(str, Enum):
    """Training protocols compared in experiments."""

    SCRATCH = "scratch"
    SCRATCH_ONLINE = "scratch_online"
    FULL_RETRAIN = "full_retrain"
    VANILLA_KD = "vanilla_kd"
    CROSSADAPT_FULL = "crossadapt_full"
    CROSSADAPT_SAMPLE = "crossadapt_sample"


class DistillConfig(BaseModel):
    """Offline distillation hyperparameters."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    lam: float = Field(default=0.7, ge=0.0, alias="lambda", description="KD weight")
    temperature: float = Field(default=4.0, gt=0.0, description="KD temperature")
    phase1_fraction: float = Field(
        default=0.3, ge=0.0, le=1.0, description="Share of steps with a frozen table"
    )
    epochs: int = Field(default=1, ge=1, description="Passes over the selected data")
    batch_size: int = Field(default=4096, ge=1)
    lr_embedding: float = Field(default=0.1, gt=0.0)
    lr_net: float = Field(default=0.001, gt=0.0)
    shuffle_within_block: bool = Field(
        default=True, description="Shuffle rows inside each temporal block every epoch"
    )
    seed: int = Field(default=0)

    def adam(self) -> AdamState:
        return AdamState(lr_embedding=self.lr_embedding, lr_net=self.lr_net)


@dataclass
class StepRecord:
    step: int
    phase: str
    bce: float
    kd: float
    total: float
    elapsed_ms: float


@dataclass
class StageLog:
    """Per-step loss trace of a training stage."""

    records: list[StepRecord] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.records)

    @property
    def elapsed_ms(self) -> float:
        return self.records[-1].elapsed_ms if self.records else 0.0

    def totals(self) -> npt.NDArray[np.float64]:
        return np.array([r.total for r in self.records])

    def phase(self, name: str) -> list[StepRecord]:
        return [r for r in self.records if r.phase == name]

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.__dict__ for r in self.records], columns=STAGE_LOG_COLUMNS)

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.frame().to_csv(path, index=False)
        return path


def _as_dataset(data: SampleBatch | SampledDataset) -> SampledDataset:
    return data if isinstance(data, SampledDataset) else full_dataset(data)


def epoch_order(
    dataset: SampledDataset, rng: np.random.Generator, shuffle: bool
) -> npt.NDArray[np.int64]:
    """Row order for one pass: blocks oldest first, optionally shuffled inside."""
    parts = []
    for k in range(dataset.n_blocks):
        idx = np.flatnonzero(dataset.block_ids == k)
        parts.append(rng.permutation(idx) if shuffle else idx)
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


def count_steps(n_rows: int, batch_size: int, epochs: int) -> int:
    return epochs * math.ceil(n_rows / batch_size)


def _iter_batches(
    dataset: SampledDataset, cfg: DistillConfig, rng: np.random.Generator
) -> Iterator[SampleBatch]:
    for _ in range(cfg.epochs):
        order = epoch_order(dataset, rng, cfg.shuffle_within_block)
        for start in range(0, order.size, cfg.batch_size):
            yield dataset.samples.take(order[start : start + cfg.batch_size])


def kd_targets(
    batch: SampleBatch, teacher: PredictionModel | None
) -> npt.NDArray[np.float64] | None:
    """Per-row KD target logits: pseudo-label logits, else teacher logits."""
    targets = pseudo_label_logits(batch.soft_label, len(batch))
    if teacher is not None:
        _, t_logits, _ = forward(teacher, batch)
        observed = batch.observed
        targets[observed] = t_logits[observed]
    if np.all(np.isnan(targets)):
        return None
    return targets


def train_step(
    model: PredictionModel,
    batch: SampleBatch,
    adam: AdamState,
    *,
    target_logits: npt.NDArray[np.float64] | None,
    lam: float,
    temperature: float,
):
    """One forward/backward/Adam step; returns the logged loss terms."""
    _, logits, cache = forward(model, batch)
    terms, dlogits = distill_objective(
        logits, batch.label, batch.observed, target_logits, lam, temperature
    )
    adam_step(model, backward(model, cache, dlogits), adam)
    return terms


def train_offline(
    model: PredictionModel,
    data: SampleBatch | SampledDataset,
    cfg: DistillConfig,
    *,
    teacher: PredictionModel | None = None,
    phase1_steps: int = 0,
    adam: AdamState | None = None,
    log: StageLog | None = None,
    checkpoint_dir: Path | None = None,
) -> StageLog:
    """Train ``model`` over ``data`` in block order for ``cfg.epochs`` passes.

    The first ``phase1_steps`` steps keep the embedding table frozen. Without a
    teacher only observed rows train (plus pseudo-labelled rows through KD).
    """
    dataset = _as_dataset(data)
    adam = adam or cfg.adam()
    log = log if log is not None else StageLog()
    rng = np.random.default_rng(cfg.seed)
    supervised = teacher is None
    started = time.perf_counter()
    for step, batch in enumerate(_iter_batches(dataset, cfg, rng)):
        frozen = step < phase1_steps
        model.freeze_embedding(frozen)
        if step == phase1_steps and step > 0:
            logger.info("Phase 1 done after %d steps; unfreezing embeddings", step)
            if checkpoint_dir is not None:
                save_checkpoint(model, Path(checkpoint_dir) / "phase1.ckpt.json")
        terms = train_step(
            model,
            batch,
            adam,
            target_logits=kd_targets(batch, teacher),
            lam=cfg.lam,
            temperature=cfg.temperature,
        )
        if supervised:
            phase = PHASE_SUPERVISED
        else:
            phase = PHASE_FROZEN if frozen else PHASE_JOINT
        log.records.append(
            StepRecord(
                step=log.steps,
                phase=phase,
                bce=terms.bce,
                kd=terms.kd,
                total=terms.total,
                elapsed_ms=(time.perf_counter() - started) * 1000.0,
            )
        )
    model.freeze_embedding(False)
    return log


@dataclass
class OfflineResult:
    """Stage-1 outputs."""

    student: PredictionModel
    log: StageLog
    plan: ProjectionPlan | None
    phase1_steps: int
    total_steps: int


def run_offline_transfer(
    teacher: PredictionModel,
    student: ModelSpec | PredictionModel,
    data: SampleBatch | SampledDataset,
    cfg: DistillConfig,
    *,
    project: bool = True,
    checkpoint_dir: Path | None = None,
) -> OfflineResult:
    """Stage 1: project the teacher table, train with it frozen, then jointly.

    ``student`` is either an architecture spec (a fresh student is built on the
    teacher's field schema with seed ``cfg.seed``) or a ready model sharing
    that schema. The teacher is read-only; a changed checksum raises.
    """
    if isinstance(student, PredictionModel):
        if student.field_schema != teacher.field_schema:
            raise SchemaError("student and teacher field schemas differ")
        model = student
    else:
        model = init_model(student, teacher.field_schema, cfg.seed)

    plan = None
    if project:
        table, plan = project_model_table(
            teacher.embedding.weights, model.embedding.dim, cfg.seed
        )
        with_embedding(model, table)

    dataset = _as_dataset(data)
    total = count_steps(len(dataset), cfg.batch_size, cfg.epochs)
    phase1 = math.floor(cfg.phase1_fraction * total)
    before = teacher.checksum()
    logger.info(
        "Offline transfer: %d rows, %d steps (%d frozen), lambda=%.3g T=%.3g",
        len(dataset),
        total,
        phase1,
        cfg.lam,
        cfg.temperature,
    )
    log = train_offline(
        model,
        dataset,
        cfg,
        teacher=teacher,
        phase1_steps=phase1,
        checkpoint_dir=checkpoint_dir,
    )
    if teacher.checksum() != before:
        raise InvariantViolation("teacher parameters changed during offline transfer")
    if checkpoint_dir is not None:
        save_checkpoint(
            model,
            Path(checkpoint_dir) / "student.ckpt.json",
            projection=None if plan is None else plan.to_dict(),
        )
    return OfflineResult(
        student=model, log=log, plan=plan, phase1_steps=phase1, total_steps=total
    )
