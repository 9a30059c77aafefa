"""Asymmetric teacher-student co-evolution over a time-ordered stream.

Every step the student takes one Adam update on ``BCE + lambda * KD`` with
the teacher's predictions from before any update this step. The teacher only
accumulates its task-loss gradient ``g_T``; every ``tau`` steps it applies one
Adam update with ``g_T`` and resets the accumulator. Each streaming batch may
be augmented with ``floor(r_enh * |B|)`` rows replayed from the training split.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import numpy.typing as npt
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from crossadapt.data.schema import SampleBatch
from crossadapt.errors import DataError, MetricUndefinedError, ProtocolError, StateError
from crossadapt.evaluation.metrics import auc
from crossadapt.model.checkpoint import save_checkpoint
from crossadapt.model.core import GradientSet, PredictionModel, backward, forward
from crossadapt.model.losses import bce_loss, distill_objective, pseudo_label_logits
from crossadapt.model.optim import AdamState, adam_step
from crossadapt.online.shift import ShiftReport
from crossadapt.transfer.sampler import sample_n

logger = logging.getLogger(__name__)

ONLINE_LOG_COLUMNS = [
    "step",
    "n_stream",
    "n_history",
    "bce",
    "kd",
    "total",
    "teacher_bce",
    "teacher_updated",
    "rolling_logloss",
    "rolling_auc",
    "elapsed_ms",
]


class OnlineConfig(BaseModel):
    """Stage-2 hyperparameters."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    eta_S: float = Field(default=0.001, gt=0.0, description="Student network learning rate")
    eta_T: float = Field(default=0.001, gt=0.0, description="Teacher network learning rate")
    lr_embedding: float = Field(default=0.1, gt=0.0, description="Embedding learning rate")
    tau: int = Field(default=10, ge=1, description="Teacher update interval")
    lam: float = Field(default=0.7, ge=0.0, alias="lambda")
    temperature: float = Field(default=4.0, gt=0.0)
    r_enh: float | None = Field(
        default=None, ge=0.0, description="Override of the shift-derived enhancement ratio"
    )
    batch_size: int = Field(default=4096, ge=1)
    coevolve: bool = Field(default=True, description="False keeps the teacher frozen")
    average_teacher_grad: bool = Field(
        default=False, description="Apply g_T / tau instead of the summed gradient"
    )
    rolling_window: int = Field(default=2000, ge=1, description="Rows in rolling metrics")
    seed: int = Field(default=0)


@dataclass
class CoEvolutionState:
    """Step counter, teacher accumulator and both optimizer states."""

    teacher_adam: AdamState
    student_adam: AdamState
    t: int = 0
    g_T: GradientSet = field(default_factory=GradientSet)
    teacher_updates: int = 0
    accumulated_steps: int = 0

    @classmethod
    def start(cls, teacher: PredictionModel, cfg: OnlineConfig) -> CoEvolutionState:
        return cls(
            teacher_adam=AdamState(lr_embedding=cfg.lr_embedding, lr_net=cfg.eta_T),
            student_adam=AdamState(lr_embedding=cfg.lr_embedding, lr_net=cfg.eta_S),
            g_T=GradientSet.zeros_like(teacher),
        )


@dataclass
class CoStepResult:
    step: int
    n_stream: int
    n_history: int
    bce: float
    kd: float
    total: float
    teacher_bce: float
    teacher_updated: bool
    student_probs: npt.NDArray[np.float64]


def augment_batch(
    batch: SampleBatch,
    history_pool: SampleBatch | None,
    r_enh: float,
    seed: int | np.random.Generator = 0,
) -> SampleBatch:
    """Append ``floor(r_enh * |batch|)`` rows drawn from ``history_pool``.

    Args:
        batch: Streaming rows; they stay first in the result.
        history_pool: Rows to replay from. Only needed when at least one row is drawn.
        r_enh: Enhancement ratio, ``>= 0``.
        seed: Seed or generator for the draw.

    Returns:
        ``batch`` itself when nothing is drawn, otherwise a new concatenated batch.

    Raises:
        DataError: ``r_enh`` is negative, or rows are due and the pool is empty.
    """
    if r_enh < 0.0:
        raise DataError(f"r_enh must be >= 0, got {r_enh}")
    n = int(np.floor(r_enh * len(batch) + 1e-9))
    if n == 0:
        return batch
    if history_pool is None or len(history_pool) == 0:
        raise DataError("historical augmentation requested but the history pool is empty")
    return SampleBatch.concat([batch, sample_n(history_pool, n, seed)])


def _check_layout(teacher: PredictionModel, state: CoEvolutionState) -> None:
    params = teacher.trainable()
    for name, g in state.g_T.items():
        if name not in params or params[name].shape != g.shape:
            raise StateError(f"teacher accumulator block {name!r} does not match the teacher")


def co_step(
    teacher: PredictionModel,
    student: PredictionModel,
    batch: SampleBatch,
    cfg: OnlineConfig,
    state: CoEvolutionState,
    *,
    n_stream: int | None = None,
) -> CoStepResult:
    """One co-evolution step on an already augmented batch.

    ``n_stream`` is the number of leading streaming rows (the rest are
    replayed history); it only affects bookkeeping.
    """
    _check_layout(teacher, state)
    n_stream = len(batch) if n_stream is None else n_stream
    observed = batch.observed

    _, t_logits, t_cache = forward(teacher, batch)
    targets = pseudo_label_logits(batch.soft_label, len(batch))
    targets[observed] = t_logits[observed]

    s_probs, s_logits, s_cache = forward(student, batch)
    terms, dlogits = distill_objective(
        s_logits, batch.label, observed, targets, cfg.lam, cfg.temperature
    )
    adam_step(student, backward(student, s_cache, dlogits), state.student_adam)

    t_terms, t_dlogits = distill_objective(t_logits, batch.label, observed, None, 0.0, 1.0)
    if cfg.coevolve:
        state.g_T.add_(backward(teacher, t_cache, t_dlogits))
        state.accumulated_steps += 1

    state.t += 1
    updated = False
    if cfg.coevolve and state.t % cfg.tau == 0:
        direction = state.g_T.scaled(1.0 / cfg.tau) if cfg.average_teacher_grad else state.g_T
        adam_step(teacher, direction, state.teacher_adam)
        state.teacher_updates += 1
        state.g_T = GradientSet.zeros_like(teacher)
        state.accumulated_steps = 0
        updated = True

    return CoStepResult(
        step=state.t,
        n_stream=n_stream,
        n_history=len(batch) - n_stream,
        bce=terms.bce,
        kd=terms.kd,
        total=terms.total,
        teacher_bce=t_terms.bce,
        teacher_updated=updated,
        student_probs=s_probs[:n_stream],
    )


class RollingMetrics:
    """LogLoss and AUC over the most recent ``window`` prequential predictions."""

    def __init__(self, window: int):
        self.window = window
        self.preds = np.zeros(0)
        self.labels = np.zeros(0)

    def update(self, preds: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
        self.preds = np.concatenate([self.preds, preds])[-self.window :]
        self.labels = np.concatenate([self.labels, labels])[-self.window :]
        logloss = bce_loss(self.preds, self.labels) if self.preds.size else float("nan")
        try:
            roll_auc = auc(self.preds, self.labels)
        except MetricUndefinedError:
            roll_auc = float("nan")
        return logloss, roll_auc


@dataclass
class OnlineLog:
    records: list[dict] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.records)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.records, columns=ONLINE_LOG_COLUMNS)

    def rolling_logloss(self) -> npt.NDArray[np.float64]:
        return np.array([r["rolling_logloss"] for r in self.records])

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.frame().to_csv(path, index=False)
        return path


@dataclass
class OnlineResult:
    teacher: PredictionModel | None
    student: PredictionModel
    log: OnlineLog
    state: CoEvolutionState | None
    r_enh: float
    elapsed_ms: float

    @property
    def steps(self) -> int:
        return self.log.steps


BatchHook = Callable[[int, SampleBatch], None]


def _require_sorted(stream: SampleBatch) -> None:
    if not stream.is_time_sorted():
        raise ProtocolError("online stream is not sorted by timestamp; shuffling is not allowed")


def run_online(
    teacher: PredictionModel,
    student: PredictionModel,
    stream: SampleBatch,
    history_pool: SampleBatch | None,
    shift_report: ShiftReport | None,
    cfg: OnlineConfig,
    *,
    on_batch: BatchHook | None = None,
    checkpoint_dir: Path | None = None,
) -> OnlineResult:
    """Consume ``stream`` once, in timestamp order, co-evolving both models.

    ``r_enh`` comes from ``cfg.r_enh`` when set, else from ``shift_report``,
    else 0. ``on_batch`` sees each streaming batch before augmentation.

    Args:
        teacher: Deployed model; updated in place every ``cfg.tau`` steps
            unless ``cfg.coevolve`` is False.
        student: Model updated in place every step.
        stream: Online rows, sorted by timestamp.
        history_pool: Rows replayed into each batch.
        shift_report: Source of the enhancement ratio when ``cfg.r_enh`` is unset.
        cfg: Learning rates, ``tau``, batch size and KD settings.
        on_batch: Hook called with the step number and the streaming batch.
        checkpoint_dir: Where the final teacher and student are saved, if set.

    Returns:
        Both models, the per-step log, the co-evolution state and the ratio used.

    Raises:
        ProtocolError: ``stream`` is not in timestamp order.
    """
    _require_sorted(stream)
    if cfg.r_enh is not None:
        r_enh = cfg.r_enh
    elif shift_report is not None:
        r_enh = shift_report.r_enh
    else:
        r_enh = 0.0
    teacher.freeze_embedding(False)
    student.freeze_embedding(False)
    state = CoEvolutionState.start(teacher, cfg)
    rng = np.random.default_rng(cfg.seed)
    rolling = RollingMetrics(cfg.rolling_window)
    log = OnlineLog()
    logger.info(
        "Online co-distillation: %d rows, batch %d, tau=%d, r_enh=%.4f, coevolve=%s",
        len(stream),
        cfg.batch_size,
        cfg.tau,
        r_enh,
        cfg.coevolve,
    )
    started = time.perf_counter()
    for batch in stream.batches(cfg.batch_size):
        if on_batch is not None:
            on_batch(state.t, batch)
        augmented = augment_batch(batch, history_pool, r_enh, rng)
        result = co_step(teacher, student, augmented, cfg, state, n_stream=len(batch))
        roll_ll, roll_auc = rolling.update(result.student_probs, batch.label)
        log.records.append(
            {
                "step": result.step,
                "n_stream": result.n_stream,
                "n_history": result.n_history,
                "bce": result.bce,
                "kd": result.kd,
                "total": result.total,
                "teacher_bce": result.teacher_bce,
                "teacher_updated": result.teacher_updated,
                "rolling_logloss": roll_ll,
                "rolling_auc": roll_auc,
                "elapsed_ms": (time.perf_counter() - started) * 1000.0,
            }
        )
    elapsed = (time.perf_counter() - started) * 1000.0
    logger.info("Online stage done: %d steps, %d teacher updates", state.t, state.teacher_updates)
    if checkpoint_dir is not None:
        save_checkpoint(teacher, Path(checkpoint_dir) / "teacher_final.ckpt.json")
        save_checkpoint(student, Path(checkpoint_dir) / "student_final.ckpt.json")
    return OnlineResult(
        teacher=teacher, student=student, log=log, state=state, r_enh=r_enh, elapsed_ms=elapsed
    )


def train_stream(
    model: PredictionModel,
    stream: SampleBatch,
    cfg: OnlineConfig,
    *,
    on_batch: BatchHook | None = None,
) -> OnlineResult:
    """Plain sequential training on ``stream`` (no teacher, no replay)."""
    _require_sorted(stream)
    model.freeze_embedding(False)
    adam = AdamState(lr_embedding=cfg.lr_embedding, lr_net=cfg.eta_S)
    rolling = RollingMetrics(cfg.rolling_window)
    log = OnlineLog()
    started = time.perf_counter()
    for step, batch in enumerate(stream.batches(cfg.batch_size), start=1):
        if on_batch is not None:
            on_batch(step - 1, batch)
        probs, logits, cache = forward(model, batch)
        terms, dlogits = distill_objective(
            logits, batch.label, batch.observed, None, cfg.lam, cfg.temperature
        )
        adam_step(model, backward(model, cache, dlogits), adam)
        roll_ll, roll_auc = rolling.update(probs, batch.label)
        log.records.append(
            {
                "step": step,
                "n_stream": len(batch),
                "n_history": 0,
                "bce": terms.bce,
                "kd": terms.kd,
                "total": terms.total,
                "teacher_bce": float("nan"),
                "teacher_updated": False,
                "rolling_logloss": roll_ll,
                "rolling_auc": roll_auc,
                "elapsed_ms": (time.perf_counter() - started) * 1000.0,
            }
        )
    return OnlineResult(
        teacher=None,
        student=model,
        log=log,
        state=None,
        r_enh=0.0,
        elapsed_ms=(time.perf_counter() - started) * 1000.0,
    )


def recovery_steps(
    rolling_logloss: npt.ArrayLike, drift_step: int, tolerance: float = 0.1
) -> int | None:
    """Steps after ``drift_step`` until rolling LogLoss is back within ``tolerance``.

    The pre-drift level is the value just before the drift; recovery is
    counted from the post-drift peak onward. ``None`` when it never recovers.
    """
    losses = np.asarray(rolling_logloss, dtype=np.float64)
    if not 0 < drift_step < losses.size:
        raise DataError(f"drift step {drift_step} outside the logged range 1..{losses.size - 1}")
    baseline = losses[drift_step - 1]
    post = losses[drift_step:]
    peak = int(np.nanargmax(post))
    within = np.flatnonzero(post[peak:] <= (1.0 + tolerance) * baseline)
    if within.size == 0:
        return None
    return peak + int(within[0])
