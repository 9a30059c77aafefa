"""Registry of training protocols.

Each :class:`ModeRunner` takes a prepared dataset, a validated run config and
(for distillation modes) the deployed teacher, trains one student and
evaluates it on the test split. Runners never mutate the teacher they are
given; co-evolving modes work on a copy.
"""

from __future__ import annotations

import abc
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from crossadapt.config import RunConfig
from crossadapt.data.schema import SampleBatch
from crossadapt.data.splits import HistoryGrant, PreparedData, task_rows, unclicked_rows
from crossadapt.errors import ContractError, ParameterError
from crossadapt.evaluation.metrics import RunReport, evaluate, spearman
from crossadapt.model.core import PredictionModel, clone_frozen, init_model, predict
from crossadapt.online.codistill import OnlineLog, run_online, train_stream
from crossadapt.online.shift import ShiftReport, compute_shift
from crossadapt.transfer.offline import (
    StageLog,
    TrainerMode,
    run_offline_transfer,
    train_offline,
)
from crossadapt.transfer.sampler import (
    SampledDataset,
    full_dataset,
    temporal_diversity_sample,
    unclicked_augment,
)

logger = logging.getLogger(__name__)


@dataclass
class ModeContext:
    """Inputs shared by every runner of one (config, seed) cell."""

    prepared: PreparedData
    cfg: RunConfig
    seed: int
    teacher: PredictionModel | None = None
    shift_report: ShiftReport | None = None
    out_dir: Path | None = None

    @property
    def pcvr(self) -> bool:
        return self.prepared.splits.train.click is not None

    def require_teacher(self, mode: TrainerMode | None = None) -> PredictionModel:
        if self.teacher is None:
            name = (mode or self.cfg.mode).value
            raise ContractError(f"mode {name} needs a trained teacher")
        return self.teacher

    def shift(self) -> ShiftReport:
        """Shift statistics of the training split, computed once per context."""
        if self.shift_report is None:
            self.shift_report = compute_shift(
                task_rows(self.prepared.splits.train),
                self.cfg.shift,
                field_schema=self.prepared.field_schema,
            )
        return self.shift_report

    def checkpoint_dir(self, mode: TrainerMode) -> Path | None:
        if self.out_dir is None:
            return None
        return self.out_dir / mode.value / f"seed{self.seed}"


@dataclass
class ModeResult:
    """A trained student, its test report and what the training cost."""

    mode: TrainerMode
    seed: int
    model: PredictionModel
    report: RunReport | None = None
    offline_steps: int = 0
    online_steps: int = 0
    offline_ms: float = 0.0
    online_ms: float = 0.0
    offline_log: StageLog | None = None
    online_log: OnlineLog | None = None
    notes: dict[str, Any] = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return self.offline_steps + self.online_steps

    @property
    def elapsed_ms(self) -> float:
        return self.offline_ms + self.online_ms

    def row(self) -> dict[str, Any]:
        """One line of the experiment table."""
        return {
            "method": self.mode.value,
            "seed": self.seed,
            "auc": self.report.auc if self.report else None,
            "logloss": self.report.logloss if self.report else None,
            "time_s": self.elapsed_ms / 1000.0,
            "steps": self.steps,
            "offline_steps": self.offline_steps,
            "online_steps": self.online_steps,
            "pcvr_bias": self.report.pcvr_bias if self.report else None,
            "spearman": self.report.spearman if self.report else None,
        }


class ModeRunner(abc.ABC):
    """One training protocol.

    Subclasses set ``mode`` and ``description`` and implement :meth:`train`;
    :meth:`run` adds test-split evaluation.
    """

    mode: TrainerMode
    description: str = ""
    uses_teacher: bool = False

    @abc.abstractmethod
    def train(self, ctx: ModeContext) -> ModeResult:
        """Train a student; ``report`` is filled in by :meth:`run`."""
        ...

    def run(self, ctx: ModeContext) -> ModeResult:
        if self.uses_teacher:
            ctx.require_teacher(self.mode)
        logger.info("Running mode %s (seed %d)", self.mode.value, ctx.seed)
        result = self.train(ctx)
        result.report = evaluate_student(ctx, result.model, label=self.mode.value)
        result.report.steps = result.steps
        result.report.elapsed_ms = result.elapsed_ms
        logger.info(
            "Mode %s seed %d: AUC=%s LogLoss=%s steps=%d",
            self.mode.value,
            ctx.seed,
            _fmt(result.report.auc),
            _fmt(result.report.logloss),
            result.steps,
        )
        return result


def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.5f}"


class ModeRegistry:
    """Maps each TrainerMode to its runner class."""

    def __init__(self) -> None:
        self._runners: dict[TrainerMode, type[ModeRunner]] = {}

    def register(self, runner_cls: type[ModeRunner]) -> type[ModeRunner]:
        """Register a runner; usable as a class decorator."""
        mode = getattr(runner_cls, "mode", None)
        if mode is None:
            raise ValueError(f"Runner class {runner_cls.__name__} has no mode")
        if mode in self._runners:
            logger.warning("Overwriting runner for mode '%s' in registry", mode.value)
        self._runners[mode] = runner_cls
        return runner_cls

    def get(self, mode: TrainerMode | str) -> type[ModeRunner]:
        mode = TrainerMode(mode)
        if mode not in self._runners:
            raise ParameterError(f"no runner registered for mode {mode.value!r}")
        return self._runners[mode]

    def has(self, mode: TrainerMode | str) -> bool:
        return TrainerMode(mode) in self._runners

    def names(self) -> list[str]:
        return sorted(m.value for m in self._runners)

    def info(self) -> list[dict[str, str]]:
        return [
            {"name": m.value, "description": cls.description}
            for m, cls in sorted(self._runners.items(), key=lambda kv: kv[0].value)
        ]


registry = ModeRegistry()


def evaluate_student(
    ctx: ModeContext,
    model: PredictionModel,
    *,
    label: str = "",
    batch: SampleBatch | None = None,
) -> RunReport:
    """Report on ``batch`` (default: the test split).

    In pCVR data the metrics use clicked rows and Spearman against the teacher
    is measured on unclicked rows.
    """
    test = ctx.prepared.splits.test if batch is None else batch
    schema = ctx.prepared.schema
    item_column = None
    if schema.item_field is not None:
        item_column = ctx.prepared.field_schema.index_of(schema.item_field)
    report = evaluate(
        model,
        task_rows(test),
        reference=ctx.teacher,
        item_column=item_column,
        label=label,
    )
    if ctx.pcvr and ctx.teacher is not None:
        exposed = unclicked_rows(test)
        if len(exposed) >= 2:
            report.spearman = spearman(predict(model, exposed), predict(ctx.teacher, exposed))
    return report


def _fresh_student(ctx: ModeContext) -> PredictionModel:
    return init_model(ctx.cfg.student, ctx.prepared.field_schema, ctx.seed)


def _stream(ctx: ModeContext, model: PredictionModel, result: ModeResult) -> None:
    """Plain sequential pass over the online split."""
    online = train_stream(model, task_rows(ctx.prepared.splits.online), ctx.cfg.online)
    result.online_steps = online.steps
    result.online_ms = online.elapsed_ms
    result.online_log = online.log


def _with_unclicked(
    ctx: ModeContext, dataset: SampledDataset, teacher: PredictionModel
) -> SampledDataset:
    """Add teacher-labelled unclicked exposures in pCVR data when ``r_unclick > 0``."""
    if not ctx.pcvr or ctx.cfg.sampling.r_unclick == 0.0:
        return dataset
    pool = unclicked_rows(ctx.prepared.splits.train)
    return unclicked_augment(dataset, pool, teacher, ctx.cfg.sampling)


def distill_dataset(
    ctx: ModeContext, teacher: PredictionModel, *, sampled: bool = True
) -> SampledDataset:
    """Stage-1 data: a temporal-diversity sample (or all of train), plus unclicked rows."""
    train = task_rows(ctx.prepared.splits.train)
    if sampled and not ctx.cfg.ablations.no_sampling:
        dataset = temporal_diversity_sample(train, ctx.cfg.sampling)
    else:
        dataset = full_dataset(train, ctx.cfg.sampling.K)
    return _with_unclicked(ctx, dataset, teacher)


@registry.register
class ScratchRunner(ModeRunner):
    mode = TrainerMode.SCRATCH
    description = "Random init, one pass over train, then sequential over online"

    def train(self, ctx: ModeContext) -> ModeResult:
        model = _fresh_student(ctx)
        log = train_offline(model, task_rows(ctx.prepared.splits.train), ctx.cfg.distill)
        result = ModeResult(
            mode=self.mode,
            seed=ctx.seed,
            model=model,
            offline_steps=log.steps,
            offline_ms=log.elapsed_ms,
            offline_log=log,
        )
        _stream(ctx, model, result)
        return result


@registry.register
class ScratchOnlineRunner(ModeRunner):
    mode = TrainerMode.SCRATCH_ONLINE
    description = "Random init, sequential training on online only"

    def train(self, ctx: ModeContext) -> ModeResult:
        model = _fresh_student(ctx)
        result = ModeResult(
            mode=self.mode,
            seed=ctx.seed,
            model=model,
        )
        _stream(ctx, model, result)
        return result


@registry.register
class FullRetrainRunner(ModeRunner):
    mode = TrainerMode.FULL_RETRAIN
    description = "Upper bound: random init over hist + train, then online"

    def train(self, ctx: ModeContext) -> ModeResult:
        splits = ctx.prepared.splits
        data = SampleBatch.concat(
            [task_rows(splits.hist(HistoryGrant.FULL_RETRAIN)), task_rows(splits.train)]
        )
        model = _fresh_student(ctx)
        log = train_offline(model, data, ctx.cfg.distill)
        result = ModeResult(
            mode=self.mode,
            seed=ctx.seed,
            model=model,
            offline_steps=log.steps,
            offline_ms=log.elapsed_ms,
            offline_log=log,
        )
        _stream(ctx, model, result)
        return result


@registry.register
class VanillaKDRunner(ModeRunner):
    mode = TrainerMode.VANILLA_KD
    description = "Random init, KD from a frozen teacher over train, then online KD"
    uses_teacher = True

    def train(self, ctx: ModeContext) -> ModeResult:
        teacher = clone_frozen(ctx.require_teacher())
        splits = ctx.prepared.splits
        dataset = _with_unclicked(
            ctx, full_dataset(task_rows(splits.train), ctx.cfg.sampling.K), teacher
        )
        model = _fresh_student(ctx)
        log = train_offline(model, dataset, ctx.cfg.distill, teacher=teacher)
        online_cfg = ctx.cfg.online.model_copy(update={"coevolve": False, "r_enh": 0.0})
        online = run_online(
            teacher,
            model,
            task_rows(splits.online),
            None,
            None,
            online_cfg,
            checkpoint_dir=ctx.checkpoint_dir(self.mode),
        )
        return ModeResult(
            mode=self.mode,
            seed=ctx.seed,
            model=model,
            offline_steps=log.steps,
            online_steps=online.steps,
            offline_ms=log.elapsed_ms,
            online_ms=online.elapsed_ms,
            offline_log=log,
            online_log=online.log,
        )


class _CrossAdaptRunner(ModeRunner):
    """Stage 1 (projection, progressive distillation) then stage 2 (co-evolution).

    ``RunConfig.ablations`` switch off single components.
    """

    uses_teacher = True
    sampled: bool = True

    def train(self, ctx: ModeContext) -> ModeResult:
        ablations = ctx.cfg.ablations
        teacher = clone_frozen(ctx.require_teacher())
        ckpt_dir = ctx.checkpoint_dir(self.mode)
        result = ModeResult(
            mode=self.mode,
            seed=ctx.seed,
            model=_fresh_student(ctx),
            notes={"ablations": ablations.active()},
        )

        if not ablations.no_offline:
            distill = ctx.cfg.distill
            if ablations.no_progressive:
                distill = distill.model_copy(update={"phase1_fraction": 0.0})
            dataset = distill_dataset(ctx, teacher, sampled=self.sampled)
            offline = run_offline_transfer(
                teacher,
                result.model,
                dataset,
                distill,
                project=not ablations.no_projection,
                checkpoint_dir=ckpt_dir,
            )
            result.offline_steps = offline.total_steps
            result.offline_ms = offline.log.elapsed_ms
            result.offline_log = offline.log
            result.notes["phase1_steps"] = offline.phase1_steps
            result.notes["sampled_rows"] = len(dataset)
            if offline.plan is not None:
                result.notes["projection"] = offline.plan.kind.value

        if ablations.no_online:
            return result

        update: dict[str, Any] = {}
        if ablations.no_coevolution:
            update["coevolve"] = False
        if ablations.no_asymmetric:
            update["tau"] = 1
        if ablations.no_enhancement:
            update["r_enh"] = 0.0
        online_cfg = ctx.cfg.online.model_copy(update=update)
        shift = None if online_cfg.r_enh is not None else ctx.shift()
        online = run_online(
            teacher,
            result.model,
            task_rows(ctx.prepared.splits.online),
            task_rows(ctx.prepared.splits.train),
            shift,
            online_cfg,
            checkpoint_dir=ckpt_dir,
        )
        result.online_steps = online.steps
        result.online_ms = online.elapsed_ms
        result.online_log = online.log
        result.notes["r_enh"] = online.r_enh
        if online.state is not None:
            result.notes["teacher_updates"] = online.state.teacher_updates
        return result


@registry.register
class CrossAdaptFullRunner(_CrossAdaptRunner):
    mode = TrainerMode.CROSSADAPT_FULL
    description = "Two-stage transfer distilling over the whole train split"
    sampled = False


@registry.register
class CrossAdaptSampleRunner(_CrossAdaptRunner):
    mode = TrainerMode.CROSSADAPT_SAMPLE
    description = "Two-stage transfer distilling over a temporally diverse sample"


def run_baseline(mode: TrainerMode | str, ctx: ModeContext) -> ModeResult:
    """Train and evaluate ``mode`` for the context's seed."""
    runner = registry.get(mode)()
    return runner.run(ctx)

