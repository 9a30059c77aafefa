"""Command implementations behind the CLI verbs.

Every command opens a run folder (see :mod:`crossadapt.engine.runs`), writes
the validated config snapshot into ``00_config`` and its outputs into the
stage folder it owns. The functions return a :class:`CommandResult` for the
CLI to render; they never print.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import pandas as pd

from crossadapt import __version__
from crossadapt.config import RunConfig, sweep_configs
from crossadapt.data.csvio import load_csv, write_csv
from crossadapt.data.schema import SampleBatch, SchemaConfig
from crossadapt.data.splits import (
    SPLIT_NAMES,
    PreparedData,
    prepare_splits,
    split_bounds,
    task_rows,
)
from crossadapt.data.synthetic import generate_stream, schema_for
from crossadapt.engine.modes import (
    ModeContext,
    ModeResult,
    distill_dataset,
    evaluate_student,
    run_baseline,
)
from crossadapt.engine.runs import (
    CONFIG_STAGE,
    DATA_STAGE,
    EVAL_STAGE,
    EXPERIMENT_STAGE,
    ONLINE_STAGE,
    TEACHER_STAGE,
    TRANSFER_STAGE,
    RunManager,
    new_run_id,
)
from crossadapt.errors import ConfigError, ParameterError, SchemaError
from crossadapt.evaluation.metrics import RunReport, experiment_table, switching_cost
from crossadapt.model.checkpoint import load_checkpoint, save_checkpoint
from crossadapt.model.core import PredictionModel, init_model
from crossadapt.online.codistill import recovery_steps, run_online
from crossadapt.online.shift import compute_shift
from crossadapt.transfer.offline import StageLog, TrainerMode, run_offline_transfer, train_offline
from crossadapt.transfer.projection import (
    ProjectionKind,
    build_plan,
    gram_distortion,
    gram_error,
    random_projection_baseline,
)

logger = logging.getLogger(__name__)

SCHEMA_FILE = "schema.json"
STREAM_FILE = "stream.csv"
MANIFEST_FILE = "manifest.json"
TEACHER_CKPT = "teacher.ckpt.json"
STUDENT_CKPT = "student.ckpt.json"
TIMING_FILE = "timing.json"


@dataclass
class CommandResult:
    """What a command produced: the run folder, a flat summary and written files."""

    run_dir: Path
    summary: dict[str, Any] = field(default_factory=dict)
    artifacts: dict[str, Path] = field(default_factory=dict)
    table: pd.DataFrame | None = None


def start_run(cfg: RunConfig, command: str, out_dir: Path | None = None) -> RunManager:
    """Create the run folder and store the config snapshot."""
    run = RunManager(Path(out_dir or cfg.out_dir), new_run_id(command), command=command)
    run.initialize(seeds=cfg.seeds)
    run.save_artifact(CONFIG_STAGE, "config.json", cfg.snapshot(), as_json=False)
    run.update_status("running")
    logger.info("Run folder %s", run.run_dir)
    return run


def _finish(run: RunManager, stage: str) -> None:
    run.update_stage(stage)
    run.update_status("completed")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# -- data -----------------------------------------------------------------


def load_frame(cfg: RunConfig) -> tuple[pd.DataFrame, SchemaConfig]:
    """Raw frame and column roles from the configured CSV or generator.

    A CSV without an inline schema uses ``schema.json`` next to the file.
    """
    data = cfg.data
    if data.csv is not None:
        schema = data.schema_config
        if schema is None:
            sidecar = Path(data.csv).parent / SCHEMA_FILE
            if not sidecar.exists():
                raise ConfigError(
                    f"data.csv is set but neither data.schema nor {sidecar} exists"
                )
            schema = SchemaConfig.model_validate_json(sidecar.read_text())
        return load_csv(data.csv, schema), schema
    if data.synthetic is None:
        raise ConfigError("config needs data.csv or data.synthetic")
    return generate_stream(data.synthetic), schema_for(data.synthetic)


def load_prepared(cfg: RunConfig) -> PreparedData:
    frame, schema = load_frame(cfg)
    return prepare_splits(frame, schema, cfg.data.ratio)


def cmd_gen_data(cfg: RunConfig, out_dir: Path | None = None) -> CommandResult:
    """Write the synthetic stream, its schema and a split manifest."""
    spec = cfg.data.synthetic
    if spec is None:
        raise ConfigError("gen-data needs a data.synthetic section")
    run = start_run(cfg, "gen-data", out_dir)
    frame = generate_stream(spec)
    schema = schema_for(spec)
    csv_path = write_csv(frame, run.artifact_path(DATA_STAGE, STREAM_FILE), schema.delimiter)
    schema_path = run.artifact_path(DATA_STAGE, SCHEMA_FILE)
    schema_path.write_text(schema.model_dump_json(indent=2))
    bounds = split_bounds(len(frame), cfg.data.ratio)
    manifest = {
        "spec_sha256": spec.digest(),
        "stream_sha256": _sha256(csv_path),
        "n_rows": len(frame),
        "ratio": list(cfg.data.ratio),
        "splits": {name: list(b) for name, b in zip(SPLIT_NAMES, bounds)},
        "drift_fractions": [d.start_fraction for d in spec.drift],
        "drift_rows": spec.drift_rows(),
        "positive_rate": float(frame[schema.label_name].mean()) if len(frame) else 0.0,
        "package_version": __version__,
    }
    manifest_path = run.save_artifact(DATA_STAGE, MANIFEST_FILE, manifest)
    _finish(run, DATA_STAGE)
    return CommandResult(
        run_dir=run.run_dir,
        summary={
            "rows": len(frame),
            "positive_rate": round(manifest["positive_rate"], 5),
            "drift_rows": manifest["drift_rows"],
            "stream_sha256": manifest["stream_sha256"][:16],
        },
        artifacts={"stream": csv_path, "schema": schema_path, "manifest": manifest_path},
    )


# -- teacher --------------------------------------------------------------


def train_teacher(
    prepared: PreparedData, cfg: RunConfig, seed: int
) -> tuple[PredictionModel, StageLog]:
    """Supervised teacher training on hist + train (clicked rows in pCVR data)."""
    data = task_rows(prepared.splits.teacher_data())
    model = init_model(cfg.teacher, prepared.field_schema, seed)
    log = train_offline(model, data, cfg.teacher_training.as_distill(seed))
    logger.info("Teacher trained on %d rows in %d steps", len(data), log.steps)
    return model, log


def _teacher_report(
    prepared: PreparedData, cfg: RunConfig, teacher: PredictionModel
) -> RunReport:
    ctx = ModeContext(prepared=prepared, cfg=cfg, seed=0)
    return evaluate_student(ctx, teacher, label="teacher")


def cmd_train_teacher(
    cfg: RunConfig, out_dir: Path | None = None, seed: int | None = None
) -> CommandResult:
    seed = cfg.seeds[0] if seed is None else seed
    cfg = cfg.for_seed(seed)
    run = start_run(cfg, "train-teacher", out_dir)
    prepared = load_prepared(cfg)
    prepared.vocab.save(run.artifact_path(DATA_STAGE, "vocab.json"))
    teacher, log = train_teacher(prepared, cfg, seed)
    report = _teacher_report(prepared, cfg, teacher)
    report.steps, report.elapsed_ms = log.steps, log.elapsed_ms
    ckpt = save_checkpoint(
        teacher,
        run.artifact_path(TEACHER_STAGE, TEACHER_CKPT),
        metadata={"seed": seed, "steps": log.steps},
    )
    log.write_csv(run.artifact_path(TEACHER_STAGE, "stage_log.csv"))
    report_path = report.save(run.artifact_path(TEACHER_STAGE, "report.json"))
    _finish(run, TEACHER_STAGE)
    return CommandResult(
        run_dir=run.run_dir,
        summary={
            "auc": report.auc,
            "logloss": report.logloss,
            "steps": log.steps,
            "checksum": teacher.checksum()[:16],
        },
        artifacts={"checkpoint": ckpt, "report": report_path},
    )


def _load_model(path: Path, prepared: PreparedData) -> PredictionModel:
    teacher, _ = load_checkpoint(path)
    if teacher.field_schema != prepared.field_schema:
        raise SchemaError(
            f"teacher checkpoint {Path(path).name} was trained on a different vocabulary"
        )
    return teacher


def _offline_ms(student_ckpt: Path) -> float:
    """Stage-1 wall time from the timing file next to a transferred student, else 0."""
    timing = Path(student_ckpt).parent / TIMING_FILE
    if not timing.exists():
        return 0.0
    return float(json.loads(timing.read_text()).get("offline_ms", 0.0))


# -- stage 1 --------------------------------------------------------------


def cmd_transfer(
    cfg: RunConfig, teacher_ckpt: Path, out_dir: Path | None = None, seed: int | None = None
) -> CommandResult:
    """Stage 1: projection, progressive distillation over the selected data."""
    seed = cfg.seeds[0] if seed is None else seed
    cfg = cfg.for_seed(seed)
    run = start_run(cfg, "transfer", out_dir)
    prepared = load_prepared(cfg)
    teacher = _load_model(teacher_ckpt, prepared)
    ctx = ModeContext(prepared=prepared, cfg=cfg, seed=seed, teacher=teacher)
    sampled = cfg.mode != TrainerMode.CROSSADAPT_FULL
    dataset = distill_dataset(ctx, teacher, sampled=sampled)
    audit = dataset.write_audit(run.artifact_path(TRANSFER_STAGE, "sampling_audit.csv"))
    distill = cfg.distill
    if cfg.ablations.no_progressive:
        distill = distill.model_copy(update={"phase1_fraction": 0.0})
    student = init_model(cfg.student, prepared.field_schema, seed)
    result = run_offline_transfer(
        teacher,
        student,
        dataset,
        distill,
        project=not cfg.ablations.no_projection,
        checkpoint_dir=run.stage_path(TRANSFER_STAGE),
    )
    ckpt = save_checkpoint(
        result.student,
        run.artifact_path(TRANSFER_STAGE, STUDENT_CKPT),
        projection=None if result.plan is None else result.plan.to_dict(),
        metadata={
            "seed": seed,
            "offline_steps": result.total_steps,
            "phase1_steps": result.phase1_steps,
        },
    )
    timing = run.save_artifact(
        TRANSFER_STAGE,
        TIMING_FILE,
        {"offline_steps": result.total_steps, "offline_ms": result.log.elapsed_ms},
    )
    log_path = result.log.write_csv(run.artifact_path(TRANSFER_STAGE, "stage_log.csv"))
    _finish(run, TRANSFER_STAGE)
    return CommandResult(
        run_dir=run.run_dir,
        summary={
            "rows": len(dataset),
            "pseudo_rows": dataset.samples.n_pseudo,
            "projection": "none" if result.plan is None else result.plan.kind.value,
            "phase1_steps": result.phase1_steps,
            "total_steps": result.total_steps,
            "final_loss": float(result.log.totals()[-1]) if result.log.steps else None,
        },
        artifacts={
            "checkpoint": ckpt,
            "stage_log": log_path,
            "audit": audit,
            "timing": timing,
        },
    )


# -- stage 2 --------------------------------------------------------------


def cmd_shift(
    cfg: RunConfig, out_dir: Path | None = None, split: str = "train"
) -> CommandResult:
    run = start_run(cfg, "shift", out_dir)
    prepared = load_prepared(cfg)
    report = compute_shift(
        task_rows(_public_split(prepared, split)), cfg.shift, field_schema=prepared.field_schema
    )
    path = report.save(run.artifact_path(ONLINE_STAGE, "shift_report.json"))
    _finish(run, ONLINE_STAGE)
    return CommandResult(
        run_dir=run.run_dir,
        summary={
            "metric": report.metric.value,
            "delta_shift": report.delta_shift,
            "r_enh": report.r_enh,
            "max_pair": report.max_pair,
        },
        artifacts={"shift_report": path},
    )


def cmd_online(
    cfg: RunConfig,
    teacher_ckpt: Path,
    student_ckpt: Path,
    out_dir: Path | None = None,
    seed: int | None = None,
) -> CommandResult:
    """Stage 2: co-evolution over the online split, then test evaluation."""
    seed = cfg.seeds[0] if seed is None else seed
    cfg = cfg.for_seed(seed)
    run = start_run(cfg, "online", out_dir)
    prepared = load_prepared(cfg)
    teacher = _load_model(teacher_ckpt, prepared)
    deployed = _load_model(teacher_ckpt, prepared)
    student, student_meta = load_checkpoint(student_ckpt)
    if student.field_schema != prepared.field_schema:
        raise SchemaError("student checkpoint was trained on a different vocabulary")

    online_cfg = cfg.online
    if cfg.ablations.no_coevolution:
        online_cfg = online_cfg.model_copy(update={"coevolve": False})
    if cfg.ablations.no_asymmetric:
        online_cfg = online_cfg.model_copy(update={"tau": 1})
    if cfg.ablations.no_enhancement:
        online_cfg = online_cfg.model_copy(update={"r_enh": 0.0})
    train = task_rows(prepared.splits.train)
    shift = None
    if online_cfg.r_enh is None:
        shift = compute_shift(train, cfg.shift, field_schema=prepared.field_schema)
        shift.save(run.artifact_path(ONLINE_STAGE, "shift_report.json"))

    result = run_online(
        teacher,
        student,
        task_rows(prepared.splits.online),
        train,
        shift,
        online_cfg,
        checkpoint_dir=run.stage_path(ONLINE_STAGE),
    )
    log_path = result.log.write_csv(run.artifact_path(ONLINE_STAGE, "online_log.csv"))

    ctx = ModeContext(prepared=prepared, cfg=cfg, seed=seed, teacher=deployed)
    offline_steps = int(student_meta.metadata.get("offline_steps", 0))
    offline_ms = _offline_ms(student_ckpt)
    report = evaluate_student(ctx, result.student, label="student")
    report.steps = offline_steps + result.steps
    report.elapsed_ms = offline_ms + result.elapsed_ms
    teacher_report = evaluate_student(ctx, result.teacher, label="teacher")
    cost = switching_cost(report, teacher_report, report.steps, report.elapsed_ms)
    paths = {
        "online_log": log_path,
        "report": report.save(run.artifact_path(EVAL_STAGE, "student_report.json")),
        "teacher_report": teacher_report.save(
            run.artifact_path(EVAL_STAGE, "teacher_report.json")
        ),
        "switching_cost": run.save_artifact(EVAL_STAGE, "switching_cost.json", cost),
    }
    _finish(run, EVAL_STAGE)
    return CommandResult(
        run_dir=run.run_dir,
        summary={
            "r_enh": result.r_enh,
            "online_steps": result.steps,
            "teacher_updates": result.state.teacher_updates if result.state else 0,
            "student_auc": report.auc,
            "student_logloss": report.logloss,
            "teacher_auc": teacher_report.auc,
            "c_perf": cost.c_perf,
        },
        artifacts=paths,
    )


# -- evaluation -----------------------------------------------------------


def _public_split(prepared: PreparedData, split: str) -> SampleBatch:
    splits = prepared.splits
    if split == "hist":
        return splits.hist()
    if split not in ("train", "online", "test"):
        raise ParameterError(f"unknown split {split!r}; expected train, online or test")
    return getattr(splits, split)


def cmd_eval(
    cfg: RunConfig,
    ckpt: Path,
    split: str = "test",
    out_dir: Path | None = None,
    reference_ckpt: Path | None = None,
) -> CommandResult:
    """RunReport for a checkpoint on one split, optionally against a reference model."""
    run = start_run(cfg, "eval", out_dir)
    prepared = load_prepared(cfg)
    batch = _public_split(prepared, split)
    model = _load_model(ckpt, prepared)
    reference = None if reference_ckpt is None else _load_model(reference_ckpt, prepared)
    ctx = ModeContext(prepared=prepared, cfg=cfg, seed=0, teacher=reference)
    report = evaluate_student(ctx, model, label=Path(ckpt).name, batch=batch)
    path = report.save(run.artifact_path(EVAL_STAGE, f"report_{split}.json"))
    _finish(run, EVAL_STAGE)
    return CommandResult(
        run_dir=run.run_dir,
        summary={
            "split": split,
            "n_samples": report.n_samples,
            "auc": report.auc,
            "logloss": report.logloss,
            "pcvr_bias": report.pcvr_bias,
            "spearman": report.spearman,
        },
        artifacts={"report": path},
    )


def cmd_project(
    cfg: RunConfig,
    teacher_ckpt: Path,
    d_S: int,
    out_dir: Path | None = None,
    seed: int = 0,
    trials: int = 0,
) -> CommandResult:
    """Standalone projection check: plan, Gram distortion and its closed form."""
    run = start_run(cfg, "project", out_dir)
    teacher, _ = load_checkpoint(teacher_ckpt)
    table = teacher.embedding.weights
    plan = build_plan(table, d_S, seed)
    summary: dict[str, Any] = {
        "case": plan.kind.value,
        "d_T": plan.d_T,
        "d_S": plan.d_S,
        "rows": int(table.shape[0]),
    }
    if plan.kind == ProjectionKind.REDUCE:
        measured, predicted = gram_error(table, plan)
        summary["gram_error_measured"] = measured
        summary["gram_error_predicted"] = predicted
        summary["relative_gap"] = abs(measured - predicted) / max(abs(predicted), 1e-300)
        summary["retained_variance"] = plan.retained_variance
        if trials > 0:
            baseline = random_projection_baseline(table, d_S, trials, seed)
            summary["random_min_error"] = min(baseline)
            summary["random_mean_error"] = sum(baseline) / len(baseline)
    elif plan.kind == ProjectionKind.EXPAND:
        summary["gram_error_measured"] = gram_distortion(table, plan.W)
    else:
        summary["gram_error_measured"] = 0.0
    paths = {
        "plan": run.save_artifact(TRANSFER_STAGE, "projection_plan.json", plan.to_dict()),
        "report": run.save_artifact(TRANSFER_STAGE, "projection_report.json", summary),
    }
    _finish(run, TRANSFER_STAGE)
    return CommandResult(run_dir=run.run_dir, summary=summary, artifacts=paths)


# -- experiment -----------------------------------------------------------


def drift_step(cfg: RunConfig, prepared: PreparedData) -> int | None:
    """Online log index of the first batch after an injected drift, if one falls online."""
    spec = cfg.data.synthetic
    if cfg.data.csv is not None or spec is None or prepared.splits.online.click is not None:
        return None
    start, stop = prepared.splits.bounds[2]
    for row in spec.drift_rows():
        if start < row < stop:
            step = (row - start) // cfg.online.batch_size
            return step if step > 0 else None
    return None


CellHook = Callable[[TrainerMode, int], None]


def run_experiment(
    cfg: RunConfig,
    prepared: PreparedData,
    teacher: PredictionModel,
    *,
    out_dir: Path | None = None,
    on_cell: CellHook | None = None,
) -> tuple[list[ModeResult], list[dict[str, Any]]]:
    """Every mode in ``cfg.modes`` for every seed in ``cfg.seeds``.

    The data, the teacher and the shift statistics are shared by all cells;
    seeds vary student initialisation, sampling and batch order.
    """
    shift = compute_shift(
        task_rows(prepared.splits.train), cfg.shift, field_schema=prepared.field_schema
    )
    drift = drift_step(cfg, prepared)
    results: list[ModeResult] = []
    rows: list[dict[str, Any]] = []
    for seed in cfg.seeds:
        seeded = cfg.for_seed(seed)
        for mode in cfg.modes:
            if on_cell is not None:
                on_cell(mode, seed)
            ctx = ModeContext(
                prepared=prepared,
                cfg=seeded.model_copy(update={"mode": mode}),
                seed=seed,
                teacher=teacher,
                shift_report=shift,
                out_dir=out_dir,
            )
            result = run_baseline(mode, ctx)
            row = result.row()
            if drift is not None and result.online_log is not None:
                if drift < result.online_log.steps:
                    row["recovery_steps"] = recovery_steps(
                        result.online_log.rolling_logloss(), drift
                    )
            results.append(result)
            rows.append(row)
    return results, rows


def cmd_experiment(
    cfg: RunConfig,
    out_dir: Path | None = None,
    teacher_ckpt: Path | None = None,
    on_cell: CellHook | None = None,
) -> CommandResult:
    """Comparison table (mean and std over seeds) for the configured modes."""
    run = start_run(cfg, "experiment", out_dir)
    prepared = load_prepared(cfg)
    if teacher_ckpt is not None:
        teacher = _load_model(teacher_ckpt, prepared)
    else:
        teacher, _ = train_teacher(prepared, cfg, cfg.seeds[0])
        save_checkpoint(teacher, run.artifact_path(TEACHER_STAGE, TEACHER_CKPT))
    teacher_report = _teacher_report(prepared, cfg, teacher)
    teacher_report.save(run.artifact_path(TEACHER_STAGE, "report.json"))

    stage_dir = run.stage_path(EXPERIMENT_STAGE)
    if cfg.sweep is None:
        _, rows = run_experiment(cfg, prepared, teacher, out_dir=stage_dir, on_cell=on_cell)
        table = experiment_table(rows)
    else:
        rows = []
        for i, (value, swept) in enumerate(sweep_configs(cfg)):
            logger.info("Sweep %s = %s", cfg.sweep.parameter.value, value)
            _, cells = run_experiment(
                swept, prepared, teacher, out_dir=stage_dir / f"sweep{i}", on_cell=on_cell
            )
            rows.extend({"sweep_value": value, **row} for row in cells)
        table = experiment_table(rows, by=("sweep_value", "method"))
    raw = pd.DataFrame(rows)
    paths = {
        "cells": run.save_artifact(EXPERIMENT_STAGE, "cells.csv", raw),
        "table": run.save_artifact(EXPERIMENT_STAGE, "table.csv", table),
    }
    _finish(run, EXPERIMENT_STAGE)
    return CommandResult(
        run_dir=run.run_dir,
        summary={
            "modes": [m.value for m in cfg.modes],
            "seeds": list(cfg.seeds),
            "teacher_auc": teacher_report.auc,
            "ablations": cfg.ablations.active(),
            "sweep": None if cfg.sweep is None else cfg.sweep.parameter.value,
        },
        artifacts=paths,
        table=table,
    )
