"""Run configuration: one validated pydantic tree, profiles and dotted overrides."""

from __future__ import annotations

import json
import logging
from enum import Enum
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from crossadapt.data.schema import SchemaConfig
from crossadapt.data.synthetic import SyntheticSpec
from crossadapt.errors import ConfigError
from crossadapt.model.core import ArchKind, ModelSpec
from crossadapt.online.codistill import OnlineConfig
from crossadapt.online.shift import ShiftSettings
from crossadapt.transfer.offline import DistillConfig, TrainerMode
from crossadapt.transfer.sampler import SamplingConfig

logger = logging.getLogger(__name__)

DESK_BATCH_SIZE = 256


class Profile(str, Enum):
    """``full`` keeps the default batch sizes; ``desk`` shrinks batches for laptops."""

    FULL = "full"
    DESK = "desk"


class DataConfig(BaseModel):
    """Where samples come from and how they are split."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    synthetic: SyntheticSpec | None = Field(
        default_factory=SyntheticSpec, description="Generator spec (ignored when csv is set)"
    )
    csv: Path | None = Field(default=None, description="Raw CSV file")
    schema_config: SchemaConfig | None = Field(
        default=None, alias="schema", description="Column roles of the CSV file"
    )
    ratio: list[int] = Field(default_factory=lambda: [4, 4, 1, 1], min_length=4, max_length=4)


class TeacherTraining(BaseModel):
    """Supervised training of the teacher on hist + train."""

    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(default=2, ge=1)
    batch_size: int = Field(default=4096, ge=1)
    lr_embedding: float = Field(default=0.1, gt=0.0)
    lr_net: float = Field(default=0.001, gt=0.0)

    def as_distill(self, seed: int) -> DistillConfig:
        return DistillConfig(
            lam=0.0,
            phase1_fraction=0.0,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr_embedding=self.lr_embedding,
            lr_net=self.lr_net,
            seed=seed,
        )


class Ablations(BaseModel):
    """Switches that each disable one component of the two-stage method."""

    model_config = ConfigDict(extra="forbid")

    no_projection: bool = False
    no_progressive: bool = False
    no_sampling: bool = False
    no_offline: bool = False
    no_coevolution: bool = False
    no_asymmetric: bool = False
    no_enhancement: bool = False
    no_online: bool = False

    def active(self) -> list[str]:
        return [name for name, on in self.model_dump().items() if on]


class SweepParameter(str, Enum):
    """Settings the experiment command can sweep."""

    SAMPLING_R = "r"
    POSITIVE_RATIO = "r_pos"
    TEMPERATURE = "temperature"
    LAMBDA = "lambda"
    ENHANCEMENT_RATIO = "r_enh"
    SHIFT_METRIC = "metric"

    @property
    def keys(self) -> list[str]:
        """Dotted config keys set by one sweep value; KD settings apply to both stages."""
        return _SWEEP_KEYS[self]


_SWEEP_KEYS = {
    SweepParameter.SAMPLING_R: ["sampling.r"],
    SweepParameter.POSITIVE_RATIO: ["sampling.r_pos"],
    SweepParameter.TEMPERATURE: ["distill.temperature", "online.temperature"],
    SweepParameter.LAMBDA: ["distill.lambda", "online.lambda"],
    SweepParameter.ENHANCEMENT_RATIO: ["online.r_enh"],
    SweepParameter.SHIFT_METRIC: ["shift.metric"],
}


class SweepConfig(BaseModel):
    """Vary one setting over a list of values; every value gets the full mode x seed grid."""

    model_config = ConfigDict(extra="forbid")

    parameter: SweepParameter
    values: list[Any] = Field(..., min_length=1, description="Values tried in order")


class RunConfig(BaseModel):
    """Everything a command needs; unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")

    mode: TrainerMode = Field(default=TrainerMode.CROSSADAPT_SAMPLE)
    modes: list[TrainerMode] = Field(
        default_factory=lambda: [
            TrainerMode.SCRATCH,
            TrainerMode.SCRATCH_ONLINE,
            TrainerMode.VANILLA_KD,
            TrainerMode.CROSSADAPT_SAMPLE,
        ],
        description="Modes compared by the experiment command",
    )
    data: DataConfig = Field(default_factory=DataConfig)
    teacher: ModelSpec = Field(
        default_factory=lambda: ModelSpec(arch=ArchKind.MLP, embedding_dim=8, hidden=[64, 32, 4])
    )
    student: ModelSpec = Field(
        default_factory=lambda: ModelSpec(
            arch=ArchKind.FM_MLP, embedding_dim=16, hidden=[64, 32, 4]
        )
    )
    teacher_training: TeacherTraining = Field(default_factory=TeacherTraining)
    distill: DistillConfig = Field(default_factory=DistillConfig)
    sampling: SamplingConfig = Field(default_factory=SamplingConfig)
    shift: ShiftSettings = Field(default_factory=ShiftSettings)
    online: OnlineConfig = Field(default_factory=OnlineConfig)
    ablations: Ablations = Field(default_factory=Ablations)
    sweep: SweepConfig | None = Field(
        default=None, description="Sensitivity sweep run by the experiment command"
    )
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4], min_length=1)
    out_dir: Path = Field(default=Path("runs"))

    @field_validator("mode", mode="before")
    @classmethod
    def _crossadapt_alias(cls, v: Any) -> Any:
        return TrainerMode.CROSSADAPT_SAMPLE if v == "crossadapt" else v

    def for_seed(self, seed: int) -> RunConfig:
        """Copy with every training seed set to ``seed``."""
        cfg = self.model_copy(deep=True)
        cfg.distill.seed = seed
        cfg.sampling.seed = seed
        cfg.online.seed = seed
        cfg.seeds = [seed]
        return cfg

    def snapshot(self) -> str:
        return self.model_dump_json(indent=2, by_alias=True)


def apply_profile(cfg: RunConfig, profile: Profile | str) -> RunConfig:
    profile = Profile(profile)
    if profile == Profile.DESK:
        cfg = cfg.model_copy(deep=True)
        cfg.teacher_training.batch_size = DESK_BATCH_SIZE
        cfg.distill.batch_size = DESK_BATCH_SIZE
        cfg.online.batch_size = DESK_BATCH_SIZE
    return cfg


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _describe(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def validate_config(data: dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {_describe(exc)}") from exc


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``dotted.key=value`` overrides; values are parsed as JSON when possible."""
    if not overrides:
        return cfg
    data = json.loads(cfg.model_dump_json(by_alias=True))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, value = item.split("=", 1)
        node = data
        parts = key.strip().split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                node[part] = {} if node.get(part) is None else node[part]
            if not isinstance(node[part], dict):
                raise ConfigError(f"override {key!r}: {part!r} is not a section")
            node = node[part]
        node[parts[-1]] = _parse_value(value)
        logger.debug("Override %s = %s", key, value)
    return validate_config(data)


def sweep_configs(cfg: RunConfig) -> list[tuple[Any, RunConfig]]:
    """One config per sweep value, with the swept key overridden and ``sweep`` cleared.

    Args:
        cfg: Config whose ``sweep`` names the parameter and its values.

    Returns:
        ``(value, config)`` pairs in the order of ``cfg.sweep.values``.

    Raises:
        ConfigError: ``cfg`` has no sweep, or a value is invalid for its key.
    """
    if cfg.sweep is None:
        raise ConfigError("config has no sweep section")
    base = cfg.model_copy(update={"sweep": None})
    keys = cfg.sweep.parameter.keys
    return [
        (value, apply_overrides(base, [f"{key}={json.dumps(value)}" for key in keys]))
        for value in cfg.sweep.values
    ]


def load_config(
    path: str | Path | None = None,
    *,
    profile: Profile | str = Profile.FULL,
    overrides: list[str] | None = None,
) -> RunConfig:
    """Read a JSON config (defaults when ``path`` is None), then profile, then overrides."""
    if path is None:
        cfg = RunConfig()
    else:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            cfg = validate_config(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path.name} is not valid JSON: {exc}") from exc
    return apply_overrides(apply_profile(cfg, profile), overrides or [])
