"""Run folder structure manager.

Every command writes under ``<out>/<run_id>/`` with one folder per pipeline
stage and a ``run_config.json`` status record next to them.
"""

from __future__ import annotations

import json
import shutil
from datetime import datetime
from pathlib import Path
from typing import Any

import pandas as pd
from pydantic import BaseModel, Field

from crossadapt import __version__


class RunStatus(BaseModel):
    """Status record of a run folder."""

    run_id: str = Field(..., description="Run folder name")
    command: str = Field(default="", description="CLI verb that created the run")
    created_at: datetime = Field(default_factory=datetime.now)
    updated_at: datetime = Field(default_factory=datetime.now)
    status: str = Field(default="initialized", description="Current run status")
    current_stage: str = Field(default="00_config", description="Current processing stage")
    seeds: list[int] = Field(default_factory=list)
    package_version: str = Field(default=__version__)


CONFIG_STAGE = "00_config"
DATA_STAGE = "01_data"
TEACHER_STAGE = "02_teacher"
TRANSFER_STAGE = "03_transfer"
ONLINE_STAGE = "04_online"
EVAL_STAGE = "05_eval"
EXPERIMENT_STAGE = "06_experiment"

STAGE_FOLDERS = [
    CONFIG_STAGE,
    DATA_STAGE,
    TEACHER_STAGE,
    TRANSFER_STAGE,
    ONLINE_STAGE,
    EVAL_STAGE,
    EXPERIMENT_STAGE,
]


class RunManager:
    """Manages the folder structure for a single run."""

    def __init__(self, base_dir: Path, run_id: str, command: str = ""):
        self.base_dir = Path(base_dir)
        self.run_id = run_id
        self.command = command
        self.run_dir = self.base_dir / run_id
        self.config_path = self.run_dir / "run_config.json"
        self._status: RunStatus | None = None

    @property
    def status(self) -> RunStatus:
        if self._status is None:
            self._status = self._load_status()
        return self._status

    def _load_status(self) -> RunStatus:
        if self.config_path.exists():
            return RunStatus.model_validate(json.loads(self.config_path.read_text()))
        return RunStatus(run_id=self.run_id, command=self.command)

    def _save_status(self) -> None:
        self.status.updated_at = datetime.now()
        self.config_path.write_text(self.status.model_dump_json(indent=2))

    def initialize(self, seeds: list[int] | None = None) -> RunManager:
        """Create the run folder and all stage folders."""
        self.run_dir.mkdir(parents=True, exist_ok=True)
        for folder in STAGE_FOLDERS:
            (self.run_dir / folder).mkdir(exist_ok=True)
        if seeds is not None:
            self.status.seeds = list(seeds)
        self._save_status()
        return self

    def stage_path(self, stage: str) -> Path:
        return self.run_dir / stage

    def artifact_path(self, stage: str, filename: str) -> Path:
        stage_dir = self.stage_path(stage)
        stage_dir.mkdir(parents=True, exist_ok=True)
        return stage_dir / filename

    def save_artifact(self, stage: str, filename: str, data: Any, as_json: bool = True) -> Path:
        """Save a pydantic model, dict, DataFrame or text into a stage folder."""
        filepath = self.artifact_path(stage, filename)
        if isinstance(data, pd.DataFrame):
            data.to_csv(filepath, index=False)
        elif as_json:
            if hasattr(data, "model_dump_json"):
                filepath.write_text(data.model_dump_json(indent=2))
            else:
                filepath.write_text(json.dumps(data, indent=2, default=str))
        else:
            filepath.write_text(str(data))
        self._save_status()
        return filepath

    def load_artifact(self, stage: str, filename: str) -> dict | str | None:
        filepath = self.stage_path(stage) / filename
        if not filepath.exists():
            return None
        content = filepath.read_text()
        if filename.endswith(".json"):
            return json.loads(content)
        return content

    def update_stage(self, stage: str) -> None:
        self.status.current_stage = stage
        self._save_status()

    def update_status(self, status: str) -> None:
        self.status.status = status
        self._save_status()

    def exists(self) -> bool:
        return self.run_dir.exists()

    def cleanup(self) -> None:
        if self.run_dir.exists():
            shutil.rmtree(self.run_dir)


def new_run_id(command: str) -> str:
    return f"{command}-{datetime.now().strftime('%Y%m%d-%H%M%S-%f')}"
