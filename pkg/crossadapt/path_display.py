"""Helpers for displaying run and artifact paths in logs and terminal output."""

from __future__ import annotations

import os
from pathlib import Path


def _is_same_location(raw_path: str, real_path: Path) -> bool:
    try:
        return Path(raw_path).resolve() == real_path.resolve()
    except OSError:
        return False


def get_display_path(real_path: Path) -> str:
    """User-facing path string, relative to the launch directory when possible.

    ``CROSSADAPT_DISPLAY_PATH`` overrides the rendering of the working
    directory itself (useful when the CLI runs inside a container).
    """
    real_path = Path(real_path)
    explicit = os.getenv("CROSSADAPT_DISPLAY_PATH")
    shell_pwd = os.getenv("PWD")
    try:
        current = Path.cwd().resolve()
        target = real_path.resolve()
    except OSError:
        return str(real_path)
    if target == current:
        if explicit:
            return explicit
        if shell_pwd and _is_same_location(shell_pwd, current):
            return shell_pwd
        return "."
    try:
        relative = target.relative_to(current).as_posix()
    except ValueError:
        return str(real_path)
    base = explicit.rstrip("/") if explicit else "."
    return f"{base}/{relative}"


def get_display_artifacts(artifacts: dict[str, Path]) -> dict[str, str]:
    """Render every artifact path of a command result."""
    return {name: get_display_path(path) for name, path in artifacts.items()}
