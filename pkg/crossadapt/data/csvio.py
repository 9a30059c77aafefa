"""CSV ingestion and emission of raw streams."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from crossadapt.data.schema import ColumnKind, SchemaConfig
from crossadapt.errors import DataError, InputError, SchemaError

logger = logging.getLogger(__name__)

# data rows start on line 2 of the file
HEADER_LINES = 1


def _bad_rows(raw: pd.Series, parsed: pd.Series) -> np.ndarray:
    present = raw.notna() & (raw.astype(str).str.strip() != "")
    return np.flatnonzero((present & parsed.isna()).to_numpy())


def load_csv(path: str | Path, schema: SchemaConfig) -> pd.DataFrame:
    """Read a raw CSV whose header matches ``schema``.

    Categorical columns stay strings; numerical, label, click and timestamp
    columns are parsed as numbers. In strict mode the first unparsable cell
    raises with its file line; otherwise offending rows are dropped.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"data file not found: {path}")
    try:
        raw = pd.read_csv(path, sep=schema.delimiter, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot parse {path}: {exc}") from exc

    missing = [c.name for c in schema.columns if c.name not in raw.columns]
    if missing:
        raise SchemaError(f"{path.name} is missing columns {missing}")

    frame = pd.DataFrame(index=raw.index)
    drop = np.zeros(len(raw), dtype=bool)
    for col in schema.columns:
        values = raw[col.name]
        if col.kind == ColumnKind.CATEGORICAL:
            frame[col.name] = values.astype(str)
            continue
        parsed = pd.to_numeric(values.replace("", np.nan), errors="coerce")
        bad = _bad_rows(values, parsed)
        if col.kind in (ColumnKind.LABEL, ColumnKind.CLICK):
            binary_bad = np.flatnonzero((~parsed.isin([0, 1])).to_numpy())
            bad = np.union1d(bad, binary_bad)
        elif col.kind == ColumnKind.TIMESTAMP:
            bad = np.union1d(bad, np.flatnonzero(parsed.isna().to_numpy()))
        if bad.size:
            line = int(bad[0]) + HEADER_LINES + 1
            if schema.strict:
                raise DataError(
                    f"{path.name}: line {line}, column {col.name!r}: "
                    f"cannot parse {values.iloc[bad[0]]!r}"
                )
            drop[bad] = True
        frame[col.name] = parsed
    if drop.any():
        logger.warning("Dropped %d unparsable rows from %s", int(drop.sum()), path.name)
        frame = frame.loc[~drop].reset_index(drop=True)
    logger.info("Loaded %d rows from %s", len(frame), path.name)
    return frame


def write_csv(frame: pd.DataFrame, path: str | Path, delimiter: str = ",") -> Path:
    """Write a raw stream; output bytes depend only on the frame contents."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, sep=delimiter, index=False, lineterminator="\n")
    return path
