"""CSV readers and writers for the command-line pipeline.

Every reader validates its columns and values and raises ``SchemaError``
naming the file, the 1-based row (the header is row 1) and the field.
"""
import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import numpy as np
import pandas as pd

from .exceptions import SchemaError
from .placement_stat import TrialRecord
from .robust_adjust import CovariateMatrix
from .trial_scoring import SessionSeries, TrialEvent

logger = logging.getLogger(__name__)

SERIES_COLUMNS = ["block_id", "t_index", "value"]
EVENT_COLUMNS = ["block_id", "onset_index", "z"]
TRIAL_COLUMNS = ["block_id", "trial_index", "z", "response"]
ROUND_TRIP_FORMAT = "%.17g"


def _read(path, required: Sequence[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise SchemaError(path, "file not found")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise SchemaError(path, f"unreadable CSV: {exc}") from exc
    frame.columns = [c.strip() for c in frame.columns]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise SchemaError(path, f"missing column(s) {missing}; found {list(frame.columns)}", row=1)
    if frame.empty:
        raise SchemaError(path, "no data rows")
    frame["block_id"] = frame["block_id"].str.strip()
    empty = frame["block_id"] == ""
    if empty.any():
        raise SchemaError(path, "empty block_id", row=int(np.flatnonzero(empty.to_numpy())[0]) + 2, field="block_id")
    return frame


def _as_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return np.nan


def _numeric(frame: pd.DataFrame, path, field: str, integer: bool = False) -> np.ndarray:
    # float() rounds correctly, so %.17g output reads back bit for bit
    values = frame[field].str.strip().map(_as_float).to_numpy(dtype=float)
    bad = ~np.isfinite(values)
    if integer:
        bad |= np.where(np.isfinite(values), values % 1 != 0, True)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        kind = "an integer" if integer else "a finite number"
        raise SchemaError(path, f"{frame[field].iloc[row]!r} is not {kind}", row=row + 2, field=field)
    return values.astype(np.int64) if integer else values


def _assignment(frame: pd.DataFrame, path) -> np.ndarray:
    z = _numeric(frame, path, "z", integer=True)
    bad = ~np.isin(z, (0, 1))
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise SchemaError(path, f"z must be 0 or 1, got {z[row]}", row=row + 2, field="z")
    return z


def read_series(path, sample_interval: float) -> List[SessionSeries]:
    frame = _read(path, SERIES_COLUMNS)
    t_index = _numeric(frame, path, "t_index", integer=True)
    values = _numeric(frame, path, "value")
    series = []
    start = 0
    block_ids = frame["block_id"].to_numpy()
    seen = set()
    for row in range(1, len(frame) + 1):
        if row < len(frame) and block_ids[row] == block_ids[start]:
            continue
        block_id = block_ids[start]
        if block_id in seen:
            raise SchemaError(path, f"rows for block {block_id!r} are not contiguous", row=start + 2, field="block_id")
        seen.add(block_id)
        expected = np.arange(row - start)
        wrong = np.flatnonzero(t_index[start:row] != expected)
        if wrong.size:
            bad = start + int(wrong[0])
            raise SchemaError(path, f"expected t_index {expected[wrong[0]]} for block {block_id!r}",
                              row=bad + 2, field="t_index")
        series.append(SessionSeries(block_id=block_id, values=tuple(values[start:row]),
                                    sample_interval_seconds=sample_interval))
        start = row
    logger.info(f"Read {len(series)} series ({len(frame)} samples) from {path}")
    return series


def read_events(path) -> Dict[str, List[TrialEvent]]:
    frame = _read(path, EVENT_COLUMNS)
    onsets = _numeric(frame, path, "onset_index", integer=True)
    z = _assignment(frame, path)
    negative = onsets < 0
    if negative.any():
        row = int(np.flatnonzero(negative)[0])
        raise SchemaError(path, "onset_index must be nonnegative", row=row + 2, field="onset_index")
    events: Dict[str, List[TrialEvent]] = defaultdict(list)
    for row, (block_id, onset, assigned) in enumerate(zip(frame["block_id"], onsets, z)):
        block = events[block_id]
        if block and onset < block[-1].onset_index:
            raise SchemaError(path, f"onsets for block {block_id!r} are not sorted", row=row + 2,
                              field="onset_index")
        block.append(TrialEvent(block_id=block_id, onset_index=int(onset), z=int(assigned)))
    return dict(events)


def read_trials(path) -> List[TrialRecord]:
    frame = _read(path, TRIAL_COLUMNS)
    trial_index = _numeric(frame, path, "trial_index", integer=True)
    z = _assignment(frame, path)
    responses = _numeric(frame, path, "response")
    keys = pd.Series(list(zip(frame["block_id"], trial_index)))
    duplicated = keys.duplicated().to_numpy()
    if duplicated.any():
        row = int(np.flatnonzero(duplicated)[0])
        raise SchemaError(path, f"duplicate trial {keys.iloc[row]}", row=row + 2, field="trial_index")
    if np.any(trial_index < 0):
        row = int(np.flatnonzero(trial_index < 0)[0])
        raise SchemaError(path, "trial_index must be nonnegative", row=row + 2, field="trial_index")
    trials = [
        TrialRecord(block_id=b, index=int(i), z=int(assigned), response=float(r))
        for b, i, assigned, r in zip(frame["block_id"], trial_index, z, responses)
    ]
    logger.info(f"Read {len(trials)} trials in {frame['block_id'].nunique()} blocks from {path}")
    return trials


def _covariate_names(frame: pd.DataFrame, path, keys: Sequence[str]) -> List[str]:
    names = [c for c in frame.columns if c not in keys]
    if not names:
        raise SchemaError(path, "no covariate columns", row=1)
    return names


def read_covariates(path, trials: Sequence[TrialRecord]) -> CovariateMatrix:
    """Trial-level covariates, reordered to follow ``trials``."""
    frame = _read(path, ["block_id", "trial_index"])
    names = _covariate_names(frame, path, ["block_id", "trial_index"])
    trial_index = _numeric(frame, path, "trial_index", integer=True)
    values = np.column_stack([_numeric(frame, path, name) for name in names])
    return align_covariates(path, names, list(zip(frame["block_id"], trial_index)), values, trials)


def align_covariates(path, names: Sequence[str], keys: Sequence[tuple], values: np.ndarray,
                     trials: Sequence[TrialRecord]) -> CovariateMatrix:
    position = {}
    for row, key in enumerate(keys):
        key = (key[0], int(key[1]))
        if key in position:
            raise SchemaError(path, f"duplicate covariate row for trial {key}", row=row + 2, field="trial_index")
        position[key] = row
    missing = [(t.block_id, t.index) for t in trials if (t.block_id, t.index) not in position]
    if missing:
        raise SchemaError(path, f"no covariates for {len(missing)} trial(s), first {missing[0]}")
    if len(position) != len(trials):
        logger.warning(f"{path}: {len(position) - len(trials)} covariate row(s) match no trial and are ignored")
    order = [position[(t.block_id, t.index)] for t in trials]
    return CovariateMatrix(names=tuple(names), values=values[order])


def read_scan_covariates(path) -> Dict[str, pd.DataFrame]:
    """Per-scan covariates (block_id, t_index, one column per covariate) keyed by block."""
    frame = _read(path, ["block_id", "t_index"])
    names = _covariate_names(frame, path, ["block_id", "t_index"])
    numeric = pd.DataFrame({name: _numeric(frame, path, name) for name in names})
    numeric.insert(0, "t_index", _numeric(frame, path, "t_index", integer=True))
    blocks = {}
    for block_id, rows in numeric.groupby(frame["block_id"], sort=True):
        expected = np.arange(len(rows))
        if not np.array_equal(rows["t_index"].to_numpy(), expected):
            raise SchemaError(path, f"t_index for block {block_id!r} must run 0..{len(rows) - 1} in order",
                              row=int(rows.index[0]) + 2, field="t_index")
        blocks[block_id] = rows[names].reset_index(drop=True)
    return blocks


def _write(frame: pd.DataFrame, path, float_format=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=float_format, lineterminator="\n")
    logger.info(f"Wrote {len(frame)} row(s) to {path}")
    return path


def write_trials(trials: Iterable[TrialRecord], path) -> Path:
    frame = pd.DataFrame(
        [(t.block_id, t.index, t.z, t.response) for t in trials], columns=TRIAL_COLUMNS
    )
    return _write(frame, path, ROUND_TRIP_FORMAT)


def write_series(series: Iterable[SessionSeries], path) -> Path:
    frames = [
        pd.DataFrame({"block_id": s.block_id, "t_index": np.arange(len(s.values)), "value": s.as_array()})
        for s in series
    ]
    return _write(pd.concat(frames, ignore_index=True)[SERIES_COLUMNS], path, ROUND_TRIP_FORMAT)


def write_events(events: Dict[str, Sequence[TrialEvent]], path) -> Path:
    frame = pd.DataFrame(
        [(e.block_id, e.onset_index, e.z) for block_id in sorted(events) for e in events[block_id]],
        columns=EVENT_COLUMNS,
    )
    return _write(frame, path)


def write_table(rows: Sequence[dict], columns: Sequence[str], path, float_format=None) -> Path:
    return _write(pd.DataFrame(list(rows), columns=list(columns)), path, float_format)
