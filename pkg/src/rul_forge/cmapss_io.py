"""Reading and writing C-MAPSS text files, plus per-subset reference counts."""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass
from typing import Dict, Iterable, List, TextIO, Union

import numpy as np

N_SETTINGS = 3
N_SENSORS = 21
N_COLUMNS = 2 + N_SETTINGS + N_SENSORS

SENSOR_NAMES = (
    "T2", "T24", "T30", "T50", "P2", "P15", "P30", "Nf", "Nc", "epr", "Ps30",
    "phi", "NRf", "NRc", "BPR", "farB", "htBleed", "Nf_dmd", "PCNfR_dmd", "W31", "W32",
)  # fmt: skip
SETTING_NAMES = ("os1", "os2", "os3")


class DataError(ValueError):
    """Input data is malformed or violates a structural requirement."""


@dataclass
class EngineTrajectory:
    """One unit's run: ``cycles`` (T,), ``settings`` (T, 3), ``sensors`` (T, 21)."""

    unit_id: int
    cycles: np.ndarray
    settings: np.ndarray
    sensors: np.ndarray

    def __post_init__(self):
        self.cycles = np.asarray(self.cycles, dtype=np.int64)
        self.settings = np.asarray(self.settings, dtype=np.float64).reshape(-1, N_SETTINGS)
        self.sensors = np.asarray(self.sensors, dtype=np.float64).reshape(-1, N_SENSORS)
        if not (len(self.cycles) == len(self.settings) == len(self.sensors)):
            raise DataError(f"unit {self.unit_id}: column lengths differ")

    def __len__(self):
        return len(self.cycles)

    def validate(self) -> None:
        if len(self.cycles) == 0:
            raise DataError(f"unit {self.unit_id}: no cycles")
        expected = np.arange(1, len(self.cycles) + 1)
        bad = np.nonzero(self.cycles != expected)[0]
        if bad.size:
            i = int(bad[0])
            raise DataError(
                f"unit {self.unit_id}: cycle {int(self.cycles[i])} at position {i + 1}, expected {i + 1}"
            )
        if not (np.all(np.isfinite(self.settings)) and np.all(np.isfinite(self.sensors))):
            raise DataError(f"unit {self.unit_id}: non-finite values")


@dataclass(frozen=True)
class SubsetMeta:
    subset: str
    train_engines: int
    test_engines: int
    train_rows: int
    test_trajectories: int
    train_max_cycle: int
    train_min_cycle: int
    test_max_cycle: int
    test_min_cycle: int
    operating_conditions: int
    fault_modes: int

    @property
    def multi_condition(self) -> bool:
        return self.operating_conditions > 1


_META: Dict[str, SubsetMeta] = {
    "FD001": SubsetMeta("FD001", 100, 100, 17731, 100, 362, 128, 303, 31, 1, 1),
    "FD002": SubsetMeta("FD002", 260, 259, 48558, 259, 378, 128, 367, 21, 6, 1),
    "FD003": SubsetMeta("FD003", 100, 100, 21120, 100, 525, 145, 475, 38, 1, 2),
    "FD004": SubsetMeta("FD004", 249, 248, 56815, 248, 543, 128, 486, 19, 6, 2),
}


def subset_meta(subset: str) -> SubsetMeta:
    try:
        return _META[subset.upper()]
    except KeyError:
        raise KeyError(f"unknown subset {subset!r}; expected one of {sorted(_META)}") from None


def _lines(source: Union[str, TextIO, Iterable[str]]):
    if isinstance(source, str):
        source = io.StringIO(source)
    return source


def parse_trajectory_file(source) -> List[EngineTrajectory]:
    """Parse whitespace-separated 26-column rows; units keep first-appearance order."""
    rows: Dict[int, list] = {}
    for lineno, line in enumerate(_lines(source), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != N_COLUMNS:
            raise DataError(f"line {lineno}: expected {N_COLUMNS} columns, found {len(tokens)}")
        try:
            values = [float(t) for t in tokens]
        except ValueError as exc:
            raise DataError(f"line {lineno}: non-numeric token ({exc})") from None
        unit, cycle = values[0], values[1]
        if unit != int(unit) or cycle != int(cycle):
            raise DataError(f"line {lineno}: unit and cycle must be integers")
        rows.setdefault(int(unit), []).append(values)
    out = []
    for unit, recs in rows.items():
        arr = np.array(recs, dtype=np.float64)
        traj = EngineTrajectory(unit, arr[:, 1].astype(np.int64), arr[:, 2:5], arr[:, 5:])
        traj.validate()
        out.append(traj)
    return out


def parse_rul_file(source, expected_units: int) -> List[int]:
    """One non-negative integer terminal RUL per line, in unit order."""
    values = []
    for lineno, line in enumerate(_lines(source), start=1):
        token = line.strip()
        if not token:
            continue
        try:
            number = float(token)
        except ValueError:
            raise DataError(f"line {lineno}: not a number: {token!r}") from None
        if number != int(number):
            raise DataError(f"line {lineno}: RUL must be an integer, got {token!r}")
        if number < 0:
            raise DataError(f"line {lineno}: negative RUL {token!r}")
        values.append(int(number))
    if len(values) != expected_units:
        raise DataError(f"RUL file has {len(values)} entries, expected {expected_units}")
    return values


def format_trajectories(trajectories: Iterable[EngineTrajectory]) -> str:
    """Inverse of :func:`parse_trajectory_file` (values written with ``repr``)."""
    lines = []
    for traj in trajectories:
        for c, s, x in zip(traj.cycles, traj.settings, traj.sensors):
            cells = [str(traj.unit_id), str(int(c))] + [repr(float(v)) for v in s] + [repr(float(v)) for v in x]
            lines.append(" ".join(cells))
    return "\n".join(lines) + "\n"


def format_rul(offsets: Iterable[int]) -> str:
    return "".join(f"{int(v)}\n" for v in offsets)


def check_against_meta(subset: str, train: List[EngineTrajectory], test: List[EngineTrajectory]) -> List[str]:
    """Warn (not fail) when parsed engine counts differ from the reference table."""
    meta = subset_meta(subset)
    issues = []
    if len(train) != meta.train_engines:
        issues.append(f"{subset}: {len(train)} training engines, reference says {meta.train_engines}")
    if len(test) != meta.test_engines:
        issues.append(f"{subset}: {len(test)} test engines, reference says {meta.test_engines}")
    for msg in issues:
        warnings.warn(msg, stacklevel=2)
    return issues


def load_subset(data_dir, subset: str):
    """Read ``train_/test_/RUL_<subset>.txt`` from ``data_dir``."""
    from pathlib import Path

    base = Path(data_dir)
    paths = [base / f"{kind}_{subset}.txt" for kind in ("train", "test", "RUL")]
    for p in paths:
        if not p.exists():
            raise FileNotFoundError(f"missing data file: {p}")
    with open(paths[0]) as fh:
        train = parse_trajectory_file(fh)
    with open(paths[1]) as fh:
        test = parse_trajectory_file(fh)
    with open(paths[2]) as fh:
        offsets = parse_rul_file(fh, len(test))
    return train, test, offsets
