"""Condition-aware preprocessing: labels, normalisation, feature selection,
smoothing and sliding windows.

Order of operations for every unit::

    settings  -> global z-score
    sensors   -> global z-score (single condition) or per-regime z-score
                 (multi condition; regime = nearest k-means centroid of the
                 standardised settings)
    retained  -> sensors whose forest importance is >= 1e-3
    features  = [settings | retained | EWMA(retained)]
    windows   -> drop cycles <= 10, then length-15 windows labelled with the
                 capped RUL at their final cycle

Every statistic is fitted on training trajectories only.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from . import kmeans
from .cmapss_io import DataError, EngineTrajectory, subset_meta

RUL_CAP = 125
WINDOW = 15
WARMUP_CUTOFF = 10
EWMA_BETA = 0.98
N_REGIMES = 6
IMPORTANCE_THRESHOLD = 1e-3
CONSTANT_STD = 1e-8

SINGLE = "single-condition"
MULTI = "multi-condition"


# ---------------------------------------------------------------------------
# labels
# ---------------------------------------------------------------------------


def compute_rul(trajectory: Union[EngineTrajectory, Sequence[int]], terminal_offset: int = 0, cap: int = RUL_CAP) -> np.ndarray:
    """Capped RUL per cycle: ``min(cap, max(0, T - t + terminal_offset))``."""
    cycles = np.asarray(trajectory.cycles if isinstance(trajectory, EngineTrajectory) else trajectory, dtype=np.int64)
    if len(cycles) == 0 or np.any(cycles != np.arange(1, len(cycles) + 1)):
        raise DataError("cycles must run 1..T without gaps")
    T = len(cycles)
    return np.minimum(cap, np.maximum(0, T - cycles + int(terminal_offset))).astype(np.float64)


# ---------------------------------------------------------------------------
# z-scores and regimes
# ---------------------------------------------------------------------------


@dataclass
class ZScoreStats:
    mean: np.ndarray
    std: np.ndarray

    @property
    def constant(self) -> np.ndarray:
        return self.std < CONSTANT_STD

    def to_dict(self):
        return {"mean": [float(v).hex() for v in self.mean], "std": [float(v).hex() for v in self.std]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array([float.fromhex(v) for v in d["mean"]]), np.array([float.fromhex(v) for v in d["std"]]))


def fit_zscore(X: np.ndarray) -> ZScoreStats:
    """Per-column mean and population standard deviation."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if len(X) == 0:
        raise ValueError("cannot fit z-score statistics on zero rows")
    return ZScoreStats(X.mean(axis=0), X.std(axis=0))


def apply_zscore(stats: ZScoreStats, X: np.ndarray) -> np.ndarray:
    """``(x - mean) / std``; constant columns become 0."""
    X = np.asarray(X, dtype=np.float64)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[:, None]
    const = stats.constant
    safe = np.where(const, 1.0, stats.std)
    Z = (X - stats.mean) / safe
    Z[:, const] = 0.0
    return Z[:, 0] if squeeze else Z


@dataclass
class RegimeModel:
    centroids: np.ndarray
    stats: List[ZScoreStats]

    @property
    def k(self) -> int:
        return len(self.centroids)

    def assign(self, settings_std: np.ndarray) -> np.ndarray:
        return kmeans.assign(self.centroids, settings_std)

    def normalize(self, settings_std: np.ndarray, sensors: np.ndarray) -> np.ndarray:
        regimes = self.assign(settings_std)
        out = np.empty_like(np.asarray(sensors, dtype=np.float64))
        for j in range(self.k):
            rows = regimes == j
            if rows.any():
                out[rows] = apply_zscore(self.stats[j], sensors[rows])
        return out

    def to_dict(self):
        return {
            "centroids": [[float(v).hex() for v in row] for row in self.centroids],
            "stats": [s.to_dict() for s in self.stats],
        }

    @classmethod
    def from_dict(cls, d):
        C = np.array([[float.fromhex(v) for v in row] for row in d["centroids"]])
        return cls(C, [ZScoreStats.from_dict(s) for s in d["stats"]])


def fit_regime_model(settings_std: np.ndarray, sensors: np.ndarray, k: int = N_REGIMES, seed: int = 0) -> RegimeModel:
    """Cluster standardised settings into ``k`` regimes; z-score sensors within each."""
    try:
        result = kmeans.fit(settings_std, k=k, seed=seed)
    except kmeans.KMeansError as exc:
        raise DataError(str(exc)) from None
    stats = []
    for j in range(k):
        rows = result.labels == j
        if not rows.any():
            raise DataError(f"regime {j} is empty on training data; re-seed the clustering")
        stats.append(fit_zscore(sensors[rows]))
    return RegimeModel(result.centroids, stats)


# ---------------------------------------------------------------------------
# feature selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 12
    min_samples_leaf: int = 5
    n_jobs: int = 1


@dataclass
class FeatureSelection:
    importances: np.ndarray
    retained: List[int]
    threshold: float = IMPORTANCE_THRESHOLD

    def to_dict(self):
        return {
            "importances": [float(v).hex() for v in self.importances],
            "retained": list(self.retained),
            "threshold": self.threshold,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array([float.fromhex(v) for v in d["importances"]]), list(d["retained"]), d["threshold"])


def rf_feature_select(
    X: np.ndarray,
    y: np.ndarray,
    seed: int = 0,
    forest: ForestConfig = ForestConfig(),
    threshold: float = IMPORTANCE_THRESHOLD,
) -> FeatureSelection:
    """Keep the columns whose random-forest impurity importance is >= ``threshold``."""
    from sklearn.ensemble import RandomForestRegressor

    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(X) < 100:
        raise DataError(f"feature selection needs at least 100 rows, got {len(X)}")
    if np.all(np.ptp(X, axis=0) == 0):
        raise DataError("every feature is constant")
    rf = RandomForestRegressor(
        n_estimators=forest.n_trees,
        criterion="squared_error",
        max_depth=forest.max_depth,
        min_samples_leaf=forest.min_samples_leaf,
        max_features=max(1, X.shape[1] // 3),
        bootstrap=True,
        random_state=seed,
        n_jobs=forest.n_jobs,
    )
    rf.fit(X, y)
    imp = np.asarray(rf.feature_importances_, dtype=np.float64)
    if imp.sum() <= 0:
        raise DataError("forest found no informative split")
    imp = imp / imp.sum()
    retained = [int(i) for i in np.nonzero(imp >= threshold)[0]]
    if not retained:
        raise DataError("no feature passed the importance threshold")
    return FeatureSelection(imp, retained, threshold)


# ---------------------------------------------------------------------------
# smoothing
# ---------------------------------------------------------------------------


def ewma_smooth(series: np.ndarray, beta: float = EWMA_BETA) -> np.ndarray:
    """``s_1 = x_1``, ``s_t = beta * s_{t-1} + (1 - beta) * x_t`` along axis 0."""
    x = np.asarray(series, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("cannot smooth an empty series")
    out = np.empty_like(x)
    out[0] = x[0]
    for t in range(1, len(x)):
        out[t] = beta * out[t - 1] + (1.0 - beta) * x[t]
    return out


# ---------------------------------------------------------------------------
# fitted pipeline
# ---------------------------------------------------------------------------


@dataclass
class FittedPipeline:
    subset: str
    mode: str
    setting_stats: ZScoreStats
    sensor_stats: Union[ZScoreStats, RegimeModel]
    selection: FeatureSelection
    beta: float = EWMA_BETA
    window: int = WINDOW
    warmup_cutoff: int = WARMUP_CUTOFF
    rul_cap: int = RUL_CAP
    seed: int = 0

    @property
    def n_features(self) -> int:
        return 3 + 2 * len(self.selection.retained)

    def standardize_settings(self, traj: EngineTrajectory) -> np.ndarray:
        return apply_zscore(self.setting_stats, traj.settings)

    def to_dict(self) -> dict:
        return {
            "format": "rul_forge.pipeline/1",
            "subset": self.subset,
            "mode": self.mode,
            "setting_stats": self.setting_stats.to_dict(),
            "sensor_stats": self.sensor_stats.to_dict(),
            "n_regimes": self.sensor_stats.k if isinstance(self.sensor_stats, RegimeModel) else 1,
            "selection": self.selection.to_dict(),
            "beta": self.beta,
            "window": self.window,
            "warmup_cutoff": self.warmup_cutoff,
            "rul_cap": self.rul_cap,
            "n_features": self.n_features,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "FittedPipeline":
        d = json.loads(text)
        sensor = (RegimeModel.from_dict if d["mode"] == MULTI else ZScoreStats.from_dict)(d["sensor_stats"])
        return cls(
            d["subset"],
            d["mode"],
            ZScoreStats.from_dict(d["setting_stats"]),
            sensor,
            FeatureSelection.from_dict(d["selection"]),
            d["beta"],
            d["window"],
            d["warmup_cutoff"],
            d["rul_cap"],
            d.get("seed", 0),
        )


def default_mode(subset: str) -> str:
    return MULTI if subset_meta(subset).multi_condition else SINGLE


def _stack(trajs: Sequence[EngineTrajectory]):
    if not trajs:
        raise ValueError("no training trajectories")
    for t in trajs:
        t.validate()
    return np.vstack([t.settings for t in trajs]), np.vstack([t.sensors for t in trajs])


def fit_pipeline(
    train: Sequence[EngineTrajectory],
    subset: str = "FD001",
    mode: Optional[str] = None,
    seed: int = 0,
    forest: ForestConfig = ForestConfig(),
    n_regimes: int = N_REGIMES,
) -> FittedPipeline:
    """Learn every statistic from training trajectories."""
    mode = mode or default_mode(subset)
    if mode not in (SINGLE, MULTI):
        raise ValueError(f"unknown mode {mode!r}")
    settings, sensors = _stack(train)
    setting_stats = fit_zscore(settings)
    settings_std = apply_zscore(setting_stats, settings)
    if mode == MULTI:
        sensor_stats = fit_regime_model(settings_std, sensors, k=n_regimes, seed=seed)
        normed = sensor_stats.normalize(settings_std, sensors)
    else:
        sensor_stats = fit_zscore(sensors)
        normed = apply_zscore(sensor_stats, sensors)
    labels = np.concatenate([compute_rul(t) for t in train])
    selection = rf_feature_select(normed, labels, seed=seed, forest=forest)
    return FittedPipeline(subset, mode, setting_stats, sensor_stats, selection, seed=seed)


def normalize_sensors(pipeline: FittedPipeline, traj: EngineTrajectory) -> np.ndarray:
    settings_std = pipeline.standardize_settings(traj)
    if pipeline.mode == MULTI:
        return pipeline.sensor_stats.normalize(settings_std, traj.sensors)
    return apply_zscore(pipeline.sensor_stats, traj.sensors)


@dataclass
class ProcessedUnit:
    unit_id: int
    cycles: np.ndarray
    features: np.ndarray
    rul: np.ndarray


def transform(pipeline: FittedPipeline, traj: EngineTrajectory, terminal_offset: int = 0) -> ProcessedUnit:
    """Feature matrix ``[settings | retained | smoothed retained]`` and capped RUL."""
    traj.validate()
    normed = normalize_sensors(pipeline, traj)[:, pipeline.selection.retained]
    feats = np.hstack([pipeline.standardize_settings(traj), normed, ewma_smooth(normed, pipeline.beta)])
    rul = compute_rul(traj, terminal_offset, pipeline.rul_cap)
    return ProcessedUnit(traj.unit_id, traj.cycles.copy(), feats, rul)


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sIIII")
_MAGIC = b"RULW"
_VERSION = 1


@dataclass
class WindowBatch:
    inputs: np.ndarray  # (B, W, F)
    labels: np.ndarray  # (B,) normalised RUL
    unit_ids: np.ndarray  # (B,)
    end_cycles: np.ndarray  # (B,)

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.inputs.shape)

    @property
    def labels_cycles(self) -> np.ndarray:
        return self.labels * RUL_CAP

    def take(self, mask) -> "WindowBatch":
        return WindowBatch(self.inputs[mask], self.labels[mask], self.unit_ids[mask], self.end_cycles[mask])

    def to_bytes(self) -> bytes:
        B, W, F = self.inputs.shape
        prov = np.empty((B, 2), dtype="<i8")
        prov[:, 0] = self.unit_ids
        prov[:, 1] = self.end_cycles
        return b"".join(
            [
                _HEADER.pack(_MAGIC, _VERSION, B, W, F),
                np.ascontiguousarray(self.inputs, dtype="<f8").tobytes(),
                np.ascontiguousarray(self.labels, dtype="<f8").tobytes(),
                prov.tobytes(),
            ]
        )

    @classmethod
    def from_bytes(cls, buf: bytes) -> "WindowBatch":
        magic, version, B, W, F = _HEADER.unpack_from(buf, 0)
        if magic != _MAGIC:
            raise DataError("not a window batch file (bad magic)")
        if version != _VERSION:
            raise DataError(f"unsupported window batch version {version}")
        off = _HEADER.size
        n_in = B * W * F * 8
        expected = off + n_in + B * 8 + B * 16
        if len(buf) != expected:
            raise DataError(f"window batch file is {len(buf)} bytes, expected {expected}")
        inputs = np.frombuffer(buf, dtype="<f8", count=B * W * F, offset=off).reshape(B, W, F).astype(np.float64)
        labels = np.frombuffer(buf, dtype="<f8", count=B, offset=off + n_in).astype(np.float64)
        prov = np.frombuffer(buf, dtype="<i8", count=2 * B, offset=off + n_in + B * 8).reshape(B, 2)
        return cls(inputs, labels, prov[:, 0].astype(np.int64), prov[:, 1].astype(np.int64))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "WindowBatch":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def build_windows(pipeline: FittedPipeline, units: Sequence[ProcessedUnit], mode: str = "train") -> WindowBatch:
    """Slide length-W windows over each unit after dropping early cycles.

    ``mode="train"`` emits every full window; ``mode="test"`` emits only the
    last window per unit, left-padded with its earliest kept row if short.
    """
    if mode not in ("train", "test"):
        raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")
    W, cap = pipeline.window, float(pipeline.rul_cap)
    xs, ys, uids, ends = [], [], [], []
    F = pipeline.n_features
    for unit in units:
        keep = unit.cycles > pipeline.warmup_cutoff
        feats, rul, cycles = unit.features[keep], unit.rul[keep], unit.cycles[keep]
        n = len(cycles)
        if n == 0:
            raise DataError(f"unit {unit.unit_id} has no cycles after the first {pipeline.warmup_cutoff}")
        if mode == "train":
            if n < W:
                continue
            starts = np.arange(n - W + 1)
            idx = starts[:, None] + np.arange(W)[None, :]
            xs.append(feats[idx])
            ys.append(rul[starts + W - 1] / cap)
            uids.append(np.full(len(starts), unit.unit_id))
            ends.append(cycles[starts + W - 1])
        else:
            if n >= W:
                block = feats[n - W :]
            else:
                block = np.vstack([np.repeat(feats[:1], W - n, axis=0), feats])
            xs.append(block[None])
            ys.append(np.array([rul[-1] / cap]))
            uids.append(np.array([unit.unit_id]))
            ends.append(np.array([cycles[-1]]))
    if not xs:
        return WindowBatch(np.zeros((0, W, F)), np.zeros(0), np.zeros(0, np.int64), np.zeros(0, np.int64))
    return WindowBatch(
        np.concatenate(xs).astype(np.float64),
        np.concatenate(ys).astype(np.float64),
        np.concatenate(uids).astype(np.int64),
        np.concatenate(ends).astype(np.int64),
    )


def split_train_val(batch: WindowBatch, ratio: float = 0.8, seed: int = 0) -> Tuple[WindowBatch, WindowBatch]:
    """Partition windows by unit; a seeded shuffle sends ``ratio`` of units to train."""
    units = list(dict.fromkeys(batch.unit_ids.tolist()))
    if len(units) < 5:
        raise ValueError(f"need at least 5 units to split, got {len(units)}")
    order = np.random.default_rng(seed).permutation(len(units))
    n_train = min(len(units) - 1, max(1, int(round(ratio * len(units)))))
    train_units = {units[i] for i in order[:n_train]}
    mask = np.array([u in train_units for u in batch.unit_ids.tolist()], dtype=bool)
    return batch.take(mask), batch.take(~mask)


@dataclass
class PreparedData:
    pipeline: FittedPipeline
    train: WindowBatch
    val: WindowBatch
    test: WindowBatch
    extra: dict = field(default_factory=dict)


def prepare(
    train: Sequence[EngineTrajectory],
    test: Sequence[EngineTrajectory],
    offsets: Sequence[int],
    subset: str = "FD001",
    mode: Optional[str] = None,
    seed: int = 0,
    forest: ForestConfig = ForestConfig(),
) -> PreparedData:
    """Fit on ``train``, then emit train/val windows and one test window per unit."""
    if len(offsets) != len(test):
        raise DataError(f"{len(offsets)} RUL offsets for {len(test)} test units")
    pipeline = fit_pipeline(train, subset=subset, mode=mode, seed=seed, forest=forest)
    all_train = build_windows(pipeline, [transform(pipeline, t) for t in train], "train")
    tr, va = split_train_val(all_train, 0.8, seed)
    te = build_windows(pipeline, [transform(pipeline, t, o) for t, o in zip(test, offsets)], "test")
    return PreparedData(pipeline, tr, va, te)
