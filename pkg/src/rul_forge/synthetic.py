"""Seeded run-to-failure fleets in C-MAPSS layout.

Each informative sensor follows ``base + regime offset + amp * profile(t/T)``
plus Gaussian noise, where ``profile`` is linear (``t/T``) or an
exponential onset (``a * exp(b * t/T)``). The remaining sensors are noise
around a constant or exactly constant. Test units are separate engines cut
off before failure; their terminal offset is the cycles they had left.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .cmapss_io import N_SENSORS, EngineTrajectory, format_rul, format_trajectories

# Setting centres in the style of the six C-MAPSS flight conditions.
DEFAULT_CENTERS = (
    (0.0, 0.0, 100.0),
    (10.0, 0.25, 100.0),
    (20.0, 0.70, 100.0),
    (25.0, 0.62, 60.0),
    (35.0, 0.84, 100.0),
    (42.0, 0.84, 100.0),
)


@dataclass(frozen=True)
class FleetSpec:
    n_units: int = 50
    n_test_units: Optional[int] = None
    min_life: int = 80
    max_life: int = 160
    n_regimes: int = 1
    regime_centers: Tuple[Tuple[float, float, float], ...] = DEFAULT_CENTERS
    setting_jitter: float = 0.002
    profile: str = "linear"
    noise_std: float = 0.1
    n_informative: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.min_life < 30 or self.max_life < self.min_life:
            raise ValueError("lifetimes must satisfy 30 <= min_life <= max_life")
        if not 1 <= self.n_informative <= N_SENSORS:
            raise ValueError(f"n_informative must be in 1..{N_SENSORS}")
        if self.n_regimes not in (1, 6):
            raise ValueError("n_regimes must be 1 or 6")
        if len(self.regime_centers) < self.n_regimes:
            raise ValueError("not enough regime centres")
        if self.profile not in ("linear", "exponential"):
            raise ValueError(f"unknown profile {self.profile!r}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")

    @property
    def test_units(self) -> int:
        return self.n_units if self.n_test_units is None else self.n_test_units

    @classmethod
    def from_json(cls, text: str) -> "FleetSpec":
        d = json.loads(text)
        if "regime_centers" in d:
            d["regime_centers"] = tuple(tuple(c) for c in d["regime_centers"])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)


@dataclass
class SensorModel:
    informative: np.ndarray  # sensor indices
    base: np.ndarray  # (21,)
    amplitude: np.ndarray  # (21,), zero for uninformative
    rate: np.ndarray  # (21,), exponential-onset exponent
    regime_offsets: np.ndarray  # (n_regimes, 21)
    constant: np.ndarray  # (21,) bool, sensors that never vary

    def profile(self, spec: FleetSpec, frac: np.ndarray) -> np.ndarray:
        """(T, 21) degradation term for life fractions ``frac``."""
        frac = np.asarray(frac, dtype=np.float64)[:, None]
        if spec.profile == "linear":
            shape = np.broadcast_to(frac, (len(frac), N_SENSORS))
        else:
            # a * exp(b * t/T) with a = 1/(e^b - 1), shifted so the curve starts near 0
            shape = (np.exp(self.rate * frac) - 1.0) / (np.exp(self.rate) - 1.0)
        return self.amplitude * shape

    def end_of_life(self, regime: int = 0) -> np.ndarray:
        return self.base + self.regime_offsets[regime] + self.amplitude


def sensor_model(spec: FleetSpec) -> SensorModel:
    rng = np.random.default_rng([spec.seed, 1])
    informative = np.sort(rng.choice(N_SENSORS, size=spec.n_informative, replace=False))
    base = rng.uniform(5.0, 50.0, size=N_SENSORS)
    amplitude = np.zeros(N_SENSORS)
    amplitude[informative] = rng.uniform(2.0, 5.0, size=spec.n_informative) * rng.choice([-1.0, 1.0], size=spec.n_informative)
    rate = rng.uniform(2.0, 4.0, size=N_SENSORS)
    offsets = np.zeros((spec.n_regimes, N_SENSORS))
    if spec.n_regimes > 1:
        offsets = rng.uniform(-20.0, 20.0, size=(spec.n_regimes, N_SENSORS))
    uninformative = np.setdiff1d(np.arange(N_SENSORS), informative)
    constant = np.zeros(N_SENSORS, dtype=bool)
    constant[uninformative[::3]] = True
    offsets[:, constant] = 0.0
    return SensorModel(informative, base, amplitude, rate, offsets, constant)


def lifetimes(spec: FleetSpec, split: str = "train") -> np.ndarray:
    stream = {"train": 2, "test": 3}[split]
    rng = np.random.default_rng([spec.seed, stream])
    n = spec.n_units if split == "train" else spec.test_units
    return rng.integers(spec.min_life, spec.max_life + 1, size=n)


def _unit(spec: FleetSpec, model: SensorModel, unit_id: int, life: int, observed: int, rng) -> EngineTrajectory:
    t = np.arange(1, observed + 1)
    regimes = rng.integers(spec.n_regimes, size=observed) if spec.n_regimes > 1 else np.zeros(observed, dtype=int)
    centers = np.asarray(spec.regime_centers, dtype=np.float64)[regimes]
    settings = centers + spec.setting_jitter * rng.standard_normal((observed, 3)) * np.array([1.0, 0.01, 0.0])
    sensors = model.base + model.regime_offsets[regimes] + model.profile(spec, t / life)
    noise = spec.noise_std * rng.standard_normal((observed, N_SENSORS))
    noise[:, model.constant] = 0.0
    return EngineTrajectory(unit_id, t, settings, sensors + noise)


@dataclass
class Fleet:
    spec: FleetSpec
    train: List[EngineTrajectory]
    test: List[EngineTrajectory]
    offsets: List[int]
    train_lifetimes: np.ndarray
    test_lifetimes: np.ndarray

    def write(self, directory, name: str = "SYN") -> dict:
        """Write ``train_/test_/RUL_<name>.txt``; returns the three paths."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = {k: d / f"{k}_{name}.txt" for k in ("train", "test", "RUL")}
        paths["train"].write_text(format_trajectories(self.train))
        paths["test"].write_text(format_trajectories(self.test))
        paths["RUL"].write_text(format_rul(self.offsets))
        return paths


def generate_fleet(spec: FleetSpec) -> Fleet:
    model = sensor_model(spec)
    train_life = lifetimes(spec, "train")
    test_life = lifetimes(spec, "test")
    train = [
        _unit(spec, model, i + 1, int(T), int(T), np.random.default_rng([spec.seed, 10, i]))
        for i, T in enumerate(train_life)
    ]
    test, offsets = [], []
    for i, T in enumerate(test_life):
        rng = np.random.default_rng([spec.seed, 20, i])
        # observe at least 20 cycles, stop at least one cycle before failure
        observed = int(rng.integers(20, int(T)))
        test.append(_unit(spec, model, i + 1, int(T), observed, rng))
        offsets.append(int(T) - observed)
    return Fleet(spec, train, test, offsets, train_life, test_life)


def oracle_rul(spec: FleetSpec, unit: int, t: int, split: str = "train") -> int:
    """Uncapped ``max(0, T - t)`` from the generator's own lifetimes."""
    lives = lifetimes(spec, split)
    if not 1 <= unit <= len(lives):
        raise KeyError(f"unit {unit} not in the {split} fleet of {len(lives)}")
    return max(0, int(lives[unit - 1]) - int(t))
