"""
From raw trajectories to training windows
=========================================

A synthetic fleet stands in for C-MAPSS. We fit the preprocessing on the
training engines and look at what each stage produces.
"""

import numpy as np

from rul_forge.preprocessing import build_windows, compute_rul, fit_pipeline, prepare, transform
from rul_forge.synthetic import FleetSpec, generate_fleet

# 30 engines in six operating regimes, three degrading sensors
spec = FleetSpec(n_units=30, n_test_units=20, min_life=80, max_life=160, n_regimes=6, seed=1)
fleet = generate_fleet(spec)
print("training engine lifetimes:", fleet.train_lifetimes[:10], "...")

# piecewise-linear labels: flat at 125, then counting down to 0
rul = compute_rul(fleet.train[0])
print("first engine RUL head/tail:", rul[:3], rul[-3:])

# multi-condition mode: settings are clustered and sensors z-scored per regime
pipe = fit_pipeline(fleet.train, subset="FD004", seed=0)
print("mode:", pipe.mode, "| regimes:", pipe.sensor_stats.k)
print("sensors kept by the forest:", pipe.selection.retained)
print("importances of kept sensors:", np.round(pipe.selection.importances[pipe.selection.retained], 3))

# features are [settings | kept sensors | their smoothed versions]
unit = transform(pipe, fleet.train[0])
print("feature matrix:", unit.features.shape, "= 3 +", 2, "x", len(pipe.selection.retained))

# windows of 15 cycles after dropping the first 10
windows = build_windows(pipe, [unit], "train")
print("windows from one engine:", windows.shape, "ending at cycles", windows.end_cycles[:3], "...")

# the whole thing in one call, with an 80/20 split by engine
data = prepare(fleet.train, fleet.test, fleet.offsets, subset="FD004", seed=0)
for name in ("train", "val", "test"):
    batch = getattr(data, name)
    print(f"{name:5s}", batch.shape, "engines:", len(np.unique(batch.unit_ids)))
