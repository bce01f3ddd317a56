"""
Four variants on one fleet
==========================

Plain LSTM, LSTM with the corrector, bidirectional LSTM, and both together,
trained on identical windows with the same seed. This drives the same code
as ``rul-forge baselines`` without touching the filesystem.
"""

from rul_forge.metrics import evaluate_windows
from rul_forge.model import VARIANT_LABELS, VARIANTS, ModelConfig
from rul_forge.preprocessing import prepare
from rul_forge.synthetic import FleetSpec, generate_fleet
from rul_forge.training import TrainConfig, train

fleet = generate_fleet(FleetSpec(n_units=50, min_life=60, max_life=130, noise_std=0.1, n_informative=3, seed=7))
data = prepare(fleet.train, fleet.test, fleet.offsets, seed=42)
settings = TrainConfig(batch_size=128, max_epochs=25, early_stop_patience=6, seed=42)

for variant in VARIANTS:
    model = ModelConfig.for_variant(
        variant, data.pipeline.n_features, projection_dim=16, hidden_dim=16, num_blocks=2,
        corrector_hidden_dim=16, seed=42,
    )  # fmt: skip
    result = train(model, data.train.inputs, data.train.labels, data.val.inputs, data.val.labels, settings)
    report = evaluate_windows(result.checkpoint, data.test, "SYN")
    print(f"{VARIANT_LABELS[variant]:9s} RMSE {report.rmse:6.2f}  MAE {report.mae_cycles:6.2f}  R2 {report.r2:.3f}")
