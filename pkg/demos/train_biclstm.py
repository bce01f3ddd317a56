"""
Training a Bi-cLSTM and scoring the test engines
================================================

A small Bi-cLSTM is trained with Adam and early stopping, then scored on
the last window of every test engine.
"""

from rul_forge.metrics import evaluate_windows
from rul_forge.model import ModelConfig
from rul_forge.preprocessing import prepare
from rul_forge.synthetic import FleetSpec, generate_fleet
from rul_forge.training import TrainConfig, train

fleet = generate_fleet(FleetSpec(n_units=40, min_life=60, max_life=130, noise_std=0.1, seed=7))
data = prepare(fleet.train, fleet.test, fleet.offsets, seed=42)

# desk-sized model: two blocks, 16 hidden units per direction
model = ModelConfig.for_variant(
    "biclstm", data.pipeline.n_features, projection_dim=16, hidden_dim=16, num_blocks=2, corrector_hidden_dim=16
)
result = train(
    model,
    data.train.inputs, data.train.labels,
    data.val.inputs, data.val.labels,
    TrainConfig(batch_size=128, max_epochs=20, early_stop_patience=5, seed=42),
)  # fmt: skip
for rec in result.history:
    print(f"epoch {rec.epoch:2d}  train MSE {rec.train_mse:.4f}  val RMSE {rec.val_rmse_cycles:6.2f}")
print("best epoch:", result.best_epoch)

report = evaluate_windows(result.checkpoint, data.test, "SYN")
print(f"test RMSE {report.rmse:.2f} cycles, MAE {report.mae_cycles:.2f} ({report.mae_normalized:.3f} normalised), R2 {report.r2:.3f}")
for u, t, p in list(zip(report.unit_ids, report.true_rul, report.pred_rul))[:5]:
    print(f"engine {u:2d}: true {t:5.1f}  predicted {p:5.1f}")
