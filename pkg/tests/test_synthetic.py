import numpy as np
import pytest

from rul_forge import kmeans
from rul_forge.cmapss_io import load_subset
from rul_forge.preprocessing import apply_zscore, build_windows, compute_rul, fit_pipeline, fit_zscore, transform
from rul_forge.synthetic import FleetSpec, generate_fleet, lifetimes, oracle_rul, sensor_model


class TestGenerator:
    def test_noiseless_end_of_life(self):
        spec = FleetSpec(n_units=3, n_test_units=2, min_life=40, max_life=50, noise_std=0.0, seed=1)
        fleet, model = generate_fleet(spec), sensor_model(spec)
        for traj in fleet.train:
            np.testing.assert_allclose(traj.sensors[-1], model.end_of_life(), rtol=1e-12)

    def test_exponential_profile_endpoints(self):
        spec = FleetSpec(profile="exponential", noise_std=0.0)
        model = sensor_model(spec)
        out = model.profile(spec, np.array([0.0, 1.0]))
        np.testing.assert_allclose(out[0], 0.0, atol=1e-12)
        np.testing.assert_allclose(out[1], model.amplitude, rtol=1e-12)

    def test_constant_sensors_are_constant(self, small_fleet):
        model = sensor_model(small_fleet.spec)
        for traj in small_fleet.train:
            assert np.all(np.ptp(traj.sensors[:, model.constant], axis=0) == 0)

    def test_six_regimes_recovered(self):
        spec = FleetSpec(n_units=6, n_test_units=5, min_life=40, max_life=60, n_regimes=6, seed=5)
        settings = np.vstack([t.settings for t in generate_fleet(spec).train])
        std = apply_zscore(fit_zscore(settings), settings)
        result = kmeans.fit(std, k=6, seed=0)
        centers = apply_zscore(fit_zscore(settings), np.array(spec.regime_centers))
        for c in centers:
            assert np.min(np.linalg.norm(result.centroids - c, axis=1)) < 0.01

    def test_byte_identical_files(self, tmp_path):
        spec = FleetSpec(n_units=5, n_test_units=5, min_life=30, max_life=40, seed=9)
        a = generate_fleet(spec).write(tmp_path / "a")
        b = generate_fleet(spec).write(tmp_path / "b")
        for key in a:
            assert a[key].read_bytes() == b[key].read_bytes()

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            FleetSpec(min_life=10)
        with pytest.raises(ValueError):
            FleetSpec(n_regimes=3)

    def test_json_round_trip(self):
        spec = FleetSpec(n_units=7, profile="exponential", seed=3)
        assert FleetSpec.from_json(spec.to_json()) == spec


class TestOracle:
    def test_lifetimes_match_fleet(self, small_fleet):
        assert [len(t) for t in small_fleet.train] == small_fleet.train_lifetimes.tolist()
        assert small_fleet.train_lifetimes.tolist() == lifetimes(small_fleet.spec).tolist()

    def test_oracle_rul(self, small_fleet):
        T = len(small_fleet.train[0])
        assert oracle_rul(small_fleet.spec, 1, 1) == T - 1
        assert oracle_rul(small_fleet.spec, 1, T) == 0
        with pytest.raises(KeyError):
            oracle_rul(small_fleet.spec, 99, 1)

    def test_test_offsets_match_oracle(self, small_fleet):
        for traj, offset in zip(small_fleet.test, small_fleet.offsets):
            assert offset == oracle_rul(small_fleet.spec, traj.unit_id, len(traj), "test") > 0

    def test_capped_labels_match_oracle(self, small_fleet):
        pipe = fit_pipeline(small_fleet.train, seed=0)
        batch = build_windows(pipe, [transform(pipe, t) for t in small_fleet.train], "train")
        for uid, end, label in zip(batch.unit_ids, batch.end_cycles, batch.labels_cycles):
            assert label == min(125, oracle_rul(small_fleet.spec, int(uid), int(end)))

    def test_files_parse_cleanly(self, small_fleet, tmp_path):
        small_fleet.write(tmp_path, "SYN")
        train, test, offsets = load_subset(tmp_path, "SYN")
        assert offsets == small_fleet.offsets
        for t in train + test:
            compute_rul(t)


@pytest.mark.slow
def test_noiseless_fleet_is_learnable():
    from rul_forge.metrics import evaluate_test
    from rul_forge.model import ModelConfig
    from rul_forge.preprocessing import prepare
    from rul_forge.training import TrainConfig, predict_batch, train

    spec = FleetSpec(n_units=30, n_test_units=20, min_life=60, max_life=100, noise_std=0.0, seed=4)
    fleet = generate_fleet(spec)
    data = prepare(fleet.train, fleet.test, fleet.offsets, seed=0)
    cfg = ModelConfig.for_variant("lstm", data.pipeline.n_features, projection_dim=16, hidden_dim=16, num_blocks=1)
    result = train(
        cfg, data.train.inputs, data.train.labels, data.val.inputs, data.val.labels,
        TrainConfig(learning_rate=3e-3, batch_size=64, max_epochs=60, early_stop_patience=10),
    )  # fmt: skip
    pred = predict_batch(result.checkpoint, data.val.inputs)
    assert np.sqrt(np.mean((pred - data.val.labels_cycles) ** 2)) < 5.0
    report = evaluate_test(result.checkpoint, data.pipeline, fleet.test, fleet.offsets)
    assert len(report.unit_ids) == 20 and report.rmse < 10.0
