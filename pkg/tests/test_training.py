import math

import numpy as np
import pytest

from rul_forge import training
from rul_forge.autodiff import Graph
from rul_forge.model import Checkpoint, ConfigError, ModelConfig, init_params
from rul_forge.training import (
    AdamState,
    NumericalError,
    TrainConfig,
    adam_step,
    loss_and_grads,
    mse_loss,
    predict_batch,
    train,
)


def tiny(variant="biclstm", **kw):
    base = dict(projection_dim=6, hidden_dim=4, num_blocks=2, corrector_hidden_dim=4)
    base.update(kw)
    return ModelConfig.for_variant(variant, 3, **base)


class TestMSE:
    @pytest.mark.parametrize(
        "pred,target,expected",
        [([1.0, 2.0], [1.0, 2.0], 0.0), ([0.0], [2.0], 4.0), ([1.0, 3.0], [0.0, 1.0], 2.5)],
    )
    def test_examples(self, pred, target, expected):
        g = Graph()
        assert float(mse_loss(g.constant(pred), g.constant(target)).value) == expected

    def test_gradient(self):
        g = Graph()
        p = g.param([1.0, 3.0])
        g.backward(mse_loss(p, g.constant([0.0, 1.0])))
        # 2 (p - t) / N
        assert p.grad.tolist() == [1.0, 2.0]

    def test_shape_mismatch(self):
        g = Graph()
        with pytest.raises(ValueError):
            mse_loss(g.constant([1.0, 2.0]), g.constant([1.0]))


class TestAdam:
    def test_first_step_moves_by_learning_rate(self, rng):
        cfg = TrainConfig()
        params = {"w": rng.standard_normal((3, 2))}
        grads = {"w": rng.standard_normal((3, 2))}
        new, state = adam_step(params, grads, AdamState.zeros_like(params), cfg)
        step = params["w"] - new["w"]
        np.testing.assert_allclose(np.abs(step), cfg.learning_rate, rtol=1e-6)
        np.testing.assert_array_equal(np.sign(step), np.sign(grads["w"]))
        assert state.step == 1

    def test_zero_gradient_is_fixed_point(self):
        params = {"w": np.array([1.5, -2.0])}
        new, _ = adam_step(params, {"w": np.zeros(2)}, AdamState.zeros_like(params), TrainConfig())
        assert new["w"].tolist() == [1.5, -2.0]

    def test_two_steps_on_square_by_hand(self):
        lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
        x, m, v = 1.0, 0.0, 0.0
        for t in (1, 2):
            g = 2 * x
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            x = x - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)

        params = {"x": np.array([1.0])}
        state = AdamState.zeros_like(params)
        for _ in range(2):
            params, state = adam_step(params, {"x": 2 * params["x"]}, state, TrainConfig())
        assert params["x"][0] == pytest.approx(x, rel=1e-15)

    def test_inputs_not_mutated(self, rng):
        params = {"w": rng.standard_normal(4)}
        before = params["w"].copy()
        adam_step(params, {"w": np.ones(4)}, AdamState.zeros_like(params), TrainConfig())
        np.testing.assert_array_equal(params["w"], before)

    def test_nan_gradient_names_parameter(self):
        params = {"head.W": np.ones((2, 1))}
        with pytest.raises(NumericalError, match="head.W"):
            adam_step(params, {"head.W": np.array([[np.nan], [0.0]])}, AdamState.zeros_like(params), TrainConfig())

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ConfigError):
            TrainConfig(early_stop_patience=0)


class TestLossAndGrads:
    def test_shards_match_single_graph(self, rng):
        cfg = tiny()
        p = init_params(cfg)
        x, y = rng.standard_normal((7, 5, 3)), rng.uniform(size=7)
        loss1, g1 = loss_and_grads(p, cfg, x, y, workers=1)
        loss3, g3 = loss_and_grads(p, cfg, x, y, workers=3)
        assert loss3 == pytest.approx(loss1, rel=1e-12)
        for k in g1:
            np.testing.assert_allclose(g3[k], g1[k], rtol=1e-10, atol=1e-14)

    def test_sharded_is_deterministic(self, rng):
        cfg = tiny()
        p = init_params(cfg)
        x, y = rng.standard_normal((9, 5, 3)), rng.uniform(size=9)
        a = loss_and_grads(p, cfg, x, y, workers=4)
        b = loss_and_grads(p, cfg, x, y, workers=4)
        assert a[0] == b[0]
        assert all(a[1][k].tobytes() == b[1][k].tobytes() for k in p)

    def test_one_step_touches_every_live_parameter(self, rng):
        cfg = tiny()
        p = init_params(cfg)
        x, y = rng.standard_normal((8, 5, 3)), rng.uniform(size=8)
        _, grads = loss_and_grads(p, cfg, x, y)
        new, _ = adam_step(p, grads, AdamState.zeros_like(p), TrainConfig())
        for name in p:
            changed = np.any(new[name] != p[name])
            # the last block's backward recurrent weights have no path to the output
            assert changed == (name != "block1.bwd.Wh"), name


class TestPredictBatch:
    def _constant(self, value):
        cfg = tiny()
        params = {k: np.zeros_like(v) for k, v in init_params(cfg).items()}
        params["head.b"] = np.array([value])
        return Checkpoint(cfg, params)

    def test_scaling(self, rng):
        np.testing.assert_array_equal(predict_batch(self._constant(0.5), rng.standard_normal((4, 5, 3))), 62.5)

    @pytest.mark.parametrize("raw,expected", [(1.3, 125.0), (-0.2, 0.0)])
    def test_clamped(self, rng, raw, expected):
        np.testing.assert_array_equal(predict_batch(self._constant(raw), rng.standard_normal((2, 5, 3))), expected)

    def test_batch_equals_loop(self, rng):
        ck = Checkpoint(tiny(), init_params(tiny()))
        x = rng.standard_normal((6, 5, 3))
        full = predict_batch(ck, x, batch_size=4)
        loop = np.concatenate([predict_batch(ck, x[i : i + 1]) for i in range(6)])
        np.testing.assert_allclose(full, loop, rtol=1e-12, atol=1e-12)

    def test_wrong_width(self, rng):
        with pytest.raises(ConfigError):
            predict_batch(self._constant(0.1), rng.standard_normal((2, 5, 4)))


def _data(rng, n=24, W=5):
    x = rng.standard_normal((n, W, 3))
    y = np.clip(0.5 + 0.3 * x[:, -1, 0], 0, 1)
    return x, y


class TestTrain:
    def test_early_stopping_patience_one(self, rng, monkeypatch):
        x, y = _data(rng)
        rmses = iter([10.0, 9.0, 11.0, 8.0, 7.0])

        def fake_predict(checkpoint, windows, batch_size=1024):
            # RMSE against all-zero truth equals the constant prediction
            return np.full(len(windows), next(rmses))

        monkeypatch.setattr(training, "predict_batch", fake_predict)
        cfg = TrainConfig(batch_size=8, max_epochs=10, early_stop_patience=1)
        result = train(tiny(), x, y, x[:4], np.zeros(4), cfg)
        assert [r.val_rmse_cycles for r in result.history] == [10.0, 9.0, 11.0]
        assert result.best_epoch == 2
        assert result.checkpoint.metadata["epochs_run"] == 3

    def test_training_loss_decreases(self, rng):
        x, y = _data(rng, n=32)
        result = train(tiny("lstm"), x, y, x[:8], y[:8], TrainConfig(batch_size=32, max_epochs=5, early_stop_patience=5))
        losses = [r.train_mse for r in result.history]
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_deterministic(self, rng):
        x, y = _data(rng)
        cfg = TrainConfig(batch_size=8, max_epochs=3, seed=11)
        a = train(tiny(), x, y, x[:6], y[:6], cfg)
        b = train(tiny(), x, y, x[:6], y[:6], cfg)
        assert a.history_csv() == b.history_csv()
        assert a.checkpoint.to_json() == b.checkpoint.to_json()

    def test_history_csv_format(self, rng):
        x, y = _data(rng)
        result = train(tiny(), x, y, x[:6], y[:6], TrainConfig(batch_size=8, max_epochs=2))
        lines = result.history_csv().splitlines()
        assert lines[0] == "epoch,train_mse,val_rmse_cycles"
        assert len(lines) == 3 and lines[1].startswith("1,")
        assert result.steps == 2 * 3

    def test_best_checkpoint_kept(self, rng):
        x, y = _data(rng)
        result = train(tiny(), x, y, x[:6], y[:6], TrainConfig(batch_size=8, max_epochs=4, early_stop_patience=4))
        best = min(result.history, key=lambda r: r.val_rmse_cycles)
        assert result.best_epoch == best.epoch
        pred = predict_batch(result.checkpoint, x[:6])
        assert np.sqrt(np.mean((pred - y[:6] * 125) ** 2)) == pytest.approx(best.val_rmse_cycles, rel=1e-12)

    def test_empty_split(self, rng):
        x, y = _data(rng)
        with pytest.raises(ValueError):
            train(tiny(), x, y, x[:0], y[:0])

    def test_divergence_reports_last_good(self, rng, monkeypatch):
        x, y = _data(rng)

        def bad(params, config, xb, yb, workers=1):
            return float("nan"), {k: np.zeros_like(v) for k, v in params.items()}

        monkeypatch.setattr(training, "loss_and_grads", bad)
        with pytest.raises(training.TrainingDiverged) as info:
            train(tiny(), x, y, x[:4], y[:4], TrainConfig(batch_size=8))
        assert info.value.checkpoint.params.keys() == init_params(tiny()).keys()


def test_default_workers(monkeypatch):
    monkeypatch.setenv("RUL_FORGE_THREADS", "3")
    assert training.default_workers() == 3
    monkeypatch.setenv("RUL_FORGE_THREADS", "many")
    with pytest.raises(ConfigError):
        training.default_workers()
