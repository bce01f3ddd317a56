"""MSE objective, Adam, and the early-stopped mini-batch training loop.

Labels and predictions live on the normalised scale ``RUL / 125`` during
optimisation; validation RMSE and :func:`predict_batch` report raw cycles.
"""

from __future__ import annotations

import copy
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .model import Checkpoint, ConfigError, ModelConfig, Params, bind, forward, forward_graph, init_params

logger = logging.getLogger(__name__)

RUL_CAP = 125.0


class NumericalError(FloatingPointError):
    """A loss or gradient became non-finite."""


class TrainingDiverged(NumericalError):
    """Training produced a NaN loss; ``checkpoint`` holds the last good parameters."""

    def __init__(self, message, checkpoint: Checkpoint, history: list):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.history = history


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 256
    max_epochs: int = 100
    early_stop_patience: int = 10
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.early_stop_patience < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("patience, batch_size and max_epochs must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


def default_workers() -> int:
    """Worker cap from ``RUL_FORGE_THREADS`` (default 1)."""
    raw = os.environ.get("RUL_FORGE_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"RUL_FORGE_THREADS must be an integer, got {raw!r}") from None


def mse_loss(pred: ad.Node, target: ad.Node) -> ad.Node:
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss: prediction shape {pred.shape} != target shape {target.shape}")
    if pred.value.size == 0:
        raise ValueError("mse_loss of an empty batch")
    diff = pred - target
    return ad.reduce_mean(diff * diff)


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Params) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: Params, grads: Dict[str, np.ndarray], state: AdamState, cfg: TrainConfig) -> Tuple[Params, AdamState]:
    """One bias-corrected Adam update. Returns new dicts; inputs are untouched."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
    step = state.step + 1
    c1 = 1.0 - cfg.beta1**step
    c2 = 1.0 - cfg.beta2**step
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        new_params[name] = p - cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(new_m, new_v, step)


def loss_and_grads(params: Params, config: ModelConfig, x: np.ndarray, y: np.ndarray, workers: int = 1) -> Tuple[float, Dict[str, np.ndarray]]:
    """Batch MSE and its gradient w.r.t. every parameter.

    With ``workers > 1`` the batch is cut into that many contiguous shards,
    each on its own graph; shard results are summed in shard order.
    """
    n = len(x)
    shards = np.array_split(np.arange(n), min(workers, n))

    def run(idx):
        graph = ad.Graph()
        leaves = bind(graph, params)
        pred = forward_graph(graph, leaves, config, x[idx])
        diff = pred - graph.constant(y[idx].reshape(-1, 1))
        # each shard contributes its share of the full-batch mean
        loss = ad.mul(ad.reduce_sum(diff * diff), 1.0 / n)
        graph.backward(loss)
        return float(loss.value), {k: leaf.grad for k, leaf in leaves.items()}

    if len(shards) == 1:
        results = [run(shards[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(shards)) as pool:
            results = list(pool.map(run, shards))
    total = 0.0
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    for loss, g in results:
        total += loss
        for k in grads:
            if g[k] is not None:
                grads[k] = grads[k] + g[k]
    return total, grads


def predict_batch(checkpoint: Checkpoint, windows: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    """RUL in cycles for each window: model output x 125, clamped to [0, 125]."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3 or windows.shape[2] != checkpoint.config.input_dim:
        raise ConfigError(
            f"windows of shape {windows.shape} do not match checkpoint input_dim {checkpoint.config.input_dim}"
        )
    out = [
        forward(checkpoint.params, checkpoint.config, windows[i : i + batch_size])
        for i in range(0, len(windows), batch_size)
    ]
    raw = np.concatenate(out) if out else np.zeros(0)
    return np.clip(raw * RUL_CAP, 0.0, RUL_CAP)


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_rmse_cycles: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    steps: int = 0

    def history_csv(self) -> str:
        lines = ["epoch,train_mse,val_rmse_cycles"]
        lines += [f"{r.epoch},{r.train_mse:.17g},{r.val_rmse_cycles:.17g}" for r in self.history]
        return "\n".join(lines) + "\n"


def train(
    model_cfg: ModelConfig,
    train_x: np.ndarray,
    train_y: np.ndarray,
    val_x: np.ndarray,
    val_y: np.ndarray,
    cfg: TrainConfig = TrainConfig(),
    params: Optional[Params] = None,
) -> TrainResult:
    """Fit the model with Adam and keep the epoch with the lowest validation RMSE.

    ``train_y`` / ``val_y`` are normalised labels (RUL / 125).
    """
    if len(train_x) == 0 or len(val_x) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if len(train_x) != len(train_y) or len(val_x) != len(val_y):
        raise ValueError("inputs and labels differ in length")
    params = init_params(model_cfg) if params is None else copy.deepcopy(params)
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng(cfg.seed)
    val_true = np.asarray(val_y, dtype=np.float64) * RUL_CAP

    meta = {"train_config": asdict(cfg)}
    best = Checkpoint(model_cfg, copy.deepcopy(params), cfg.seed, dict(meta, best_epoch=0))
    best_rmse = np.inf
    history: List[EpochRecord] = []
    since_best = 0
    n = len(train_x)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = loss_and_grads(params, model_cfg, train_x[idx], train_y[idx], cfg.workers)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} at epoch {epoch}", best, history)
            params, state = adam_step(params, grads, state, cfg)
            total += loss * len(idx)
        current = Checkpoint(model_cfg, params, cfg.seed)
        pred = predict_batch(current, val_x)
        val_rmse = float(np.sqrt(np.mean((pred - val_true) ** 2)))
        history.append(EpochRecord(epoch, total / n, val_rmse))
        logger.info("epoch %d train_mse %.6f val_rmse %.3f", epoch, total / n, val_rmse)
        if val_rmse < best_rmse:
            best_rmse = val_rmse
            best = Checkpoint(
                model_cfg, copy.deepcopy(params), cfg.seed, dict(meta, best_epoch=epoch, best_val_rmse=val_rmse)
            )
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                break
    best.metadata["epochs_run"] = len(history)
    return TrainResult(best, history, best.metadata["best_epoch"], state.step)
