"""Central finite-difference checks of the tape's model gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np

from . import autodiff as ad
from .model import LN_EPS, ModelConfig, Params, bind, forward_graph, init_params

TOLERANCE = 1e-4
# entries whose gradient is below this in both routes are compared absolutely
DENOM_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = DENOM_FLOOR) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numerical_gradient(f: Callable[[], float], arr: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of ``f`` w.r.t. every entry of ``arr`` (perturbed in place)."""
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return grad


def _sigmoid(x):
    return 0.5 * np.tanh(0.5 * x) + 0.5


def reference_forward(params: Params, config: ModelConfig, x: np.ndarray) -> np.ndarray:
    """Plain-numpy forward pass, independent of the tape; returns (B,) predictions."""
    B, W, _ = x.shape
    H = config.hidden_dim
    seq = [np.maximum(x[:, t] @ params["proj.W"] + params["proj.b"], 0.0) for t in range(W)]
    finals = []
    for k in range(config.num_blocks):
        halves = []
        for direction in ("fwd", "bwd")[: config.directions]:
            Wx, Wh, b = (params[f"block{k}.{direction}.{n}"] for n in ("Wx", "Wh", "b"))
            h, c = np.zeros((B, H)), np.zeros((B, H))
            out = [None] * W
            for t in (range(W) if direction == "fwd" else range(W - 1, -1, -1)):
                z = seq[t] @ Wx + h @ Wh + b
                i, f, o = _sigmoid(z[:, :H]), _sigmoid(z[:, H : 2 * H]), _sigmoid(z[:, 3 * H :])
                g = np.tanh(z[:, 2 * H : 3 * H])
                c = f * c + i * g
                h = o * np.tanh(c)
                out[t] = h
            halves.append(out)
        hs = [np.hstack(parts) for parts in zip(*halves)]
        if config.use_corrector:
            p = lambda n: params[f"block{k}.{n}"]
            corrected = []
            for h, u in zip(hs, seq):
                hidden = np.maximum(np.hstack([h, u]) @ p("corr.W1") + p("corr.b1"), 0.0)
                v = h + hidden @ p("corr.W2") + p("corr.b2")
                mu = v.mean(axis=1, keepdims=True)
                var = ((v - mu) ** 2).mean(axis=1, keepdims=True)
                corrected.append((v - mu) / np.sqrt(var + LN_EPS) * p("ln.gain") + p("ln.bias"))
            hs = corrected
        finals.append(hs[-1])
        seq = hs
    return (np.hstack(finals) @ params["head.W"] + params["head.b"])[:, 0]


def model_loss(params: Params, config: ModelConfig, x: np.ndarray, y: np.ndarray, want_grad: bool = False):
    graph = ad.Graph()
    leaves = bind(graph, params)
    pred = forward_graph(graph, leaves, config, x)
    diff = pred - graph.constant(y.reshape(-1, 1))
    loss = ad.reduce_mean(diff * diff)
    if not want_grad:
        return float(loss.value)
    graph.backward(loss)
    return float(loss.value), {k: leaf.grad for k, leaf in leaves.items()}


@dataclass
class GradcheckReport:
    group_errors: Dict[str, float]
    tolerance: float = TOLERANCE

    @property
    def max_error(self) -> float:
        return max(self.group_errors.values())

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def lines(self):
        for name, err in self.group_errors.items():
            yield f"{name:24s} max rel err {err:.3e}"
        yield f"{'overall':24s} max rel err {self.max_error:.3e} -> {'PASS' if self.passed else 'FAIL'}"


def check_model(
    config: ModelConfig,
    window: int = 6,
    batch: int = 2,
    seed: int = 0,
    eps: float = 1e-5,
) -> GradcheckReport:
    """Compare tape gradients of an MSE loss with finite differences for every parameter."""
    rng = np.random.default_rng(seed)
    params = {k: v.copy() for k, v in init_params(config).items()}
    # nonzero biases so every gate and norm term is exercised away from its init
    for k, v in params.items():
        if v.ndim == 1:
            params[k] = v + rng.uniform(-0.3, 0.3, size=v.shape)
    x = rng.standard_normal((batch, window, config.input_dim))
    y = rng.uniform(0.0, 1.0, size=batch)
    _, grads = model_loss(params, config, x, y, want_grad=True)
    errors = {}
    for name, arr in params.items():
        numeric = numerical_gradient(lambda: float(np.mean((reference_forward(params, config, x) - y) ** 2)), arr, eps)
        errors[name] = float(relative_error(grads[name], numeric).max())
    return GradcheckReport(errors)


def tiny_config(seed: int = 0) -> ModelConfig:
    """F=8, H=8, 2 blocks, bidirectional with corrector."""
    return ModelConfig(
        input_dim=8, projection_dim=8, hidden_dim=8, num_blocks=2,
        bidirectional=True, use_corrector=True, corrector_hidden_dim=8, seed=seed,
    )  # fmt: skip
