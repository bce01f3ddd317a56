"""Bidirectional LSTM blocks with a residual corrector, and its ablated variants.

Layout of one forward pass over a batch of windows ``(B, W, F)``::

    z_t = relu(x_t @ W_p + b_p)                      projection, every step
    block k:  h_t = [lstm_fwd(u)_t | lstm_bwd(u)_t]  u = block input sequence
              o_t = layer_norm(h_t + C(h_t, u_t))    when the corrector is on
    y = concat(o_last of every block) @ W_h + b_h

Weights use the row-vector convention: a matrix parameter has shape
``(fan_in, fan_out)`` and is applied as ``x @ W``. LSTM gates are packed in
the order input, forget, candidate, output along the last axis.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Node

LN_EPS = 1e-5

# (bidirectional, use_corrector)
VARIANTS = {
    "lstm": (False, False),
    "clstm": (False, True),
    "bilstm": (True, False),
    "biclstm": (True, True),
}
VARIANT_LABELS = {"lstm": "LSTM", "clstm": "cLSTM", "bilstm": "Bi-LSTM", "biclstm": "Bi-cLSTM"}


class ConfigError(ValueError):
    """Model configuration or input shape is inconsistent."""


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    projection_dim: int = 64
    hidden_dim: int = 64
    num_blocks: int = 4
    bidirectional: bool = True
    use_corrector: bool = True
    corrector_hidden_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        for name in ("input_dim", "projection_dim", "hidden_dim", "num_blocks", "corrector_hidden_dim"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.use_corrector and self.block_width < 2:
            raise ConfigError("layer norm needs a block width of at least 2")

    @classmethod
    def for_variant(cls, variant: str, input_dim: int, **kwargs) -> "ModelConfig":
        try:
            bidirectional, use_corrector = VARIANTS[variant]
        except KeyError:
            raise ConfigError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}") from None
        return cls(input_dim=input_dim, bidirectional=bidirectional, use_corrector=use_corrector, **kwargs)

    @property
    def variant(self) -> str:
        for name, flags in VARIANTS.items():
            if flags == (self.bidirectional, self.use_corrector):
                return name
        raise AssertionError("unreachable")

    @property
    def directions(self) -> int:
        return 2 if self.bidirectional else 1

    @property
    def block_width(self) -> int:
        return self.directions * self.hidden_dim

    @property
    def head_width(self) -> int:
        return self.num_blocks * self.block_width

    def block_input_dim(self, k: int) -> int:
        return self.projection_dim if k == 0 else self.block_width


Params = Dict[str, np.ndarray]


def init_params(config: ModelConfig) -> Params:
    """Seeded uniform(+-1/sqrt(fan_in)) weights, zero biases, forget-gate bias 1."""
    rng = np.random.default_rng(config.seed)
    params: Params = {}

    def weight(name, fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=(fan_in, fan_out))

    H = config.hidden_dim
    weight("proj.W", config.input_dim, config.projection_dim)
    params["proj.b"] = np.zeros(config.projection_dim)
    for k in range(config.num_blocks):
        d = config.block_input_dim(k)
        dirs = ("fwd", "bwd") if config.bidirectional else ("fwd",)
        for direction in dirs:
            pre = f"block{k}.{direction}"
            weight(f"{pre}.Wx", d, 4 * H)
            weight(f"{pre}.Wh", H, 4 * H)
            b = np.zeros(4 * H)
            b[H : 2 * H] = 1.0
            params[f"{pre}.b"] = b
        if config.use_corrector:
            width = config.block_width
            weight(f"block{k}.corr.W1", width + d, config.corrector_hidden_dim)
            params[f"block{k}.corr.b1"] = np.zeros(config.corrector_hidden_dim)
            weight(f"block{k}.corr.W2", config.corrector_hidden_dim, width)
            params[f"block{k}.corr.b2"] = np.zeros(width)
            params[f"block{k}.ln.gain"] = np.ones(width)
            params[f"block{k}.ln.bias"] = np.zeros(width)
    weight("head.W", config.head_width, 1)
    params["head.b"] = np.zeros(1)
    return params


def param_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    return {k: v.shape for k, v in init_params(config).items()}


# ---------------------------------------------------------------------------
# graph-level building blocks
# ---------------------------------------------------------------------------


def linear(x: Node, W: Node, b: Node) -> Node:
    return ad.matmul(x, W) + ad.broadcast_rows(b, x.shape[0])


def project(x_t: Node, W: Node, b: Node) -> Node:
    """relu(x_t @ W + b) for a (B, F) step."""
    if x_t.shape[1] != W.shape[0]:
        raise ConfigError(f"projection expects {W.shape[0]} features, got {x_t.shape[1]}")
    return ad.relu(linear(x_t, W, b))


@dataclass
class LSTMCell:
    """Graph handles for one direction's weights."""

    Wx: Node
    Wh: Node
    b: Node

    @property
    def hidden_dim(self) -> int:
        return self.Wh.shape[0]


def lstm_step(cell: LSTMCell, x: Node, h: Node, c: Node, b_rows: Optional[Node] = None) -> Tuple[Node, Node]:
    """One LSTM update; returns the new ``(h, c)``.

    ``b_rows`` is the bias already broadcast to the batch, so a sequence can
    share one broadcast node across steps.
    """
    H = cell.hidden_dim
    if x.shape[1] != cell.Wx.shape[0]:
        raise ConfigError(f"LSTM expects input width {cell.Wx.shape[0]}, got {x.shape[1]}")
    if b_rows is None:
        b_rows = ad.broadcast_rows(cell.b, x.shape[0])
    gates = ad.matmul(x, cell.Wx) + ad.matmul(h, cell.Wh) + b_rows
    i = ad.sigmoid(ad.slice_cols(gates, 0, H))
    f = ad.sigmoid(ad.slice_cols(gates, H, 2 * H))
    g = ad.tanh(ad.slice_cols(gates, 2 * H, 3 * H))
    o = ad.sigmoid(ad.slice_cols(gates, 3 * H, 4 * H))
    c_new = f * c + i * g
    h_new = o * ad.tanh(c_new)
    return h_new, c_new


def lstm_sequence(cell: LSTMCell, seq: List[Node], reverse: bool = False) -> List[Node]:
    """Hidden states aligned with ``seq``; a reverse pass runs right to left."""
    if not seq:
        raise ValueError("LSTM over an empty sequence")
    graph = seq[0].graph
    B, H = seq[0].shape[0], cell.hidden_dim
    h = graph.constant(np.zeros((B, H)))
    c = graph.constant(np.zeros((B, H)))
    b_rows = ad.broadcast_rows(cell.b, B)
    out: List[Optional[Node]] = [None] * len(seq)
    order = range(len(seq) - 1, -1, -1) if reverse else range(len(seq))
    for t in order:
        h, c = lstm_step(cell, seq[t], h, c, b_rows)
        out[t] = h
    return out


def bilstm_forward(fwd: LSTMCell, bwd: Optional[LSTMCell], seq: List[Node]) -> List[Node]:
    """Per-step ``[h_fwd | h_bwd]``; with ``bwd=None`` just the forward states."""
    hf = lstm_sequence(fwd, seq)
    if bwd is None:
        return hf
    hb = lstm_sequence(bwd, seq, reverse=True)
    return [ad.concat([a, b], axis=1) for a, b in zip(hf, hb)]


def layer_norm(v: Node, gain: Node, bias: Node, eps: float = LN_EPS) -> Node:
    """Row-wise normalisation with population variance."""
    n = v.shape[1]
    if n < 2:
        raise ValueError("layer_norm needs at least 2 features per row")
    B = v.shape[0]
    centered = v - ad.broadcast_cols(ad.row_mean(v), n)
    var = ad.row_mean(centered * centered)
    std = ad.broadcast_cols(ad.sqrt(var + eps), n)
    return ad.div(centered, std) * ad.broadcast_rows(gain, B) + ad.broadcast_rows(bias, B)


@dataclass
class Corrector:
    W1: Node
    b1: Node
    W2: Node
    b2: Node
    gain: Node
    bias: Node


def correct(corr: Optional[Corrector], h_t: Node, x_t: Node) -> Node:
    """layer_norm(h_t + C(h_t, x_t)); identity when ``corr`` is None."""
    if corr is None:
        return h_t
    joint = ad.concat([h_t, x_t], axis=1)
    if joint.shape[1] != corr.W1.shape[0]:
        raise ConfigError(f"corrector expects {corr.W1.shape[0]} inputs, got {joint.shape[1]}")
    hidden = ad.relu(linear(joint, corr.W1, corr.b1))
    delta = linear(hidden, corr.W2, corr.b2)
    return layer_norm(h_t + delta, corr.gain, corr.bias)


def bind(graph: Graph, params: Params) -> Dict[str, Node]:
    """Place every parameter array on ``graph`` as a gradient-receiving leaf."""
    return {name: graph.param(value) for name, value in params.items()}


def forward_graph(graph: Graph, leaves: Dict[str, Node], config: ModelConfig, windows: np.ndarray) -> Node:
    """Record the full model on ``graph``; returns the (B, 1) prediction node."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim == 2:
        windows = windows[None]
    if windows.ndim != 3 or windows.shape[2] != config.input_dim:
        raise ConfigError(
            f"expected windows of shape (B, W, {config.input_dim}), got {windows.shape}"
        )
    W = windows.shape[1]
    Wp, bp = leaves["proj.W"], leaves["proj.b"]
    seq = [project(graph.constant(windows[:, t, :]), Wp, bp) for t in range(W)]

    finals = []
    for k in range(config.num_blocks):
        pre = f"block{k}"
        fwd = LSTMCell(leaves[f"{pre}.fwd.Wx"], leaves[f"{pre}.fwd.Wh"], leaves[f"{pre}.fwd.b"])
        bwd = None
        if config.bidirectional:
            bwd = LSTMCell(leaves[f"{pre}.bwd.Wx"], leaves[f"{pre}.bwd.Wh"], leaves[f"{pre}.bwd.b"])
        hs = bilstm_forward(fwd, bwd, seq)
        if config.use_corrector:
            corr = Corrector(
                leaves[f"{pre}.corr.W1"],
                leaves[f"{pre}.corr.b1"],
                leaves[f"{pre}.corr.W2"],
                leaves[f"{pre}.corr.b2"],
                leaves[f"{pre}.ln.gain"],
                leaves[f"{pre}.ln.bias"],
            )
            hs = [correct(corr, h, x) for h, x in zip(hs, seq)]
        finals.append(hs[-1])
        seq = hs
    feats = ad.concat(finals, axis=1)
    return linear(feats, leaves["head.W"], leaves["head.b"])


def forward(params: Params, config: ModelConfig, windows: np.ndarray) -> np.ndarray:
    """Predictions (normalised RUL scale) for a ``(B, W, F)`` or ``(W, F)`` input, shape (B,)."""
    graph = Graph()
    out = forward_graph(graph, bind(graph, params), config, windows)
    return out.value[:, 0].copy()


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    config: ModelConfig
    params: Params
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "format": "rul_forge.checkpoint/1",
            "config": asdict(self.config),
            "seed": self.seed,
            "params": {
                name: {"shape": list(arr.shape), "hex": [float(x).hex() for x in np.ravel(arr)]}
                for name, arr in self.params.items()
            },
            "metadata": self.metadata,
        }
        return json.dumps(doc, indent=1, sort_keys=False)

    @classmethod
    def from_json(cls, text: str) -> "Checkpoint":
        doc = json.loads(text)
        config = ModelConfig(**doc["config"])
        params = {
            name: np.array([float.fromhex(h) for h in entry["hex"]], dtype=np.float64).reshape(entry["shape"])
            for name, entry in doc["params"].items()
        }
        expected = param_shapes(config)
        if {k: v.shape for k, v in params.items()} != expected:
            raise ConfigError("checkpoint parameters do not match its config")
        return cls(config, params, doc.get("seed", 0), doc.get("metadata", {}))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path) as fh:
            return cls.from_json(fh.read())
