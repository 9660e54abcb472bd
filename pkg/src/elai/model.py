"""Conv -> recurrent -> attention -> softmax classifier in plain numpy.

The input feature vector of length ``k`` is treated as a 1-D signal.  A
valid convolution with ``F`` filters of width ``k_c`` yields a sequence of
``T = k - k_c + 1`` steps with ``F`` channels each; a recurrent layer
(``simple`` tanh cell or ``gated`` LSTM) runs over the steps, an attention
vector pools the hidden states into a context, and a two-unit softmax head
scores the attack class.

Everything is computed batched (leading axis ``B``) and differentiated by
hand.  :func:`forward` / :func:`backward` are the single-sample views.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BadConfig, DimensionMismatch, TraceMismatch

RECURRENT_MODES = ("simple", "gated")
GATES = {"simple": ("h",), "gated": ("i", "f", "o", "g")}


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 4
    conv_filters: int = 4
    conv_kernel: int = 2
    recurrent_mode: str = "gated"
    hidden_dim: int = 8
    seed: int = 0

    def __post_init__(self):
        for name in ("input_dim", "conv_filters", "conv_kernel", "hidden_dim"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise BadConfig(f"{name} must be an integer >= 1, got {v!r}")
        if self.conv_kernel > self.input_dim:
            raise BadConfig(
                f"conv_kernel ({self.conv_kernel}) exceeds input_dim ({self.input_dim})"
            )
        if self.recurrent_mode not in RECURRENT_MODES:
            raise BadConfig(f"recurrent_mode must be one of {RECURRENT_MODES}")

    @property
    def seq_len(self) -> int:
        return self.input_dim - self.conv_kernel + 1

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "conv_filters": self.conv_filters,
            "conv_kernel": self.conv_kernel,
            "recurrent_mode": self.recurrent_mode,
            "hidden_dim": self.hidden_dim,
            "seed": self.seed,
        }


@dataclass
class ConvLayer:
    W: np.ndarray  # F x k_c
    b: np.ndarray  # F


@dataclass
class RecurrentLayer:
    """Per-gate weights keyed by gate name (``h`` for the simple cell,
    ``i``/``f``/``o``/``g`` for the LSTM)."""

    mode: str
    W_x: dict
    W_h: dict
    b: dict


@dataclass
class AttentionLayer:
    W_a: np.ndarray  # H


@dataclass
class OutputHead:
    W_o: np.ndarray  # 2 x H
    b_o: np.ndarray  # 2


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    F, kc, H = cfg.conv_filters, cfg.conv_kernel, cfg.hidden_dim
    shapes = {"conv.W": (F, kc), "conv.b": (F,)}
    for g in GATES[cfg.recurrent_mode]:
        shapes[f"recurrent.W_x.{g}"] = (H, F)
        shapes[f"recurrent.W_h.{g}"] = (H, H)
        shapes[f"recurrent.b.{g}"] = (H,)
    shapes["attention.W_a"] = (H,)
    shapes["head.W_o"] = (2, H)
    shapes["head.b_o"] = (2,)
    return shapes


@dataclass
class ElaiModel:
    """All parameters live in ``params`` (name -> array); the layer
    properties are views over the same arrays."""

    config: ModelConfig
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = param_shapes(self.config)
        if set(shapes) != set(self.params):
            raise BadConfig("parameter names do not match config")
        for name, shape in shapes.items():
            a = np.asarray(self.params[name], dtype=np.float64)
            if a.shape != shape:
                raise BadConfig(f"{name} has shape {a.shape}, expected {shape}")
            if not np.all(np.isfinite(a)):
                raise BadConfig(f"{name} has non-finite entries")
            self.params[name] = a
        # canonical order
        self.params = {name: self.params[name] for name in shapes}

    @property
    def conv(self) -> ConvLayer:
        return ConvLayer(self.params["conv.W"], self.params["conv.b"])

    @property
    def recurrent(self) -> RecurrentLayer:
        gates = GATES[self.config.recurrent_mode]
        p = self.params
        return RecurrentLayer(
            self.config.recurrent_mode,
            {g: p[f"recurrent.W_x.{g}"] for g in gates},
            {g: p[f"recurrent.W_h.{g}"] for g in gates},
            {g: p[f"recurrent.b.{g}"] for g in gates},
        )

    @property
    def attention(self) -> AttentionLayer:
        return AttentionLayer(self.params["attention.W_a"])

    @property
    def head(self) -> OutputHead:
        return OutputHead(self.params["head.W_o"], self.params["head.b_o"])

    def copy(self) -> "ElaiModel":
        return ElaiModel(self.config, {k: v.copy() for k, v in self.params.items()})


def init_model(config: ModelConfig) -> ElaiModel:
    """Glorot-uniform weights, zero biases, deterministic in ``config.seed``."""
    if not isinstance(config, ModelConfig):
        raise BadConfig("init_model expects a ModelConfig")
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in param_shapes(config).items():
        leaf = name.split(".")[1]
        if leaf in ("b", "b_o"):
            params[name] = np.zeros(shape)
            continue
        fan_in = shape[-1]
        fan_out = shape[0] if len(shape) == 2 else 1
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-limit, limit, size=shape)
    return ElaiModel(config, params)


def param_count(model: ElaiModel) -> int:
    return int(sum(a.size for a in model.params.values()))


def model_size_bytes(obj) -> int:
    """Byte length of the serialized checkpoint for a model or checkpoint."""
    from .training import Checkpoint, checkpoint_bytes

    if isinstance(obj, ElaiModel):
        obj = Checkpoint(model=obj)
    return len(checkpoint_bytes(obj))


# --- activations -------------------------------------------------------------

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softmax(s, axis=-1):
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


# --- layer forwards (single sample) -----------------------------------------

def conv_forward(layer: ConvLayer, z: np.ndarray) -> np.ndarray:
    """ReLU(valid 1-D convolution), returned as a T x F map."""
    z = np.asarray(z, dtype=np.float64)
    F, kc = layer.W.shape
    if z.ndim != 1 or len(z) < kc:
        raise DimensionMismatch(f"input length {z.shape} shorter than kernel {kc}")
    return np.maximum(_conv_pre(layer, z[None, :])[0], 0.0)


def _conv_pre(layer: ConvLayer, Z: np.ndarray) -> np.ndarray:
    kc = layer.W.shape[1]
    windows = np.lib.stride_tricks.sliding_window_view(Z, kc, axis=1)  # B,T,kc
    return windows @ layer.W.T + layer.b


def _recurrent_batch(layer: RecurrentLayer, seq: np.ndarray):
    """Run the recurrence over ``seq`` (B x T x F); returns hidden states
    (B x T x H) plus whatever the backward pass needs."""
    B, T, F = seq.shape
    H = layer.b[GATES[layer.mode][0]].shape[0]
    if layer.W_x[GATES[layer.mode][0]].shape[1] != F:
        raise DimensionMismatch(f"recurrent layer expects {layer.W_x[GATES[layer.mode][0]].shape[1]} channels, got {F}")
    hs = np.zeros((B, T, H))
    h = np.zeros((B, H))
    if layer.mode == "simple":
        for t in range(T):
            h = np.tanh(seq[:, t] @ layer.W_x["h"].T + h @ layer.W_h["h"].T + layer.b["h"])
            hs[:, t] = h
        return hs, None
    gates = {g: np.zeros((B, T, H)) for g in GATES["gated"]}
    cells = np.zeros((B, T, H))
    c = np.zeros((B, H))
    for t in range(T):
        x = seq[:, t]
        a = {g: x @ layer.W_x[g].T + h @ layer.W_h[g].T + layer.b[g] for g in GATES["gated"]}
        i, f, o = _sigmoid(a["i"]), _sigmoid(a["f"]), _sigmoid(a["o"])
        g = np.tanh(a["g"])
        c = f * c + i * g
        h = o * np.tanh(c)
        for name, val in zip("ifog", (i, f, o, g)):
            gates[name][:, t] = val
        cells[:, t] = c
        hs[:, t] = h
    return hs, {"gates": gates, "cells": cells}


def recurrent_forward(layer: RecurrentLayer, seq: np.ndarray) -> np.ndarray:
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2:
        raise DimensionMismatch("sequence must be T x F")
    return _recurrent_batch(layer, seq[None])[0][0]


def attention_forward(layer: AttentionLayer, h: np.ndarray):
    """Softmax attention over the rows of ``h`` (T x H); returns (alpha, context)."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 1 or h.shape[1] != layer.W_a.shape[0]:
        raise DimensionMismatch(f"hidden states must be T x {layer.W_a.shape[0]}")
    alpha = _softmax(h @ layer.W_a)
    return alpha, alpha @ h


def head_forward(head: OutputHead, c: np.ndarray):
    logits = head.W_o @ np.asarray(c, dtype=np.float64) + head.b_o
    return logits, float(_softmax(logits)[1])


# --- full pass ---------------------------------------------------------------

@dataclass
class BatchTrace:
    """Intermediates of a batched forward pass; arrays carry a leading B axis."""

    z: np.ndarray  # B x k
    conv_pre: np.ndarray  # B x T x F
    conv_act: np.ndarray  # B x T x F
    hidden: np.ndarray  # B x T x H
    recurrent_cache: Optional[dict]
    scores: np.ndarray  # B x T
    alpha: np.ndarray  # B x T
    context: np.ndarray  # B x H
    logits: np.ndarray  # B x 2
    y_hat: np.ndarray  # B
    config: ModelConfig


@dataclass
class ForwardTrace:
    z: np.ndarray
    conv_pre: np.ndarray
    conv_act: np.ndarray
    hidden: np.ndarray
    gates: Optional[dict]
    cells: Optional[np.ndarray]
    scores: np.ndarray
    alpha: np.ndarray
    context: np.ndarray
    logits: np.ndarray
    y_hat: float
    config: ModelConfig


def forward_batch(model: ElaiModel, Z: np.ndarray) -> BatchTrace:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != model.config.input_dim:
        raise DimensionMismatch(
            f"model expects inputs of length {model.config.input_dim}, got shape {Z.shape}"
        )
    conv = model.conv
    pre = _conv_pre(conv, Z)
    act = np.maximum(pre, 0.0)
    hs, cache = _recurrent_batch(model.recurrent, act)
    scores = hs @ model.attention.W_a
    alpha = _softmax(scores, axis=1)
    ctx = np.einsum("bt,bth->bh", alpha, hs)
    head = model.head
    logits = ctx @ head.W_o.T + head.b_o
    y_hat = _softmax(logits, axis=1)[:, 1]
    return BatchTrace(Z, pre, act, hs, cache, scores, alpha, ctx, logits, y_hat, model.config)


def predict_proba(model: ElaiModel, Z: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Attack probability for every row of ``Z``."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[None, :]
    out = [forward_batch(model, Z[s : s + chunk]).y_hat for s in range(0, len(Z), chunk)]
    return np.concatenate(out) if out else np.zeros(0)


def forward(model: ElaiModel, z: np.ndarray) -> ForwardTrace:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise DimensionMismatch("forward takes a single input vector")
    bt = forward_batch(model, z[None, :])
    cache = bt.recurrent_cache
    trace = ForwardTrace(
        z=bt.z[0],
        conv_pre=bt.conv_pre[0],
        conv_act=bt.conv_act[0],
        hidden=bt.hidden[0],
        gates=None if cache is None else {g: v[0] for g, v in cache["gates"].items()},
        cells=None if cache is None else cache["cells"][0],
        scores=bt.scores[0],
        alpha=bt.alpha[0],
        context=bt.context[0],
        logits=bt.logits[0],
        y_hat=float(bt.y_hat[0]),
        config=bt.config,
    )
    assert abs(trace.alpha.sum() - 1.0) < 1e-12 and np.all(trace.alpha >= 0)
    return trace


def _as_batch(trace: ForwardTrace) -> BatchTrace:
    cache = None
    if trace.gates is not None:
        cache = {
            "gates": {g: v[None] for g, v in trace.gates.items()},
            "cells": trace.cells[None],
        }
    return BatchTrace(
        trace.z[None],
        trace.conv_pre[None],
        trace.conv_act[None],
        trace.hidden[None],
        cache,
        trace.scores[None],
        trace.alpha[None],
        trace.context[None],
        trace.logits[None],
        np.array([trace.y_hat]),
        trace.config,
    )


# --- backward ----------------------------------------------------------------

def backward_batch(model: ElaiModel, bt: BatchTrace, y: np.ndarray, reduce: str = "mean") -> dict:
    """Gradient of the BCE loss w.r.t. every parameter, summed or averaged
    over the batch."""
    if bt.config != model.config:
        raise TraceMismatch("trace was produced by a model with a different config")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    B = bt.z.shape[0]
    if y.shape[0] != B:
        raise TraceMismatch(f"{y.shape[0]} labels for a batch of {B}")
    scale = 1.0 / B if reduce == "mean" else 1.0
    p = model.params
    grads = {}

    # head: dL/dlogit_1 = y_hat - y, dL/dlogit_0 = y - y_hat
    r = (bt.y_hat - y) * scale
    dlogits = np.stack([-r, r], axis=1)  # B x 2
    grads["head.W_o"] = dlogits.T @ bt.context
    grads["head.b_o"] = dlogits.sum(axis=0)
    dctx = dlogits @ p["head.W_o"]  # B x H

    # attention
    hs, alpha = bt.hidden, bt.alpha
    dh = alpha[:, :, None] * dctx[:, None, :]  # B x T x H
    dalpha = np.einsum("bth,bh->bt", hs, dctx)
    dscores = alpha * (dalpha - np.sum(alpha * dalpha, axis=1, keepdims=True))
    grads["attention.W_a"] = np.einsum("bt,bth->h", dscores, hs)
    dh = dh + dscores[:, :, None] * p["attention.W_a"]

    # recurrence (BPTT)
    x = bt.conv_act
    Bn, T, H = hs.shape
    dx = np.zeros_like(x)
    h_prev_all = np.concatenate([np.zeros((Bn, 1, H)), hs[:, :-1]], axis=1)
    mode = model.config.recurrent_mode
    gates = GATES[mode]
    gW_x = {g: np.zeros_like(p[f"recurrent.W_x.{g}"]) for g in gates}
    gW_h = {g: np.zeros_like(p[f"recurrent.W_h.{g}"]) for g in gates}
    gb = {g: np.zeros_like(p[f"recurrent.b.{g}"]) for g in gates}
    dh_next = np.zeros((Bn, H))
    if mode == "simple":
        for t in reversed(range(T)):
            dht = dh[:, t] + dh_next
            da = dht * (1.0 - hs[:, t] ** 2)
            gW_x["h"] += da.T @ x[:, t]
            gW_h["h"] += da.T @ h_prev_all[:, t]
            gb["h"] += da.sum(axis=0)
            dx[:, t] = da @ p["recurrent.W_x.h"]
            dh_next = da @ p["recurrent.W_h.h"]
    else:
        G = bt.recurrent_cache["gates"]
        cells = bt.recurrent_cache["cells"]
        c_prev_all = np.concatenate([np.zeros((Bn, 1, H)), cells[:, :-1]], axis=1)
        dc_next = np.zeros((Bn, H))
        for t in reversed(range(T)):
            i, f, o, g = G["i"][:, t], G["f"][:, t], G["o"][:, t], G["g"][:, t]
            tc = np.tanh(cells[:, t])
            dht = dh[:, t] + dh_next
            do = dht * tc
            dc = dht * o * (1.0 - tc**2) + dc_next
            da = {
                "i": dc * g * i * (1.0 - i),
                "f": dc * c_prev_all[:, t] * f * (1.0 - f),
                "o": do * o * (1.0 - o),
                "g": dc * i * (1.0 - g**2),
            }
            dc_next = dc * f
            dh_next = np.zeros((Bn, H))
            dxt = np.zeros((Bn, x.shape[2]))
            for name in gates:
                gW_x[name] += da[name].T @ x[:, t]
                gW_h[name] += da[name].T @ h_prev_all[:, t]
                gb[name] += da[name].sum(axis=0)
                dxt += da[name] @ p[f"recurrent.W_x.{name}"]
                dh_next += da[name] @ p[f"recurrent.W_h.{name}"]
            dx[:, t] = dxt
    for g in gates:
        grads[f"recurrent.W_x.{g}"] = gW_x[g]
        grads[f"recurrent.W_h.{g}"] = gW_h[g]
        grads[f"recurrent.b.{g}"] = gb[g]

    # conv (ReLU gate, derivative 0 at the kink)
    dpre = dx * (bt.conv_pre > 0)
    kc = model.config.conv_kernel
    windows = np.lib.stride_tricks.sliding_window_view(bt.z, kc, axis=1)  # B,T,kc
    grads["conv.W"] = np.einsum("btf,btm->fm", dpre, windows)
    grads["conv.b"] = dpre.sum(axis=(0, 1))
    return {name: grads[name] for name in model.params}


def backward(model: ElaiModel, trace: ForwardTrace, y: int) -> dict:
    """Single-sample gradient of the BCE loss for label ``y``."""
    if not isinstance(trace, ForwardTrace):
        raise TraceMismatch("backward expects a ForwardTrace")
    if trace.z.shape != (model.config.input_dim,):
        raise TraceMismatch("trace input length does not match model")
    return backward_batch(model, _as_batch(trace), np.array([y]), reduce="sum")


def sample_loss(model: ElaiModel, z: np.ndarray, y: int) -> float:
    """Unclamped BCE of one sample, via a stable log-softmax."""
    logits = forward_batch(model, np.asarray(z, dtype=np.float64)[None]).logits[0]
    m = logits.max()
    lse = m + np.log(np.exp(logits - m).sum())
    return float(lse - logits[int(y)])

