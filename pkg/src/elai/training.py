"""BCE objective, Adam, the mini-batch training loop and JSON checkpoints."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import FeatureSchema, NormStats
from .errors import (
    BadConfig,
    CorruptCheckpoint,
    DimensionMismatch,
    IoFailure,
    LengthMismatch,
    NonFiniteLoss,
    ShapeMismatch,
    VersionMismatch,
)
from .features import Projection
from .model import ElaiModel, ModelConfig, backward_batch, forward_batch, param_shapes

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 50
    batch_size: int = 32
    shuffle_seed: int = 0
    clip_eps: float = 1e-7

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise BadConfig("learning_rate must be > 0")
        for name in ("beta1", "beta2"):
            if not 0 < getattr(self, name) < 1:
                raise BadConfig(f"{name} must lie in (0, 1)")
        if not self.eps > 0:
            raise BadConfig("eps must be > 0")
        if not 0 < self.clip_eps < 0.5:
            raise BadConfig("clip_eps must lie in (0, 0.5)")
        if not isinstance(self.epochs, int) or self.epochs < 0:
            raise BadConfig("epochs must be an integer >= 0")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise BadConfig("batch_size must be an integer >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


# --- objective ---------------------------------------------------------------

def bce_loss(y_hat, y, clip_eps: float = 1e-7) -> tuple[float, float]:
    """Summed binary cross-entropy and its per-sample mean.

    Probabilities are clamped to ``[clip_eps, 1 - clip_eps]`` before the logs.
    """
    y_hat = np.atleast_1d(np.asarray(y_hat, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if y_hat.shape != y.shape:
        raise LengthMismatch(f"{y_hat.shape} predictions vs {y.shape} labels")
    p = np.clip(y_hat, clip_eps, 1.0 - clip_eps)
    total = float(-np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
    return total, total / max(len(y), 1)


def bce_grad(y_hat: float, y: int, clip_eps: float = 1e-7) -> float:
    p = min(max(float(y_hat), clip_eps), 1.0 - clip_eps)
    return -y / p + (1 - y) / (1.0 - p)


# --- Adam --------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls(
            {k: np.zeros_like(a) for k, a in params.items()},
            {k: np.zeros_like(a) for k, a in params.items()},
        )


def adam_step(model, grads: dict, state: AdamState, cfg: TrainConfig):
    """One in-place Adam update; accepts an ElaiModel or a name->array dict."""
    params = model.params if isinstance(model, ElaiModel) else model
    if set(grads) != set(params) or set(state.m) != set(params):
        raise ShapeMismatch("gradient/state names do not match parameters")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = np.asarray(grads[name])
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return model, state


# --- training loop -----------------------------------------------------------

@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)

    def to_dict(self) -> dict:
        return {"train_loss": list(self.train_loss), "val_accuracy": list(self.val_accuracy)}


def _xy(ds):
    return (np.asarray(ds.X, dtype=np.float64), np.asarray(ds.y)) if hasattr(ds, "X") else ds


def train(model: ElaiModel, train_ds, val_ds=None, cfg: Optional[TrainConfig] = None):
    """Train a copy of ``model``; returns ``(trained_model, history)``.

    ``train_ds``/``val_ds`` are Datasets already projected to the model's
    input dimension (or ``(X, y)`` pairs).  Each epoch visits the rows in a
    seeded shuffled order; batch gradients are batch means.
    """
    cfg = cfg or TrainConfig()
    X, y = _xy(train_ds)
    if X.ndim != 2 or X.shape[1] != model.config.input_dim:
        raise DimensionMismatch(
            f"training data has {X.shape[-1]} columns, model expects {model.config.input_dim}"
        )
    val = None
    if val_ds is not None:
        vX, vy = _xy(val_ds)
        if len(vy):
            val = (vX, vy)
    model = model.copy()
    history = TrainHistory()
    state = AdamState.zeros_like(model.params)
    rng = np.random.default_rng(cfg.shuffle_seed)
    # overflow surfaces as NonFiniteLoss rather than as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        _run_epochs(model, X, y, val, cfg, state, rng, history)
    return model, history


def _run_epochs(model, X, y, val, cfg, state, rng, history) -> None:
    n = len(y)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            bt = forward_batch(model, X[idx])
            batch_sum, _ = bce_loss(bt.y_hat, y[idx], cfg.clip_eps)
            if not math.isfinite(batch_sum):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, batch starting {s}")
            total += batch_sum
            grads = backward_batch(model, bt, y[idx], reduce="mean")
            adam_step(model, grads, state, cfg)
        for name, a in model.params.items():
            if not np.all(np.isfinite(a)):
                raise NonFiniteLoss(f"parameter {name} became non-finite at epoch {epoch}")
        history.train_loss.append(total / n)
        if val is not None:
            pred = forward_batch(model, val[0]).y_hat >= 0.5
            history.val_accuracy.append(float(np.mean(pred == (val[1] == 1))))
        log.debug("epoch %d loss %.6f", epoch, history.train_loss[-1])


# --- checkpoints -------------------------------------------------------------

@dataclass
class Checkpoint:
    model: ElaiModel
    projection: Optional[Projection] = None
    norm_stats: Optional[NormStats] = None
    train_config: Optional[TrainConfig] = None
    schema: Optional[FeatureSchema] = None
    metrics: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION

    def to_dict(self) -> dict:
        schema = None
        if self.schema is not None:
            schema = {
                "feature_names": list(self.schema.feature_names),
                "label_column": self.schema.label_column,
                "category_column": self.schema.category_column,
                "delimiter": self.schema.delimiter,
            }
        return {
            "version": self.version,
            "config": self.model.config.to_dict(),
            "tensors": {k: v.tolist() for k, v in self.model.params.items()},
            "projection": None if self.projection is None else self.projection.to_dict(),
            "norm_stats": None if self.norm_stats is None else self.norm_stats.to_dict(),
            "train_config": None if self.train_config is None else self.train_config.to_dict(),
            "schema": schema,
            "metrics": self.metrics,
        }


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    # json emits floats via repr(), the shortest round-trip decimal form
    return json.dumps(ckpt.to_dict(), sort_keys=True, allow_nan=False).encode("utf-8")


def checkpoint_from_dict(d: dict) -> Checkpoint:
    if not isinstance(d, dict) or "version" not in d:
        raise CorruptCheckpoint("checkpoint has no version field")
    if d["version"] != CHECKPOINT_VERSION:
        raise VersionMismatch(
            f"checkpoint version {d['version']!r}, this build reads {CHECKPOINT_VERSION}"
        )
    try:
        cfg = ModelConfig(**d["config"])
        tensors = {k: np.array(v, dtype=np.float64) for k, v in d["tensors"].items()}
        if set(tensors) != set(param_shapes(cfg)):
            raise CorruptCheckpoint("tensor names do not match config")
        model = ElaiModel(cfg, tensors)
        proj = d.get("projection")
        norm = d.get("norm_stats")
        tc = d.get("train_config")
        sc = d.get("schema")
        return Checkpoint(
            model=model,
            projection=None if proj is None else Projection.from_dict(proj),
            norm_stats=None if norm is None else NormStats.from_dict(norm),
            train_config=None if tc is None else TrainConfig(**tc),
            schema=None if sc is None else FeatureSchema(
                tuple(sc["feature_names"]), sc["label_column"], sc["category_column"], sc["delimiter"]
            ),
            metrics=d.get("metrics") or {},
            version=d["version"],
        )
    except CorruptCheckpoint:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"malformed checkpoint: {exc}") from exc


def save_checkpoint(ckpt: Checkpoint, path) -> int:
    """Write ``ckpt`` as a single JSON document; returns the byte count."""
    data = checkpoint_bytes(ckpt)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return len(data)


def load_checkpoint(path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    try:
        d = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"{path} is not a valid checkpoint: {exc}") from exc
    return checkpoint_from_dict(d)
