"""End-to-end pipeline configuration and the fit / transform / score path
shared by the CLI and the zero-day protocol."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .dataset import (
    DEFAULT_NEGATIVE_LABELS,
    DEFAULT_POSITIVE_LABELS,
    Dataset,
    NormStats,
    apply_normalize,
    fit_normalize,
    normalize_array,
    split,
)
from .errors import BadConfig, BadK, ConfigError
from .features import (
    MODES,
    FeatureRanking,
    Projection,
    apply_projection,
    fit_fisher,
    fit_pca,
    rank_features,
    selection_projection,
)
from .metrics import evaluate_scores
from .model import ModelConfig, init_model, param_count, predict_proba
from .training import Checkpoint, TrainConfig, TrainHistory, bce_loss, checkpoint_bytes, train


@dataclass(frozen=True)
class SchemaSettings:
    label_column: str = "label"
    category_column: Optional[str] = "category"
    delimiter: str = ","
    positive_labels: tuple = DEFAULT_POSITIVE_LABELS
    negative_labels: tuple = DEFAULT_NEGATIVE_LABELS

    def __post_init__(self):
        object.__setattr__(self, "positive_labels", tuple(self.positive_labels))
        object.__setattr__(self, "negative_labels", tuple(self.negative_labels))
        if not isinstance(self.delimiter, str) or len(self.delimiter) != 1:
            raise BadConfig("schema.delimiter must be a single character")


@dataclass(frozen=True)
class FeatureSettings:
    mode: str = "pca"
    k: int = 4
    bins: int = 10

    def __post_init__(self):
        if self.mode not in MODES:
            raise BadConfig(f"features.mode must be one of {MODES}")
        if not isinstance(self.k, int) or self.k < 1:
            raise BadConfig("features.k must be an integer >= 1")
        if not isinstance(self.bins, int) or self.bins < 2:
            raise BadConfig("features.bins must be an integer >= 2")


@dataclass(frozen=True)
class ModelSettings:
    conv_filters: int = 4
    conv_kernel: int = 2
    recurrent_mode: str = "gated"
    hidden_dim: int = 8


@dataclass(frozen=True)
class TrainSettings:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 50
    batch_size: int = 32
    clip_eps: float = 1e-7


@dataclass(frozen=True)
class Seeds:
    data: int = 0
    init: int = 0
    shuffle: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, int) or isinstance(v, bool):
                raise BadConfig(f"seeds.{f.name} must be an integer")


@dataclass(frozen=True)
class PipelineConfig:
    schema: SchemaSettings = field(default_factory=SchemaSettings)
    normalize: bool = True
    features: FeatureSettings = field(default_factory=FeatureSettings)
    model: ModelSettings = field(default_factory=ModelSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    val_frac: float = 0.0
    threshold: float = 0.5
    seeds: Seeds = field(default_factory=Seeds)

    def __post_init__(self):
        if not isinstance(self.normalize, bool):
            raise BadConfig("normalize must be true or false")
        if not (0.0 <= self.val_frac < 1.0):
            raise BadConfig("val_frac must lie in [0, 1)")
        if not (0.0 <= self.threshold <= 1.0):
            raise BadConfig("threshold must lie in [0, 1]")
        # cross-checks surface as config errors before any data is read
        self.model_config()
        self.train_config()

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            input_dim=self.features.k,
            conv_filters=self.model.conv_filters,
            conv_kernel=self.model.conv_kernel,
            recurrent_mode=self.model.recurrent_mode,
            hidden_dim=self.model.hidden_dim,
            seed=self.seeds.init,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(**asdict(self.train), shuffle_seed=self.seeds.shuffle)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema"]["positive_labels"] = list(self.schema.positive_labels)
        d["schema"]["negative_labels"] = list(self.schema.negative_labels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        if not isinstance(d, dict):
            raise BadConfig("config must be a JSON object")
        sections = {
            "schema": SchemaSettings,
            "features": FeatureSettings,
            "model": ModelSettings,
            "train": TrainSettings,
            "seeds": Seeds,
        }
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise BadConfig(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        try:
            for key, value in d.items():
                if key in sections:
                    sub = sections[key]
                    if not isinstance(value, dict):
                        raise BadConfig(f"{key} must be an object")
                    bad = set(value) - {f.name for f in fields(sub)}
                    if bad:
                        raise BadConfig(f"unknown keys in {key}: {sorted(bad)}")
                    kwargs[key] = sub(**value)
                else:
                    kwargs[key] = value
            return cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise BadConfig(f"invalid config: {exc}") from exc


def load_config(path) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise BadConfig(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BadConfig(f"config {path} is not valid JSON: {exc}") from exc
    return PipelineConfig.from_dict(d)


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


# --- fit / transform ---------------------------------------------------------

@dataclass
class PipelineResult:
    checkpoint: Checkpoint
    history: TrainHistory
    ranking: FeatureRanking
    initial_loss: float
    final_loss: float
    train_scores: np.ndarray


def _project(Xn: np.ndarray, y, ranking: FeatureRanking, fs: FeatureSettings) -> Projection:
    d = Xn.shape[1]
    if fs.k > d:
        raise BadK(f"features.k={fs.k} exceeds the {d} available features")
    if fs.mode == "pca":
        return fit_pca(Xn, fs.k)
    if fs.mode == "fisher":
        return fit_fisher(Xn, y, fs.k)
    top = ranking.top(fs.k)
    return selection_projection([e.index for e in top], d, [e.ig_bits for e in top])


def transform(ckpt: Checkpoint, X: np.ndarray) -> np.ndarray:
    """Raw feature rows -> model inputs (normalize, then project)."""
    X = np.asarray(X, dtype=np.float64)
    if ckpt.norm_stats is not None:
        X = normalize_array(X, ckpt.norm_stats)
    if ckpt.projection is not None:
        X = apply_projection(X, ckpt.projection)
    return X


def scorer_for(ckpt: Checkpoint):
    return lambda X: predict_proba(ckpt.model, transform(ckpt, X))


def fit_pipeline(ds: Dataset, cfg: PipelineConfig) -> PipelineResult:
    norm: Optional[NormStats] = None
    work = ds
    if cfg.normalize:
        norm = fit_normalize(ds)
        work = apply_normalize(ds, norm)
    ranking = rank_features(work, cfg.features.bins)
    proj = _project(work.X, work.y, ranking, cfg.features)
    names = proj.component_names(ds.schema.feature_names)
    projected = work.with_X(apply_projection(work.X, proj), names)

    train_part, val_part = projected, None
    if cfg.val_frac > 0:
        val_part, _, train_part = split(projected, cfg.val_frac, 0.0, cfg.seeds.data, stratified=True)

    tcfg = cfg.train_config()
    model = init_model(cfg.model_config())
    with np.errstate(over="ignore", invalid="ignore"):
        initial_loss = bce_loss(predict_proba(model, train_part.X), train_part.y, tcfg.clip_eps)[1]
    model, history = train(model, train_part, val_part, tcfg)
    scores = predict_proba(model, projected.X)
    final_loss = bce_loss(predict_proba(model, train_part.X), train_part.y, tcfg.clip_eps)[1]
    report = evaluate_scores(scores, projected.y, cfg.threshold)
    ckpt = Checkpoint(
        model=model,
        projection=proj,
        norm_stats=norm,
        train_config=tcfg,
        schema=ds.schema,
        metrics={
            "epochs": len(history),
            "initial_loss": initial_loss,
            "final_loss": final_loss,
            "train_accuracy": report.accuracy,
        },
    )
    return PipelineResult(ckpt, history, ranking, initial_loss, final_loss, scores)


def run_report(cfg: PipelineConfig, ds: Dataset, result: PipelineResult) -> dict:
    """Reproducible summary of a training run (no wall-clock fields)."""
    ckpt = result.checkpoint
    return {
        "tool_version": __version__,
        "config": cfg.to_dict(),
        "dataset": ds.summary(),
        "ranking": result.ranking.to_dict(),
        "history": result.history.to_dict(),
        "initial_loss": result.initial_loss,
        "final_loss": result.final_loss,
        "evaluation": evaluate_scores(result.train_scores, ds.y, cfg.threshold).to_dict(),
        "param_count": param_count(ckpt.model),
        "model_size_bytes": len(checkpoint_bytes(ckpt)),
    }
