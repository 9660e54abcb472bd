"""Classification metrics, rank-based AUC, per-sample latency benchmark and
the zero-day detection protocol."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import rankdata

from .errors import IoFailure, LengthMismatch, SingleClass, UndefinedMetric
from .model import ElaiModel, forward


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self) -> dict:
        return asdict(self)

    def to_csv(self, path) -> None:
        """2x2 layout: rows are actual class, columns predicted class."""
        rows = [
            ["actual\\predicted", "0", "1"],
            ["0", self.tn, self.fp],
            ["1", self.fn, self.tp],
        ]
        try:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                csv.writer(fh, lineterminator="\n").writerows(rows)
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc


def _pair(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise LengthMismatch(f"{scores.shape[0]} scores vs {labels.shape[0]} labels")
    return scores, labels == 1


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionMatrix:
    """Predict 1 iff score >= threshold."""
    scores, pos = _pair(scores, labels)
    pred = scores >= threshold
    return ConfusionMatrix(
        tp=int(np.sum(pred & pos)),
        tn=int(np.sum(~pred & ~pos)),
        fp=int(np.sum(pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def _ratio(num: int, den: int, name: str) -> float:
    if den == 0:
        raise UndefinedMetric(name)
    return num / den


def accuracy(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp + cm.tn, cm.n, "accuracy")


def precision(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp, cm.tp + cm.fp, "precision")


def recall(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp, cm.tp + cm.fn, "recall")


def f1(cm: ConfusionMatrix) -> float:
    p, r = precision(cm), recall(cm)
    if p + r == 0:
        raise UndefinedMetric("f1")
    return 2 * p * r / (p + r)


def auc_roc(scores, labels) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    scores, pos = _pair(scores, labels)
    n_pos = int(pos.sum())
    n_neg = len(pos) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes present")
    ranks = rankdata(scores, method="average")
    r_pos = float(ranks[pos].sum())
    return (r_pos - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)


@dataclass(frozen=True)
class EvalReport:
    """Undefined metrics (0/0 denominators, single-class AUC) are ``None``."""

    confusion: ConfusionMatrix
    accuracy: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    auc_roc: Optional[float]
    threshold: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion"] = self.confusion.to_dict()
        return d


def _maybe(fn, *args):
    try:
        return fn(*args)
    except UndefinedMetric:
        return None
    except SingleClass:
        return None


def evaluate_scores(scores, labels, threshold: float = 0.5) -> EvalReport:
    cm = confusion(scores, labels, threshold)
    return EvalReport(
        confusion=cm,
        accuracy=_maybe(accuracy, cm),
        precision=_maybe(precision, cm),
        recall=_maybe(recall, cm),
        f1=_maybe(f1, cm),
        auc_roc=_maybe(auc_roc, scores, labels),
        threshold=threshold,
    )


# --- latency -----------------------------------------------------------------

@dataclass(frozen=True)
class LatencyReport:
    n: int
    mean_ms: float
    p50_ms: float
    p95_ms: float
    warmup: int

    def to_dict(self) -> dict:
        return asdict(self)


def nearest_rank(sorted_values, pct: float) -> float:
    n = len(sorted_values)
    return float(sorted_values[max(1, math.ceil(pct / 100.0 * n)) - 1])


def summarize_latency(times_ms, warmup: int = 0) -> LatencyReport:
    t = np.sort(np.asarray(times_ms, dtype=np.float64))
    if len(t) == 0:
        raise ValueError("no measurements")
    return LatencyReport(
        n=len(t),
        mean_ms=float(np.mean(t)),
        p50_ms=nearest_rank(t, 50),
        p95_ms=nearest_rank(t, 95),
        warmup=warmup,
    )


def latency_benchmark(model: ElaiModel, X, warmup: int = 100, reps: int = 1000) -> LatencyReport:
    """Time ``reps`` single-sample forward passes after ``warmup`` untimed ones.

    Rows of ``X`` are cycled in order.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    n = len(X)
    for i in range(warmup):
        forward(model, X[i % n])
    clock = time.perf_counter_ns
    times = np.empty(reps)
    for i in range(reps):
        z = X[i % n]
        t0 = clock()
        forward(model, z)
        times[i] = (clock() - t0) / 1e6
    return summarize_latency(times, warmup)


# --- zero-day ----------------------------------------------------------------

def detection_rate(scores, threshold: float = 0.5) -> float:
    """Fraction of (all-attack) hold-out rows scored at or above threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise UndefinedMetric("detection_rate")
    return float(np.mean(scores >= threshold))


@dataclass(frozen=True)
class ZeroDayResult:
    detection_rate: float
    n_train: int
    n_holdout: int
    threshold: float

    def to_dict(self) -> dict:
        return asdict(self)


def zero_day_eval(train_ds, holdout_ds, config=None, fit: Optional[Callable] = None) -> ZeroDayResult:
    """Train on ``train_ds`` and report the detection rate on ``holdout_ds``.

    ``fit(train_ds, config)`` must return a scorer mapping a raw feature matrix
    to attack probabilities; the default runs the full pipeline.
    """
    from .pipeline import PipelineConfig, fit_pipeline, scorer_for

    config = config or PipelineConfig()
    if fit is None:
        def fit(ds, cfg):
            return scorer_for(fit_pipeline(ds, cfg).checkpoint)
    if holdout_ds.n and not np.all(holdout_ds.y == 1):
        raise ValueError("hold-out set must contain attack rows only")
    scorer = fit(train_ds, config)
    threshold = getattr(config, "threshold", 0.5)
    rate = detection_rate(scorer(holdout_ds.X), threshold)
    return ZeroDayResult(rate, int(train_ds.n), int(holdout_ds.n), threshold)
