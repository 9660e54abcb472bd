"""Shapley attributions, attention maps and the local fidelity score.

The value of a coalition ``S`` is the model's attack probability on the
composite input that takes ``x`` on ``S`` and the reference ``r`` elsewhere.
With z-scored, centered inputs the default reference (the zero vector) is the
training mean.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import BadIndex, DimensionMismatch, IoFailure, LengthMismatch, TooManyFeatures
from .model import ElaiModel, ForwardTrace, predict_proba

EXACT_CAP = 15

# a scorer maps an (n x k) matrix to n probabilities
Scorer = Callable[[np.ndarray], np.ndarray]


def as_scorer(model: Union[ElaiModel, Scorer]) -> Scorer:
    if isinstance(model, ElaiModel):
        return lambda Z: predict_proba(model, Z)
    return model


def _input_dim(model, x) -> int:
    return model.config.input_dim if isinstance(model, ElaiModel) else len(x)


@dataclass(frozen=True)
class ValueFunctionSpec:
    reference: Optional[np.ndarray] = None

    def ref(self, k: int) -> np.ndarray:
        if self.reference is None:
            return np.zeros(k)
        r = np.asarray(self.reference, dtype=np.float64)
        if r.shape != (k,):
            raise DimensionMismatch(f"reference has shape {r.shape}, expected ({k},)")
        return r


@dataclass(frozen=True)
class Attribution:
    phi: np.ndarray
    base: float
    value: float  # f(full)
    method: str  # "exact" | "sampled"
    m: Optional[int] = None
    seed: Optional[int] = None

    @property
    def residual(self) -> float:
        """Efficiency gap ``base + sum(phi) - f(full)``."""
        return float(self.base + self.phi.sum() - self.value)

    def to_csv(self, path, names: Sequence[str]) -> None:
        if len(names) != len(self.phi):
            raise LengthMismatch("one name per feature required")
        _write_csv(path, ["feature", "phi"], [(n, repr(float(p))) for n, p in zip(names, self.phi)])


def _write_csv(path, header, rows):
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _check(model, x, spec):
    x = np.asarray(x, dtype=np.float64)
    k = _input_dim(model, x)
    if x.shape != (k,):
        raise DimensionMismatch(f"x has shape {x.shape}, expected ({k},)")
    return x, spec.ref(k), k


def coalition_value(model, x, S, spec: ValueFunctionSpec = ValueFunctionSpec()) -> float:
    x, r, k = _check(model, x, spec)
    S = list(S)
    if any(not (0 <= i < k) for i in S):
        raise BadIndex(f"coalition {S} has indices outside 0..{k - 1}")
    z = r.copy()
    z[S] = x[S]
    return float(as_scorer(model)(z[None, :])[0])


def _mask_matrix(k: int) -> np.ndarray:
    # row s is the membership vector of bitmask s (bit i <-> feature i)
    s = np.arange(2**k)[:, None]
    return ((s >> np.arange(k)) & 1).astype(bool)


def shap_exact(model, x, spec: ValueFunctionSpec = ValueFunctionSpec()) -> Attribution:
    """Exact Shapley values from all ``2**k`` coalition values."""
    x, r, k = _check(model, x, spec)
    if k > EXACT_CAP:
        raise TooManyFeatures(k, EXACT_CAP)
    masks = _mask_matrix(k)
    values = np.asarray(as_scorer(model)(np.where(masks, x, r)), dtype=np.float64)
    sizes = masks.sum(axis=1)
    weight = np.array(
        [math.factorial(s) * math.factorial(k - s - 1) / math.factorial(k) for s in range(k)]
    )
    phi = np.zeros(k)
    idx = np.arange(2**k)
    for i in range(k):
        without = idx[~masks[:, i]]
        with_i = without | (1 << i)
        phi[i] = np.sum(weight[sizes[without]] * (values[with_i] - values[without]))
    return Attribution(phi, float(values[0]), float(values[-1]), "exact")


def shap_sampled(
    model, x, spec: ValueFunctionSpec = ValueFunctionSpec(), m: int = 100, seed: int = 0
) -> Attribution:
    """Monte-Carlo permutation estimate of the Shapley values.

    Each feature gets its own ``m`` seeded permutations; its estimate is the
    mean marginal contribution when it is inserted after its predecessors.
    Independent draws per feature keep the estimator unbiased without forcing
    the estimates to sum to ``f(full) - f(ref)``.
    """
    x, r, k = _check(model, x, spec)
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = np.random.default_rng(seed)
    # a permutation is the argsort of iid uniform keys: l precedes i iff key_l < key_i
    keys = rng.random((k, m, k))
    own = keys[np.arange(k), :, np.arange(k)]  # k x m
    before = keys < own[:, :, None]
    after = before.copy()
    after[np.arange(k), :, np.arange(k)] = True
    scorer = as_scorer(model)
    lo = np.asarray(scorer(np.where(before.reshape(-1, k), x, r)), dtype=np.float64)
    hi = np.asarray(scorer(np.where(after.reshape(-1, k), x, r)), dtype=np.float64)
    phi = (hi - lo).reshape(k, m).mean(axis=1)
    ends = np.asarray(scorer(np.vstack([r, x])), dtype=np.float64)
    return Attribution(phi, float(ends[0]), float(ends[1]), "sampled", m, seed)


def shap_permutation_bruteforce(model, x, spec: ValueFunctionSpec = ValueFunctionSpec()) -> np.ndarray:
    """Average marginal contributions over all ``k!`` orderings (small k only)."""
    from itertools import permutations

    x, r, k = _check(model, x, spec)
    scorer = as_scorer(model)
    phi = np.zeros(k)
    count = 0
    for perm in permutations(range(k)):
        z = r.copy()
        rows = [z.copy()]
        for i in perm:
            z[i] = x[i]
            rows.append(z.copy())
        vals = np.asarray(scorer(np.array(rows)), dtype=np.float64)
        for pos, i in enumerate(perm):
            phi[i] += vals[pos + 1] - vals[pos]
        count += 1
    return phi / count


# --- attention ---------------------------------------------------------------

@dataclass(frozen=True)
class AttentionMap:
    alpha: np.ndarray
    argmax: int

    def to_csv(self, path) -> None:
        _write_csv(path, ["step", "alpha"], [(t, repr(float(a))) for t, a in enumerate(self.alpha)])


def attention_map(trace: ForwardTrace) -> AttentionMap:
    alpha = np.array(trace.alpha, dtype=np.float64)
    return AttentionMap(alpha, int(np.argmax(alpha)))


# --- fidelity ----------------------------------------------------------------

@dataclass(frozen=True)
class FidelityReport:
    lfs: float
    n: int


def local_fidelity(model, samples, attributions: Sequence[Attribution], spec=None) -> FidelityReport:
    """Mean squared gap between the model and the additive surrogate
    ``base + sum(phi)`` over the samples."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or len(samples) != len(attributions):
        raise LengthMismatch(f"{len(samples)} samples vs {len(attributions)} attributions")
    f = np.asarray(as_scorer(model)(samples), dtype=np.float64)
    g = np.array([a.base + a.phi.sum() for a in attributions])
    return FidelityReport(float(np.mean((f - g) ** 2)), len(samples))


# --- ranking -----------------------------------------------------------------

def rank_attributions(attr: Attribution, names: Sequence[str], top: Optional[int] = None):
    """``(index, name, phi)`` sorted by ``|phi|`` descending, ties by index."""
    if len(names) != len(attr.phi):
        raise LengthMismatch(f"{len(names)} names for {len(attr.phi)} features")
    order = sorted(range(len(names)), key=lambda i: (-abs(attr.phi[i]), i))
    if top is not None:
        order = order[:top]
    return [(i, names[i], float(attr.phi[i])) for i in order]


def mean_abs_attribution(attrs: Sequence[Attribution]) -> np.ndarray:
    """Dataset-level importance: mean ``|phi|`` per feature."""
    return np.mean(np.abs(np.stack([a.phi for a in attrs])), axis=0)
