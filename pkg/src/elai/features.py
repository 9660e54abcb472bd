"""Linear projections (PCA, Fisher discriminant) and information-gain
feature ranking."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dataset import Dataset
from .errors import (
    BadK,
    DimensionMismatch,
    IoFailure,
    LengthMismatch,
    NonConvergence,
    SingularScatter,
)

MODES = ("pca", "fisher", "ig-topk")


def jacobi_eigh(A: np.ndarray, tol: float = 1e-10, max_sweeps: int = 1000):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` sorted by descending eigenvalue;
    eigenvectors are the columns.  Iterates until the off-diagonal Frobenius
    norm falls below ``tol`` times the matrix norm.
    """
    A = np.array(A, dtype=np.float64)
    n = A.shape[0]
    if A.shape != (n, n):
        raise DimensionMismatch("matrix must be square")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    scale = max(np.linalg.norm(A), np.finfo(float).tiny)
    polish = 1  # one sweep past the tolerance; convergence is quadratic there
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= tol * scale:
            if polish == 0 or off == 0.0:
                break
            polish -= 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                else:
                    t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                Ap, Aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * Ap - s * Aq
                A[:, q] = s * Ap + c * Aq
                Ap, Aq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * Ap - s * Aq
                A[q, :] = s * Ap + c * Aq
                A[p, q] = A[q, p] = 0.0
                Vp, Vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * Vp - s * Vq
                V[:, q] = s * Vp + c * Vq
    else:
        raise NonConvergence(f"Jacobi did not converge in {max_sweeps} sweeps")
    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


def _fix_signs(W: np.ndarray) -> np.ndarray:
    W = W.copy()
    for j in range(W.shape[1]):
        i = int(np.argmax(np.abs(W[:, j])))
        if W[i, j] < 0:
            W[:, j] = -W[:, j]
    return W


@dataclass(frozen=True)
class Projection:
    """Linear map ``Z = X @ W``.

    ``explained`` holds the variance fraction per component in pca mode, the
    generalized eigenvalues in fisher mode and the information gain (bits) in
    ig-topk mode; ``eigenvalues`` holds the raw eigenvalues for pca/fisher.
    """

    W: np.ndarray
    mode: str
    explained: np.ndarray
    eigenvalues: Optional[np.ndarray] = None
    diagnostics: Optional[tuple[np.ndarray, np.ndarray]] = None
    selected: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise BadK(f"unknown projection mode {self.mode!r}")
        W = np.asarray(self.W, dtype=np.float64)
        if W.ndim != 2 or not 1 <= W.shape[1] <= W.shape[0]:
            raise BadK(f"W must be d x k with 1 <= k <= d, got {W.shape}")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "explained", np.asarray(self.explained, dtype=np.float64))

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def k(self) -> int:
        return self.W.shape[1]

    def component_names(self, feature_names: Sequence[str]) -> list[str]:
        if self.mode == "ig-topk":
            return [feature_names[i] for i in self.selected]
        prefix = "pc" if self.mode == "pca" else "ld"
        return [f"{prefix}{j}" for j in range(self.k)]

    def to_dict(self) -> dict:
        out = {"W": self.W.tolist(), "mode": self.mode, "explained": self.explained.tolist()}
        if self.eigenvalues is not None:
            out["eigenvalues"] = np.asarray(self.eigenvalues).tolist()
        if self.selected is not None:
            out["selected"] = list(self.selected)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Projection":
        ev = d.get("eigenvalues")
        sel = d.get("selected")
        return cls(
            np.array(d["W"], dtype=np.float64),
            d["mode"],
            np.array(d["explained"], dtype=np.float64),
            None if ev is None else np.array(ev, dtype=np.float64),
            None,
            None if sel is None else tuple(int(i) for i in sel),
        )


def _check_k(k: int, limit: int, what: str):
    if not (isinstance(k, (int, np.integer)) and 1 <= k <= limit):
        raise BadK(f"k must satisfy 1 <= k <= {limit} ({what}), got {k}")


def fit_pca(X: np.ndarray, k: int) -> Projection:
    X = np.asarray(X, dtype=np.float64)
    _check_k(k, X.shape[1], "feature count")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / X.shape[0]
    w, V = jacobi_eigh(cov)
    w = np.clip(w, 0.0, None)
    total = w.sum()
    frac = w[:k] / total if total > 0 else np.zeros(k)
    return Projection(_fix_signs(V[:, :k]), "pca", frac, eigenvalues=w[:k])


def scatter_matrices(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Within-class and between-class scatter ``(S_W, S_B)``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    mu = X.mean(axis=0)
    d = X.shape[1]
    S_W = np.zeros((d, d))
    S_B = np.zeros((d, d))
    for c in np.unique(y):
        Xc = X[y == c]
        mc = Xc.mean(axis=0)
        D = Xc - mc
        S_W += D.T @ D
        g = (mc - mu)[:, None]
        S_B += len(Xc) * (g @ g.T)
    return S_W, S_B


def fit_fisher(X: np.ndarray, y: np.ndarray, k: int = 1) -> Projection:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if len(y) != X.shape[0]:
        raise LengthMismatch("X and y lengths differ")
    n_classes = len(np.unique(y))
    if n_classes < 2:
        raise BadK("fisher projection needs at least 2 classes")
    _check_k(k, min(n_classes - 1, X.shape[1]), "classes - 1")
    S_W, S_B = scatter_matrices(X, y)
    d = X.shape[1]
    eps = 1e-6 * np.trace(S_W) / d
    S_reg = S_W + eps * np.eye(d)
    try:
        L = np.linalg.cholesky(S_reg)
    except np.linalg.LinAlgError:
        raise SingularScatter("regularized within-class scatter is not invertible") from None
    # whiten: L^-1 S_B L^-T is symmetric with the same generalized eigenvalues
    Linv = np.linalg.solve(L, np.eye(d))
    M = Linv @ S_B @ Linv.T
    w, U = jacobi_eigh(M)
    W = Linv.T @ U[:, :k]
    W /= np.linalg.norm(W, axis=0)
    return Projection(
        _fix_signs(W), "fisher", w[:k], eigenvalues=w[:k], diagnostics=(S_W, S_B)
    )


def selection_projection(indices: Sequence[int], d: int, ig_bits: Sequence[float]) -> Projection:
    W = np.zeros((d, len(indices)))
    for j, i in enumerate(indices):
        W[i, j] = 1.0
    return Projection(W, "ig-topk", np.asarray(ig_bits, dtype=np.float64), selected=tuple(indices))


def apply_projection(X: np.ndarray, p: Projection) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != p.d:
        raise DimensionMismatch(f"projection expects {p.d} columns, got {X.shape[-1]}")
    return X @ p.W


# --- information gain --------------------------------------------------------

def entropy(labels) -> float:
    """Shannon entropy of a label vector, in bits."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise LengthMismatch("entropy of an empty label vector")
    _, counts = np.unique(labels, return_counts=True)
    p = counts / labels.size
    return float(-np.sum(p * np.log2(p))) + 0.0


def equal_frequency_bins(feature, bins: int) -> np.ndarray:
    """Bin index per value from its rank: ``floor(r * bins / n)`` where ``r``
    counts the values strictly below it.

    Tied values always share a bin, so fewer than ``bins`` cells may result.
    """
    f = np.asarray(feature, dtype=np.float64)
    below = np.searchsorted(np.sort(f), f, side="left")
    return (below * bins) // max(len(f), 1)


def information_gain(feature, labels, bins: int = 10) -> float:
    feature = np.asarray(feature, dtype=np.float64)
    labels = np.asarray(labels)
    if feature.shape != labels.shape:
        raise LengthMismatch(f"feature length {feature.shape} != labels {labels.shape}")
    if bins < 2:
        raise BadK("bins must be >= 2")
    h = entropy(labels)
    cells = equal_frequency_bins(feature, bins)
    cond = 0.0
    n = len(labels)
    for v in np.unique(cells):
        mask = cells == v
        cond += mask.sum() / n * entropy(labels[mask])
    return float(min(max(h - cond, 0.0), h))


@dataclass(frozen=True)
class RankEntry:
    index: int
    name: str
    ig_bits: float


@dataclass(frozen=True)
class FeatureRanking:
    entries: tuple[RankEntry, ...]
    label_entropy_bits: float
    bins: int

    def top(self, k: int) -> list[RankEntry]:
        return list(self.entries[:k])

    def to_dict(self) -> dict:
        return {
            "bins": self.bins,
            "label_entropy_bits": self.label_entropy_bits,
            "entries": [
                {"index": e.index, "name": e.name, "ig_bits": e.ig_bits} for e in self.entries
            ],
        }

    def to_csv(self, path) -> None:
        try:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["index", "name", "ig_bits"])
                for e in self.entries:
                    w.writerow([e.index, e.name, repr(e.ig_bits)])
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc


def rank_features(ds: Dataset, bins: int = 10) -> FeatureRanking:
    igs = [information_gain(ds.X[:, j], ds.y, bins) for j in range(ds.d)]
    order = sorted(range(ds.d), key=lambda j: (-igs[j], j))
    entries = tuple(RankEntry(j, ds.schema.feature_names[j], igs[j]) for j in order)
    return FeatureRanking(entries, entropy(ds.y), bins)
