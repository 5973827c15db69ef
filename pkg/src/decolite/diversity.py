"""Diversity analysis between trained models.

Two complementary views: the Frechet distance between Gaussians fitted to
the models' pooled final-block features (how differently two models embed
the same data), and dynamic-time-warping distances between the learned
final-layer filters, with a classical-MDS projection to two dimensions
for plotting. The raw distance matrix is exportable so that external
embedding tools can be applied to the same structure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError, NumericError, UsageError
from .model import LiteModel, extract_final_filters

__all__ = [
    "FeatureStats",
    "feature_statistics",
    "fid",
    "dtw",
    "FilterDistanceMatrix",
    "filter_distance_matrix",
    "Embedding2D",
    "embed_2d",
    "write_fid_report",
]

_EIG_CLAMP = 1e-10
_SYM_TOL = 1e-9


@dataclass
class FeatureStats:
    """Gaussian summary (mean, covariance) of one model's pooled features."""

    model_id: str
    mu: np.ndarray
    sigma: np.ndarray
    n_samples: int

    def to_json_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "n_samples": self.n_samples,
            "mu": [float(v) for v in self.mu],
            "sigma": [[float(v) for v in row] for row in self.sigma],
        }


def feature_statistics(model: LiteModel, x: np.ndarray,
                       model_id: str = "") -> FeatureStats:
    """Fit mean and unbiased covariance to time-pooled eval-mode features.

    Features are the per-channel time averages of the final block's
    output, one vector per sample.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 2:
        raise UsageError("feature statistics need at least two samples")
    _, feats = model.forward(x, mode="eval")
    pooled = feats.data.mean(axis=2)
    mu = pooled.mean(axis=0)
    sigma = np.cov(pooled, rowvar=False, ddof=1)
    return FeatureStats(model_id=model_id, mu=mu, sigma=np.atleast_2d(sigma),
                        n_samples=x.shape[0])


def _psd_sqrt(sym: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(sym)
    w = np.where(w < _EIG_CLAMP, 0.0, w)
    return (v * np.sqrt(w)) @ v.T


def fid(stats_a: FeatureStats, stats_b: FeatureStats) -> float:
    """Frechet distance between the two fitted Gaussians.

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}), with the matrix
    square root taken through the eigendecomposition of the symmetrized
    product S_a^{1/2} S_b S_a^{1/2}. Eigenvalues below 1e-10 are treated
    as zero, and a result within -1e-8 of zero is clamped to 0.
    """
    mu_a, sig_a = np.asarray(stats_a.mu), np.asarray(stats_a.sigma)
    mu_b, sig_b = np.asarray(stats_b.mu), np.asarray(stats_b.sigma)
    if mu_a.shape != mu_b.shape or sig_a.shape != sig_b.shape:
        raise InputError("feature statistics have mismatched dimensions")
    for name, sig in (("first", sig_a), ("second", sig_b)):
        if np.abs(sig - sig.T).max() > _SYM_TOL:
            raise InputError(f"{name} covariance is asymmetric beyond tolerance")
    sig_a = 0.5 * (sig_a + sig_a.T)
    sig_b = 0.5 * (sig_b + sig_b.T)

    root_a = _psd_sqrt(sig_a)
    cross = _psd_sqrt(root_a @ sig_b @ root_a)
    value = float(((mu_a - mu_b) ** 2).sum()
                  + np.trace(sig_a) + np.trace(sig_b) - 2.0 * np.trace(cross))
    if value < 0.0:
        if value < -1e-8:
            raise NumericError(f"Frechet distance came out negative ({value:.3e})")
        value = 0.0
    return value


# ---------------------------------------------------------------------------
# dynamic time warping


def dtw(a, b) -> float:
    """Alignment cost between two sequences: squared pointwise differences
    accumulated over the best boundary-constrained monotone warping path,
    with no window constraint and no final square root."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise UsageError("dtw requires non-empty sequences")
    n, m = a.size, b.size
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        ai = a[i - 1]
        row = acc[i]
        prev = acc[i - 1]
        for j in range(1, m + 1):
            cost = (ai - b[j - 1]) ** 2
            row[j] = cost + min(prev[j], row[j - 1], prev[j - 1])
    return float(acc[n, m])


def _dtw_batch(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """dtw() per row pair of two equal-length (P, L) stacks, vectorized
    over pairs with the same recurrence the scalar version uses."""
    p, length = left.shape
    cost = (left[:, :, None] - right[:, None, :]) ** 2
    acc = np.full((p, length + 1, length + 1), np.inf)
    acc[:, 0, 0] = 0.0
    for i in range(1, length + 1):
        for j in range(1, length + 1):
            best = np.minimum(np.minimum(acc[:, i - 1, j], acc[:, i, j - 1]),
                              acc[:, i - 1, j - 1])
            acc[:, i, j] = cost[:, i - 1, j - 1] + best
    return acc[:, length, length]


@dataclass
class FilterDistanceMatrix:
    """Symmetric pairwise distances over every (model, filter) pair."""

    labels: list[tuple[str, int]]
    values: np.ndarray

    def to_csv(self, path) -> None:
        names = [f"{m}:{i}" for m, i in self.labels]
        lines = ["filter," + ",".join(names)]
        for name, row in zip(names, self.values):
            lines.append(name + "," + ",".join(f"{v:.17g}" for v in row))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


def filter_distance_matrix(models: list[LiteModel],
                           model_ids: list[str] | None = None) -> FilterDistanceMatrix:
    """All-pairs warping distances between the models' final filter banks."""
    if not models:
        raise UsageError("filter_distance_matrix needs at least one model")
    if model_ids is None:
        model_ids = [f"model{i}" for i in range(len(models))]
    if len(model_ids) != len(models):
        raise UsageError("one id per model is required")
    banks = [extract_final_filters(m) for m in models]
    shapes = {b.shape for b in banks}
    if len(shapes) != 1:
        raise ConfigError(f"models have inconsistent filter shapes: {sorted(shapes)}")
    stacked = np.concatenate(banks, axis=0)
    labels = [(mid, i) for mid, bank in zip(model_ids, banks)
              for i in range(bank.shape[0])]

    n = stacked.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    values = np.zeros((n, n), dtype=np.float64)
    if iu.size:
        dists = _dtw_batch(stacked[iu], stacked[ju])
        values[iu, ju] = dists
        values[ju, iu] = dists
    return FilterDistanceMatrix(labels=labels, values=values)


# ---------------------------------------------------------------------------
# classical multidimensional scaling


@dataclass
class Embedding2D:
    coords: np.ndarray
    degenerate: bool

    def to_csv(self, path, labels=None) -> None:
        lines = ["label,x,y"]
        for i, (x, y) in enumerate(self.coords):
            name = labels[i] if labels is not None else str(i)
            lines.append(f"{name},{x:.17g},{y:.17g}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


def embed_2d(matrix) -> Embedding2D:
    """Classical MDS of a distance matrix onto two axes.

    Double-centers the squared distances, keeps the top two non-negative
    eigenpairs, and fixes each axis's sign so that its first coordinate of
    visible magnitude is positive. An all-zero matrix flags the embedding
    as degenerate and places every point at the origin.
    """
    d = matrix.values if isinstance(matrix, FilterDistanceMatrix) else np.asarray(matrix)
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise UsageError("embed_2d expects a square distance matrix")
    n = d.shape[0]
    if n < 3:
        raise UsageError("embedding needs at least three points")
    if np.abs(d).max() == 0.0:
        return Embedding2D(coords=np.zeros((n, 2)), degenerate=True)

    sq = d * d
    centering = np.eye(n) - np.full((n, n), 1.0 / n)
    gram = -0.5 * centering @ sq @ centering
    gram = 0.5 * (gram + gram.T)
    w, v = np.linalg.eigh(gram)
    # Eigenvalues that are pure round-off of the double centering would
    # otherwise leak sqrt-amplified noise into a degenerate axis.
    w[w < 1e-12 * max(1.0, np.abs(w).max())] = 0.0
    top = np.argsort(w)[::-1][:2]
    coords = v[:, top] * np.sqrt(w[top])
    for axis in range(2):
        col = coords[:, axis]
        visible = np.nonzero(np.abs(col) > 1e-12)[0]
        if visible.size and col[visible[0]] < 0:
            coords[:, axis] = -col
    return Embedding2D(coords=coords, degenerate=False)


def write_fid_report(stats: list[FeatureStats], path) -> dict:
    """Pairwise Frechet distances between models, persisted as JSON."""
    report = {
        "models": [s.model_id for s in stats],
        "pairs": [
            {"a": stats[i].model_id, "b": stats[j].model_id,
             "fid": fid(stats[i], stats[j])}
            for i in range(len(stats)) for j in range(i + 1, len(stats))
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report
