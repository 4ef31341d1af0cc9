"""Desk-scale sample-quality and diversity metrics on raw pixels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError


@dataclass(frozen=True)
class MetricReport:
    energy_distance: float
    pairwise_diversity: float
    knn_precision: float
    knn_recall: float
    n_samples: int
    n_reference: int
    seed: int = 0

    def lines(self) -> list:
        return [f"energy_distance: {self.energy_distance:.10g}",
                f"pairwise_diversity: {self.pairwise_diversity:.10g}",
                f"knn_precision: {self.knn_precision:.10g}",
                f"knn_recall: {self.knn_recall:.10g}",
                f"n_samples: {self.n_samples}",
                f"n_reference: {self.n_reference}",
                f"seed: {self.seed}"]


def _flatten(batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.size == 0:
        raise ConfigError("metric input batch is empty")
    return batch.reshape(batch.shape[0], -1)


def energy_distance(samples: np.ndarray, reference: np.ndarray) -> float:
    """V-statistic energy distance 2 E|X-Y| - E|X-X'| - E|Y-Y'|.

    Self-pairs are included, which keeps the statistic >= 0.
    """
    x = _flatten(samples)
    y = _flatten(reference)
    exy = cdist(x, y).mean()
    exx = cdist(x, x).mean()
    eyy = cdist(y, y).mean()
    return 2.0 * exy - exx - eyy


def pairwise_diversity(samples: np.ndarray) -> float:
    """Mean Euclidean distance over all unordered sample pairs."""
    x = _flatten(samples)
    n = x.shape[0]
    if n < 2:
        return 0.0
    d = cdist(x, x)
    iu = np.triu_indices(n, k=1)
    return float(d[iu].mean())


def knn_precision_recall(samples: np.ndarray, reference: np.ndarray,
                         k: int = 3):
    """k-NN manifold precision/recall on raw pixels.

    A point is inside a set's manifold if it lies within the k-th-neighbor
    radius of at least one point of that set (self excluded from radii).
    """
    if k < 1:
        raise ConfigError(f"knn k must be >= 1, got {k}")
    x = _flatten(samples)
    y = _flatten(reference)
    precision = _fraction_in_manifold(x, y, k)
    recall = _fraction_in_manifold(y, x, k)
    return precision, recall


def _fraction_in_manifold(points: np.ndarray, manifold: np.ndarray,
                          k: int) -> float:
    m = manifold.shape[0]
    if m < 2:
        raise ConfigError(f"manifold needs >= 2 points, got {m}")
    self_d = cdist(manifold, manifold)
    kk = min(k, m - 1)
    radii = np.sort(self_d, axis=1)[:, kk]  # column 0 is the self distance
    d = cdist(points, manifold)
    inside = (d <= radii[None, :]).any(axis=1)
    return float(inside.mean())


def report(samples: np.ndarray, reference: np.ndarray, k: int = 3,
           seed: int = 0) -> MetricReport:
    prec, rec = knn_precision_recall(samples, reference, k)
    return MetricReport(
        energy_distance=energy_distance(samples, reference),
        pairwise_diversity=pairwise_diversity(samples),
        knn_precision=prec, knn_recall=rec,
        n_samples=int(np.asarray(samples).shape[0]),
        n_reference=int(np.asarray(reference).shape[0]), seed=seed)
