"""Self-contained UMAP for small point sets.

The usual library implementations are unavailable in this environment, so
this module implements the algorithm directly: exact k-nearest-neighbour
graph, smooth-kNN fuzzy simplicial set (per-point rho/sigma calibrated by
binary search), symmetrized by probabilistic t-conorm, then stochastic
gradient layout with negative sampling. Everything is driven by one
seeded generator, so a fixed random_state gives identical embeddings on
every run.

Scaling note: the kNN step is O(n^2); intended for the few hundred
centroid points these figures project, not for large datasets.
"""

from __future__ import annotations

import math
import random

import numpy as np

# Attraction/repulsion curve constants for min_dist=0.1, spread=1.0 (the
# standard least-squares fit of 1/(1+a*d^(2b)) to the target membership
# curve; fitted once, pinned here).
CURVE_A = 1.576943460405378
CURVE_B = 0.8950608781227859

SMOOTH_K_TOLERANCE = 1e-5
MIN_K_DIST_SCALE = 1e-3
GRAD_CLIP = 4.0
NEGATIVE_SAMPLES = 5


def _knn(data: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact Euclidean k-nearest neighbours (excluding self)."""
    deltas = data[:, None, :] - data[None, :, :]
    distances = np.sqrt((deltas**2).sum(axis=2))
    order = np.argsort(distances, axis=1, kind="stable")
    neighbor_idx = order[:, 1 : k + 1]
    neighbor_dist = np.take_along_axis(distances, neighbor_idx, axis=1)
    return neighbor_idx, neighbor_dist


def _smooth_knn(neighbor_dist: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-point (rho, sigma) so that sum_j exp(-(d-rho)/sigma) = log2(k)."""
    n = neighbor_dist.shape[0]
    target = math.log2(k)
    rho = np.zeros(n)
    sigma = np.ones(n)
    for i in range(n):
        row = neighbor_dist[i]
        nonzero = row[row > 0.0]
        rho[i] = nonzero[0] if nonzero.size else 0.0
        lo, hi, mid = 0.0, np.inf, 1.0
        for _ in range(64):
            value = np.exp(-np.maximum(row - rho[i], 0.0) / mid).sum()
            if abs(value - target) < SMOOTH_K_TOLERANCE:
                break
            if value > target:
                hi = mid
                mid = (lo + hi) / 2.0
            else:
                lo = mid
                mid = mid * 2.0 if hi == np.inf else (lo + hi) / 2.0
        sigma[i] = mid
        mean_dist = row.mean()
        if rho[i] > 0.0 and sigma[i] < MIN_K_DIST_SCALE * mean_dist:
            sigma[i] = MIN_K_DIST_SCALE * mean_dist
    return rho, sigma


def _fuzzy_graph(data: np.ndarray, k: int) -> dict[tuple[int, int], float]:
    neighbor_idx, neighbor_dist = _knn(data, k)
    rho, sigma = _smooth_knn(neighbor_dist, k)
    directed: dict[tuple[int, int], float] = {}
    n = data.shape[0]
    for i in range(n):
        for j_pos in range(k):
            j = int(neighbor_idx[i, j_pos])
            d = neighbor_dist[i, j_pos]
            weight = math.exp(-max(d - rho[i], 0.0) / sigma[i]) if sigma[i] > 0 else 1.0
            directed[(i, j)] = weight
    # probabilistic t-conorm: w = a + b - a*b
    union: dict[tuple[int, int], float] = {}
    for (i, j), w in directed.items():
        w_t = directed.get((j, i), 0.0)
        union[(i, j)] = w + w_t - w * w_t
        union[(j, i)] = union[(i, j)]
    return union


def _pca_init(data: np.ndarray) -> np.ndarray:
    """Deterministic 2D initialization, scaled into the usual +-10 box."""
    centered = data - data.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    coords = centered @ vt[:2].T
    span = np.abs(coords).max()
    if span > 0:
        coords = coords * (10.0 / span)
    return coords.astype(np.float64)


def fit_transform(
    data,
    n_neighbors: int = 15,
    min_dist: float = 0.1,
    n_epochs: int = 200,
    random_state: int = 42,
) -> np.ndarray:
    """Project rows of ``data`` to 2D. min_dist is pinned via CURVE_A/B for
    the 0.1 default; other values reuse the same curve (documented in the
    figure metadata)."""
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[0]
    if n < 3:
        raise ValueError("need at least 3 points to embed")
    k = min(n_neighbors, n - 1)
    graph = _fuzzy_graph(data, k)
    edges = sorted((i, j) for (i, j) in graph if i < j)
    weights = np.array([graph[edge] for edge in edges])
    max_weight = weights.max()
    epochs_per_sample = np.where(
        weights > 0, max_weight / weights, np.inf
    )  # sample high-weight edges every epoch, weak ones rarely

    embedding = _pca_init(data)
    rng = random.Random(random_state)
    a, b = CURVE_A, CURVE_B

    next_sample = epochs_per_sample.copy()
    for epoch in range(n_epochs):
        alpha = 1.0 - epoch / n_epochs
        for edge_index, (i, j) in enumerate(edges):
            if next_sample[edge_index] > epoch + 1:
                continue
            next_sample[edge_index] += epochs_per_sample[edge_index]
            diff = embedding[i] - embedding[j]
            dist_sq = float(diff @ diff)
            if dist_sq > 0.0:
                coeff = (-2.0 * a * b * dist_sq ** (b - 1.0)) / (1.0 + a * dist_sq**b)
            else:
                coeff = 0.0
            grad = np.clip(coeff * diff, -GRAD_CLIP, GRAD_CLIP)
            embedding[i] += alpha * grad
            embedding[j] -= alpha * grad
            for _ in range(NEGATIVE_SAMPLES):
                other = rng.randrange(n)
                if other == i:
                    continue
                diff = embedding[i] - embedding[other]
                dist_sq = float(diff @ diff)
                coeff = (2.0 * b) / ((0.001 + dist_sq) * (1.0 + a * dist_sq**b))
                grad = np.clip(coeff * diff, -GRAD_CLIP, GRAD_CLIP)
                embedding[i] += alpha * grad
    return embedding
