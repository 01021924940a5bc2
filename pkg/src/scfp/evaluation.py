"""Benchmark protocol: dropout corruption, masked RMSE, and clustering metrics.

The imputation benchmark zeroes a random subset of observed nonzeros and
scores recovery by RMSE on exactly those held-out entries, in the same value
space as the input (no hidden renormalization). The clustering benchmark is
PCA to at most 50 components followed by restarted k-means, scored against
ground-truth labels by ARI, NMI and Hungarian-matched accuracy.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import EvaluationReport, ExpressionMatrix, FloatArray, ScfpError

HeldOut = list[tuple[int, int, float]]

KMEANS_MAX_ITER = 300
KMEANS_SHIFT_TOL = 1e-6


@dataclass(frozen=True)
class DropoutExperiment:
    corrupted: ExpressionMatrix
    held_out: HeldOut
    requested_rate: float
    realized_rate: float


@dataclass
class ClusteringResult:
    labels: np.ndarray
    centroids: FloatArray
    inertia: float
    inertia_history: list[float] = field(default_factory=list)
    empty_clusters: list[int] = field(default_factory=list)


def apply_dropout(x: ExpressionMatrix, rate: float, seed: int) -> DropoutExperiment:
    """Zero floor(rate * nnz) nonzero entries chosen uniformly without replacement."""
    if not (0.0 < rate < 1.0):
        raise ValueError(f"dropout rate must lie in (0, 1), got {rate}")
    rows, cols = np.nonzero(x.values)
    nnz = rows.size
    if nnz == 0:
        raise ScfpError("cannot apply dropout to an all-zero matrix")
    n_drop = int(rate * nnz)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(nnz, size=n_drop, replace=False) if n_drop else np.empty(0, dtype=int)
    chosen = np.sort(chosen)
    corrupted = x.values.copy()
    sel_rows, sel_cols = rows[chosen], cols[chosen]
    originals = corrupted[sel_rows, sel_cols]
    corrupted[sel_rows, sel_cols] = 0.0
    held_out: HeldOut = list(zip(sel_rows.tolist(), sel_cols.tolist(), originals.tolist()))
    return DropoutExperiment(
        corrupted=x.with_values(corrupted),
        held_out=held_out,
        requested_rate=rate,
        realized_rate=n_drop / nnz,
    )


def masked_rmse(imputed: ExpressionMatrix, held_out: HeldOut) -> float:
    """Root mean squared error over the held-out entries only."""
    if not held_out:
        raise ScfpError("held-out set is empty; masked RMSE is undefined")
    rows = np.fromiter((h[0] for h in held_out), dtype=np.int64, count=len(held_out))
    cols = np.fromiter((h[1] for h in held_out), dtype=np.int64, count=len(held_out))
    values = np.fromiter((h[2] for h in held_out), dtype=np.float64, count=len(held_out))
    if rows.min() < 0 or rows.max() >= imputed.n_cells or cols.min() < 0 or cols.max() >= imputed.n_genes:
        raise IndexError("held-out index out of range")
    diffs = imputed.values[rows, cols] - values
    return float(np.sqrt(np.mean(diffs * diffs)))


def pca_reduce(x: ExpressionMatrix, d: int, seed: int = 0) -> FloatArray:
    """Project onto the top-d principal components of the column-centered matrix.

    The decomposition is an exact SVD (the seed is accepted for interface
    stability but deterministic already). Component signs are fixed by
    making the largest-magnitude gene loading of each component positive.
    """
    n, m = x.shape
    if not (1 <= d <= min(n, m)):
        raise ValueError(f"d must lie in [1, {min(n, m)}], got {d}")
    centered = x.values - x.values.mean(axis=0)
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    u, s, vt = u[:, :d], s[:d], vt[:d, :]
    # sign convention: first index of the largest |loading| decides
    for c in range(d):
        pivot = int(np.argmax(np.abs(vt[c])))
        if vt[c, pivot] < 0:
            vt[c] *= -1.0
            u[:, c] *= -1.0
    return u * s


def _kmeans_plus_plus(points: FloatArray, c: int, rng: np.random.Generator) -> FloatArray:
    n = points.shape[0]
    centroids = np.empty((c, points.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = points[first]
    dist2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for t in range(1, c):
        total = dist2.sum()
        if total > 0:
            probs = dist2 / total
            choice = int(rng.choice(n, p=probs))
        else:
            choice = int(rng.integers(n))
        centroids[t] = points[choice]
        dist2 = np.minimum(dist2, ((points - centroids[t]) ** 2).sum(axis=1))
    return centroids


def _squared_distances(points: FloatArray, centroids: FloatArray) -> FloatArray:
    # |p - c|^2 expanded; clip the tiny negatives that cancellation produces
    d2 = (
        (points**2).sum(axis=1)[:, None]
        - 2.0 * points @ centroids.T
        + (centroids**2).sum(axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def _lloyd(points: FloatArray, c: int, rng: np.random.Generator) -> ClusteringResult:
    centroids = _kmeans_plus_plus(points, c, rng)
    history: list[float] = []
    labels = np.zeros(points.shape[0], dtype=int)
    for _ in range(KMEANS_MAX_ITER):
        d2 = _squared_distances(points, centroids)
        labels = np.argmin(d2, axis=1)
        point_cost = d2[np.arange(points.shape[0]), labels]
        history.append(float(point_cost.sum()))
        new_centroids = centroids.copy()
        used = set()
        for cluster in range(c):
            members = labels == cluster
            if members.any():
                new_centroids[cluster] = points[members].mean(axis=0)
        for cluster in range(c):
            if (labels == cluster).any():
                continue
            # reseed an empty cluster at the farthest point not yet taken
            order = np.argsort(-point_cost, kind="stable")
            pick = next(int(i) for i in order if int(i) not in used)
            used.add(pick)
            new_centroids[cluster] = points[pick]
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        if shift < KMEANS_SHIFT_TOL:
            break
    d2 = _squared_distances(points, centroids)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(points.shape[0]), labels].sum())
    empty = [cluster for cluster in range(c) if not (labels == cluster).any()]
    return ClusteringResult(
        labels=labels,
        centroids=centroids,
        inertia=inertia,
        inertia_history=history,
        empty_clusters=empty,
    )


def kmeans(
    points: FloatArray, c: int, seed: int = 0, restarts: int = 10
) -> ClusteringResult:
    """Lloyd's algorithm with k-means++ seeding and independent restarts.

    Returns the restart with the lowest final inertia; ties keep the
    earliest restart. Empty clusters are reseeded to the farthest point.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("points must be a 2-D array")
    if not (1 <= c <= points.shape[0]):
        raise ValueError(f"cluster count must lie in [1, {points.shape[0]}], got {c}")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    best: Optional[ClusteringResult] = None
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        result = _lloyd(points, c, rng)
        if best is None or result.inertia < best.inertia:
            best = result
    assert best is not None
    return best


def _contingency(a: Sequence, b: Sequence) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("label vectors must be 1-D and the same length")
    _, a_codes = np.unique(a, return_inverse=True)
    _, b_codes = np.unique(b, return_inverse=True)
    r = int(a_codes.max()) + 1
    c = int(b_codes.max()) + 1
    table = np.zeros((r, c), dtype=np.int64)
    np.add.at(table, (a_codes, b_codes), 1)
    return table


def _comb2(counts: np.ndarray) -> float:
    counts = counts.astype(np.float64)
    return float((counts * (counts - 1.0) / 2.0).sum())


def adjusted_rand_index(a: Sequence, b: Sequence) -> float:
    """Pair-counting agreement between two labelings, chance-corrected.

    Both partitions being single-cluster (or both all-singletons) makes the
    adjustment degenerate; the conventional value 1.0 is returned then.
    """
    table = _contingency(a, b)
    n = int(table.sum())
    if n < 2:
        raise ValueError("ARI needs at least 2 samples")
    sum_cells = _comb2(table.ravel())
    sum_rows = _comb2(table.sum(axis=1))
    sum_cols = _comb2(table.sum(axis=0))
    total_pairs = n * (n - 1) / 2.0
    expected = sum_rows * sum_cols / total_pairs
    maximum = 0.5 * (sum_rows + sum_cols)
    if maximum == expected:
        return 1.0
    return float((sum_cells - expected) / (maximum - expected))


def normalized_mutual_info(a: Sequence, b: Sequence) -> float:
    """Mutual information normalized by the geometric mean of the entropies.

    1.0 when both partitions are single-cluster, 0.0 when exactly one
    carries no information.
    """
    table = _contingency(a, b)
    n = float(table.sum())
    # marginals come from the integer counts so a single-cluster side gives
    # probability exactly 1.0 and entropy exactly 0
    p_joint = table / n
    p_a = table.sum(axis=1) / n
    p_b = table.sum(axis=0) / n
    h_a = -float(np.sum(p_a[p_a > 0] * np.log(p_a[p_a > 0])))
    h_b = -float(np.sum(p_b[p_b > 0] * np.log(p_b[p_b > 0])))
    if h_a == 0.0 and h_b == 0.0:
        return 1.0
    if h_a == 0.0 or h_b == 0.0:
        return 0.0
    # partitions identical up to relabeling make the table a (scaled)
    # permutation matrix; NMI is exactly 1 there, so return it without
    # accumulating one ulp of rounding noise
    if ((table > 0).sum(axis=0) <= 1).all() and ((table > 0).sum(axis=1) <= 1).all():
        return 1.0
    nz = p_joint > 0
    outer = p_a[:, None] * p_b[None, :]
    info = float(np.sum(p_joint[nz] * np.log(p_joint[nz] / outer[nz])))
    return min(1.0, max(0.0, info / np.sqrt(h_a * h_b)))


def hungarian_assign(cost: FloatArray) -> tuple[list[tuple[int, int]], float]:
    """Minimum-cost injective assignment of min(R, C) rows to columns."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(cost)
    pairs = [(int(r), int(c)) for r, c in zip(rows, cols)]
    return pairs, float(cost[rows, cols].sum())


def clustering_accuracy(pred: Sequence, truth: Sequence) -> float:
    """Best achievable label-matching accuracy under an injective cluster map."""
    table = _contingency(pred, truth)
    pairs, _ = hungarian_assign(-table.astype(np.float64))
    matched = sum(int(table[r, c]) for r, c in pairs)
    return matched / float(table.sum())


def evaluate_clustering(
    x_denoised: ExpressionMatrix,
    truth: Sequence,
    c: Optional[int] = None,
    seed: int = 0,
    restarts: int = 10,
) -> EvaluationReport:
    """PCA + k-means on the matrix, scored against ground-truth labels."""
    truth = np.asarray(truth)
    if truth.shape[0] != x_denoised.n_cells:
        raise ValueError(
            f"{truth.shape[0]} labels for {x_denoised.n_cells} cells"
        )
    if c is None:
        c = int(np.unique(truth).size)
    start = time.perf_counter()
    d = min(50, x_denoised.n_cells - 1, x_denoised.n_genes)
    d = max(d, 1)
    embedded = pca_reduce(x_denoised, d, seed)
    clusters = kmeans(embedded, c, seed=seed, restarts=restarts)
    flags = []
    if clusters.empty_clusters:
        flags.append(f"empty_clusters:{clusters.empty_clusters}")
    if np.unique(truth).size == 1 and np.unique(clusters.labels).size == 1:
        flags.append("degenerate_single_cluster_convention")
    return EvaluationReport(
        ari=adjusted_rand_index(clusters.labels, truth),
        nmi=normalized_mutual_info(clusters.labels, truth),
        ca=clustering_accuracy(clusters.labels, truth),
        wall_time_seconds=time.perf_counter() - start,
        flags=flags,
    )
