"""Cell-cell kNN graph construction with cosine similarity.

The graph is directed: each cell points at its k most similar cells and the
binary adjacency is row-normalized to 1/k per edge (symmetrizing would break
the exactly-k row structure). Similarities are computed by exact blocked
all-pairs products on unit-normalized rows; no approximate index is used.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .model import ExpressionMatrix, FloatArray, NeighborGraph, ScfpError

# Rows per similarity block are sized so the dense block stays around 256 MB
# regardless of corpus size while keeping BLAS calls large.
_BLOCK_TARGET_ENTRIES = 32_000_000


def _unit_rows(values: FloatArray) -> tuple[FloatArray, np.ndarray]:
    """Row-normalize to unit length; zero-norm rows become zero vectors."""
    norms = np.linalg.norm(values, axis=1)
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    unit = values / safe[:, None]
    unit[zero, :] = 0.0
    return unit, zero


def cosine_knn(x: ExpressionMatrix, k: int) -> NeighborGraph:
    """Directed kNN graph over cells by cosine similarity.

    Each cell gets edges of weight 1/k_eff to its k_eff = min(k, N-1) most
    similar other cells. Exact similarity ties are broken toward the lower
    cell index. Zero-norm cells have similarity 0 to everything and receive
    a single self-loop of weight 1 so the graph stays row-stochastic.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    n = x.n_cells
    if n < 2:
        raise ScfpError(f"kNN graph needs at least 2 cells, got {n}")
    k_eff = min(k, n - 1)

    unit, zero_norm = _unit_rows(x.values)
    weight = 1.0 / k_eff

    neighbor_rows: list[np.ndarray | None] = [None] * n
    block = max(1, _BLOCK_TARGET_ENTRIES // n)
    for start in range(0, n, block):
        stop = min(start + block, n)
        sims = unit[start:stop] @ unit.T
        # exclude self; +inf after negation sorts last, so a self edge can
        # never enter the top k_eff <= N-1
        sims[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        # stable sort on negated similarities = highest similarity first,
        # lowest index on exact ties
        top = np.argsort(-sims, axis=1, kind="stable")[:, :k_eff]
        top = np.sort(top, axis=1)
        for local in range(stop - start):
            i = start + local
            if not zero_norm[i]:
                neighbor_rows[i] = top[local]

    counts = np.where(zero_norm, 1, k_eff)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = np.empty(indptr[-1], dtype=np.int64)
    data = np.empty(indptr[-1], dtype=np.float64)
    for i in range(n):
        lo, hi = indptr[i], indptr[i + 1]
        if zero_norm[i]:
            indices[lo] = i
            data[lo] = 1.0
        else:
            indices[lo:hi] = neighbor_rows[i]
            data[lo:hi] = weight

    adjacency = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    return NeighborGraph(adjacency=adjacency, k=k_eff)


def refine_graph(warmed: ExpressionMatrix, k: int) -> NeighborGraph:
    """Rebuild the kNN graph from a warmed-up (densified) matrix."""
    return cosine_knn(warmed, k)


def row_normalize(adjacency) -> NeighborGraph:
    """Row-normalize a binary adjacency; all-zero rows fall back to a self-loop."""
    adj = sp.csr_matrix(adjacency, dtype=np.float64)
    if adj.shape[0] != adj.shape[1]:
        raise ValueError(f"adjacency must be square, got {adj.shape}")
    if adj.nnz and not np.isin(adj.data, (0.0, 1.0)).all():
        raise ValueError("adjacency entries must be 0 or 1")
    adj.eliminate_zeros()
    n = adj.shape[0]
    row_sums = np.asarray(adj.sum(axis=1)).ravel()
    empty = np.nonzero(row_sums == 0)[0]
    if empty.size:
        loops = sp.csr_matrix((np.ones(empty.size), (empty, empty)), shape=(n, n))
        adj = (adj + loops).tocsr()
        row_sums[empty] = 1.0
    normalized = sp.csr_matrix(sp.diags(1.0 / row_sums) @ adj)
    k = int(np.diff(normalized.indptr).max())
    return NeighborGraph(adjacency=normalized, k=max(k, 1))


def graph_changes(before: NeighborGraph, after: NeighborGraph) -> tuple[int, int]:
    """(changed edge count, changed row count) between two graphs' edge sets."""
    if before.n_cells != after.n_cells:
        raise ValueError("graphs must have the same number of cells")
    edges_before = before.edge_set()
    edges_after = after.edge_set()
    changed = edges_before ^ edges_after
    rows = {i for i, _ in changed}
    return len(changed), len(rows)
