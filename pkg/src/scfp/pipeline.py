"""End-to-end imputation: initial graph, hard propagation, refinement, soft propagation.

The full pipeline first fills zeros while pinning observed values (hard
phase), rebuilds the kNN graph from the densified matrix, then lets all
values relax toward neighborhood consensus around the warmed-up anchor
(soft phase). The remaining modes are ablations of that chain plus an
unclamped-diffusion baseline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .graph import cosine_knn, graph_changes, refine_graph
from .model import (
    ExpressionMatrix,
    Mode,
    NeighborGraph,
    ScfpConfig,
    derive_known_mask,
    validate,
)
from .propagation import (
    PropagationTrace,
    full_diffusion,
    hard_feature_propagation,
    soft_feature_propagation,
)


@dataclass(frozen=True)
class GraphSummary:
    """Edge statistics for one constructed graph; change counts compare
    the refined graph against the initial one."""

    edge_count: int
    fallback_rows: int
    changed_edges: Optional[int] = None
    changed_rows: Optional[int] = None


@dataclass
class ImputationResult:
    denoised: ExpressionMatrix
    warmed: ExpressionMatrix
    initial_graph_summary: GraphSummary
    refined_graph_summary: Optional[GraphSummary]
    hard_trace: Optional[PropagationTrace]
    soft_trace: Optional[PropagationTrace]
    config_echo: ScfpConfig


def _summarize(graph: NeighborGraph, base: Optional[NeighborGraph] = None) -> GraphSummary:
    diag = graph.adjacency.diagonal()
    fallback = int(np.count_nonzero(diag))
    if base is None:
        return GraphSummary(edge_count=graph.adjacency.nnz, fallback_rows=fallback)
    changed_edges, changed_rows = graph_changes(base, graph)
    return GraphSummary(
        edge_count=graph.adjacency.nnz,
        fallback_rows=fallback,
        changed_edges=changed_edges,
        changed_rows=changed_rows,
    )


def preprocess(
    x: ExpressionMatrix,
    library_size_normalize: bool = False,
    log1p: bool = False,
    target_sum: float = 1e4,
) -> ExpressionMatrix:
    """Optional per-cell depth normalization and log(1+v) transform.

    Both steps map zero to zero and positives to positives, so the derived
    known mask of the output equals that of the input. Cells with zero
    total stay all-zero.
    """
    if target_sum <= 0:
        raise ValueError("target_sum must be positive")
    if not library_size_normalize and not log1p:
        return x
    values = x.values.copy()
    if library_size_normalize:
        totals = values.sum(axis=1)
        scale = np.where(totals > 0, target_sum / np.where(totals > 0, totals, 1.0), 1.0)
        values *= scale[:, None]
    if log1p:
        values = np.log1p(values)
    return x.with_values(values)


def run_scfp(x: ExpressionMatrix, config: ScfpConfig) -> ImputationResult:
    """Run the configured pipeline variant on a validated matrix."""
    validate(x).raise_if_invalid()
    mode = config.mode
    mask = derive_known_mask(x)
    initial = cosine_knn(x, config.k)
    tol = config.convergence_tolerance

    hard_trace: Optional[PropagationTrace] = None
    soft_trace: Optional[PropagationTrace] = None
    refined_summary: Optional[GraphSummary] = None

    if mode is Mode.HARD_ONLY:
        warmed, hard_trace = hard_feature_propagation(
            x, mask, initial, config.hard_iterations, tol
        )
        denoised = warmed
    elif mode is Mode.SOFT_ONLY:
        # no warm-up: the raw matrix itself anchors the soft phase
        warmed = x
        denoised, soft_trace = soft_feature_propagation(
            x, initial, config.alpha, config.soft_iterations, tol
        )
    elif mode is Mode.FULL_DIFFUSION_BASELINE:
        warmed = x
        denoised = full_diffusion(x, initial, config.hard_iterations)
    elif mode is Mode.SOFT_THEN_HARD:
        # order swap: soften first, then re-pin the observed values and
        # harden on the graph refined from the softened matrix
        soft_out, soft_trace = soft_feature_propagation(
            x, initial, config.alpha, config.soft_iterations, tol
        )
        warmed = soft_out
        refined = refine_graph(soft_out, config.k)
        refined_summary = _summarize(refined, base=initial)
        restart = soft_out.values.copy()
        restart[mask.mask] = x.values[mask.mask]
        denoised, hard_trace = hard_feature_propagation(
            x.with_values(restart), mask, refined, config.hard_iterations, tol
        )
    elif mode is Mode.HARD_SOFT_NO_REFINE:
        warmed, hard_trace = hard_feature_propagation(
            x, mask, initial, config.hard_iterations, tol
        )
        denoised, soft_trace = soft_feature_propagation(
            warmed, initial, config.alpha, config.soft_iterations, tol
        )
    elif mode is Mode.FULL:
        warmed, hard_trace = hard_feature_propagation(
            x, mask, initial, config.hard_iterations, tol
        )
        refined = refine_graph(warmed, config.k)
        refined_summary = _summarize(refined, base=initial)
        denoised, soft_trace = soft_feature_propagation(
            warmed, refined, config.alpha, config.soft_iterations, tol
        )
    else:  # pragma: no cover - Mode is a closed enum
        raise ValueError(f"unhandled mode {mode}")

    return ImputationResult(
        denoised=denoised,
        warmed=warmed,
        initial_graph_summary=_summarize(initial),
        refined_graph_summary=refined_summary,
        hard_trace=hard_trace,
        soft_trace=soft_trace,
        config_echo=config,
    )
