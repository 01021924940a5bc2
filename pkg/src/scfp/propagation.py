"""Feature propagation over the cell-cell graph.

Two iterative schemes share the sparse-times-dense kernel:

* hard propagation: X <- A X, then reset every known entry to its original
  value. The known entries act as fixed boundary values and the unknowns
  converge to a weighted average of the known values they can reach.
* soft propagation: X <- alpha * A X + (1 - alpha) * anchor, where the
  anchor stays fixed at the warmed-up matrix. Known values are allowed to
  drift toward neighborhood consensus instead of being pinned.

Both have exact linear-solve counterparts here (`closed_form_solution`,
`soft_fixed_point_oracle`) used as test oracles; the iterative forms are
the production path because the dense solves scale cubically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ._kernels import hard_step, soft_step
from .model import (
    DimensionMismatchError,
    ExpressionMatrix,
    FloatArray,
    KnownMask,
    NeighborGraph,
    ScfpError,
    check_dimensions,
)

DENSE_SOLVE_CAP = 2000


class SingularSystemError(ScfpError):
    """The unknown block has no path to any known value and cannot be solved."""

    def __init__(self, gene_index: int, cells: list[int]):
        self.gene_index = gene_index
        self.cells = cells
        shown = ", ".join(str(c) for c in cells[:20])
        more = "..." if len(cells) > 20 else ""
        super().__init__(
            f"gene column {gene_index}: unknown cells [{shown}{more}] cannot reach "
            f"any known cell; the propagation fixed point is not unique"
        )


@dataclass
class PropagationTrace:
    """Per-iteration Frobenius residuals of one propagation run."""

    iterations_run: int = 0
    residual_history: list[float] = field(default_factory=list)
    converged: bool = False


def _propagate(
    start: FloatArray,
    step_into,
    iterations: int,
    tolerance: float,
) -> tuple[FloatArray, PropagationTrace]:
    """Run `step_into(current, out) -> residual` up to `iterations` times.

    tolerance == 0 disables early stopping so the full budget always runs.
    The residual is measured on the actual iterate sequence, i.e. after any
    clamping the step applies. Two buffers are swapped so the loop never
    allocates, which matters when one iterate is hundreds of MB.
    """
    trace = PropagationTrace()
    spare = np.empty_like(start)
    out = np.empty_like(start)
    current = start
    for _ in range(iterations):
        residual = step_into(current, out)
        trace.residual_history.append(residual)
        trace.iterations_run += 1
        current, out = out, (spare if current is start else current)
        if tolerance > 0 and residual <= tolerance:
            trace.converged = True
            break
    return current, trace


def hard_feature_propagation(
    x0: ExpressionMatrix,
    mask: KnownMask,
    graph: NeighborGraph,
    iterations: int = 40,
    tolerance: float = 0.0,
) -> tuple[ExpressionMatrix, PropagationTrace]:
    """Diffuse with hard clamping: known entries are reset to x0 every step.

    Known entries of the output are bit-identical to x0 (they are copied,
    never recomputed). Unknown entries converge to the harmonic extension
    of the known values over the graph.
    """
    check_dimensions(x0, mask=mask, graph=graph)
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    adjacency = graph.adjacency
    known = mask.mask
    values = x0.values

    def step_into(current: FloatArray, out: FloatArray) -> float:
        return hard_step(adjacency, current, known, values, out)

    result, trace = _propagate(values, step_into, iterations, tolerance)
    assert result.min() >= 0.0, "propagation produced a negative value"
    return x0.with_values(result), trace


def soft_feature_propagation(
    anchor: ExpressionMatrix,
    graph: NeighborGraph,
    alpha: float = 0.99,
    iterations: int = 40,
    tolerance: float = 0.0,
) -> tuple[ExpressionMatrix, PropagationTrace]:
    """Anchored diffusion: X <- alpha * A X + (1 - alpha) * anchor.

    The anchor term is the fixed input matrix throughout, not the rolling
    iterate, so the scheme contracts toward the unique fixed point of
    (I - alpha A) X = (1 - alpha) anchor at rate alpha.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    check_dimensions(anchor, graph=graph)
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    adjacency = graph.adjacency
    anchored = (1.0 - alpha) * anchor.values

    def step_into(current: FloatArray, out: FloatArray) -> float:
        return soft_step(adjacency, current, anchored, alpha, out)

    result, trace = _propagate(anchor.values, step_into, iterations, tolerance)
    assert result.min() >= 0.0, "propagation produced a negative value"
    return anchor.with_values(result), trace


def full_diffusion(
    x0: ExpressionMatrix, graph: NeighborGraph, steps: int = 40
) -> ExpressionMatrix:
    """Unclamped diffusion A^steps X; baseline that smears every value."""
    check_dimensions(x0, graph=graph)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    adjacency = graph.adjacency
    current = x0.values
    for _ in range(steps):
        current = adjacency @ current
    return x0.with_values(current)


def _grounded_unknowns(
    adjacency: sp.csr_matrix, known: np.ndarray
) -> np.ndarray:
    """Boolean vector over unknown-marked cells: can they reach a known cell?

    Reachability follows edge direction (a cell depends on the cells in its
    adjacency row). Computed by growing the grounded set backwards from the
    cells that point directly at a known cell.
    """
    n = adjacency.shape[0]
    grounded = known.copy()
    frontier = True
    # worst case n rounds; each round adds at least one cell or stops
    while frontier:
        reaches = adjacency @ grounded.astype(np.float64) > 0.0
        newly = reaches & ~grounded & ~known
        frontier = bool(newly.any())
        grounded |= newly
    return grounded


def closed_form_solution(
    x0: ExpressionMatrix,
    mask: KnownMask,
    graph: NeighborGraph,
    gene_index: int,
) -> FloatArray:
    """Exact fixed point of hard propagation for one gene column.

    Solves (I - A_uu) x_u = A_uk x_k by a dense solve over the unknown
    block. Scales cubically in the unknown count, so it is capped at
    2000 unknowns and meant for verification, not production.
    """
    check_dimensions(x0, mask=mask, graph=graph)
    if not (0 <= gene_index < x0.n_genes):
        raise IndexError(f"gene index {gene_index} out of range [0, {x0.n_genes})")
    column = x0.values[:, gene_index].copy()
    known = mask.mask[:, gene_index]
    unknown = ~known
    n_unknown = int(unknown.sum())
    if n_unknown == 0:
        return column
    if n_unknown > DENSE_SOLVE_CAP:
        raise ScfpError(
            f"{n_unknown} unknowns exceed the dense solve cap of {DENSE_SOLVE_CAP}"
        )

    grounded = _grounded_unknowns(graph.adjacency, known)
    stranded = np.nonzero(unknown & ~grounded)[0]
    if stranded.size:
        raise SingularSystemError(gene_index, [int(i) for i in stranded])

    sub = graph.adjacency[unknown, :]
    a_uu = sub[:, unknown].toarray()
    a_uk = sub[:, known]
    rhs = a_uk @ column[known]
    system = np.eye(n_unknown) - a_uu
    column[unknown] = np.linalg.solve(system, rhs)
    return column


def soft_fixed_point_oracle(
    anchor: ExpressionMatrix, graph: NeighborGraph, alpha: float
) -> ExpressionMatrix:
    """Exact fixed point of soft propagation: (I - alpha A) X = (1 - alpha) anchor.

    Always solvable for alpha < 1 because the row-stochastic adjacency has
    spectral radius at most 1. Dense solve, capped at 2000 cells.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    check_dimensions(anchor, graph=graph)
    n = anchor.n_cells
    if n > DENSE_SOLVE_CAP:
        raise ScfpError(f"{n} cells exceed the dense solve cap of {DENSE_SOLVE_CAP}")
    system = np.eye(n) - alpha * graph.adjacency.toarray()
    solution = np.linalg.solve(system, (1.0 - alpha) * anchor.values)
    return anchor.with_values(solution)


def dirichlet_energy(
    x: ExpressionMatrix, graph: NeighborGraph, gene_index: int
) -> float:
    """Graph smoothness 0.5 * x_f' (I - A) x_f of one gene column.

    With a directed row-stochastic adjacency this quadratic form is not
    guaranteed nonnegative; the signed value is returned as computed.
    """
    check_dimensions(x, graph=graph)
    if not (0 <= gene_index < x.n_genes):
        raise IndexError(f"gene index {gene_index} out of range [0, {x.n_genes})")
    column = x.values[:, gene_index]
    return 0.5 * float(column @ (column - graph.adjacency @ column))
