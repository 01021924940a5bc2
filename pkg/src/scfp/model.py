"""Shared data model: expression matrices, masks, neighbor graphs, configuration."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

FloatArray = NDArray[np.float64]
BoolArray = NDArray[np.bool_]

ROW_SUM_TOL = 1e-12


class ScfpError(Exception):
    """Base class for errors raised by this package."""


class DimensionMismatchError(ScfpError):
    """Shapes of paired objects (matrix / mask / graph) disagree."""


def _default_ids(prefix: str, n: int) -> list[str]:
    return [f"{prefix}_{i}" for i in range(n)]


@dataclass(frozen=True)
class ExpressionMatrix:
    """Dense cell-gene matrix, cells as rows.

    Values are held as float64 row-major and frozen after construction;
    callers get read-only sharing for free. Construction checks structure
    only (2-D, at least 1x1, id lengths); value-level rules (finite,
    nonnegative) are checked by `validate`, which reports violations
    instead of raising so that loaders can surface all problems at once.
    """

    values: FloatArray
    cell_ids: list[str] = field(default_factory=list)
    gene_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, order="C", copy=True)
        if values.ndim != 2:
            raise ValueError(f"expression matrix must be 2-D, got ndim={values.ndim}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"expression matrix must be at least 1x1, got {values.shape}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        if not self.cell_ids:
            object.__setattr__(self, "cell_ids", _default_ids("cell", values.shape[0]))
        if not self.gene_ids:
            object.__setattr__(self, "gene_ids", _default_ids("gene", values.shape[1]))

    @property
    def n_cells(self) -> int:
        return self.values.shape[0]

    @property
    def n_genes(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def with_values(self, values: FloatArray) -> "ExpressionMatrix":
        """New matrix sharing this one's ids."""
        return ExpressionMatrix(values, list(self.cell_ids), list(self.gene_ids))


@dataclass(frozen=True)
class KnownMask:
    """Boolean matrix marking entries observed nonzero at input.

    Derived once from the raw input and never recomputed from iterates:
    an input value of exactly 0.0 is always "unknown", even if it is a
    true biological zero.
    """

    mask: BoolArray

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool, copy=True)
        if mask.ndim != 2:
            raise ValueError("mask must be 2-D")
        mask.flags.writeable = False
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def known_count(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class NeighborGraph:
    """Row-stochastic sparse cell-cell adjacency, CSR layout.

    Each row holds the outgoing edge weights of one cell. Rows sum to 1
    within 1e-12; self-loops appear only as the fallback for cells that
    could not be given neighbors (zero-norm rows).
    """

    adjacency: sp.csr_matrix
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be positive, got {self.k}")
        adj = sp.csr_matrix(self.adjacency, dtype=np.float64)
        if adj.shape[0] != adj.shape[1]:
            raise ValueError(f"adjacency must be square, got {adj.shape}")
        adj.sort_indices()
        object.__setattr__(self, "adjacency", adj)

    @property
    def n_cells(self) -> int:
        return self.adjacency.shape[0]

    def edge_set(self) -> set[tuple[int, int]]:
        coo = self.adjacency.tocoo()
        return set(zip(coo.row.tolist(), coo.col.tolist()))


class Mode(str, Enum):
    """Pipeline variants; FULL is the complete hard -> refine -> soft chain."""

    FULL = "full"
    HARD_ONLY = "hard_only"
    SOFT_ONLY = "soft_only"
    HARD_SOFT_NO_REFINE = "hard_soft_no_refine"
    SOFT_THEN_HARD = "soft_then_hard"
    FULL_DIFFUSION_BASELINE = "full_diffusion_baseline"


@dataclass(frozen=True)
class ScfpConfig:
    """Pipeline knobs.

    alpha controls how strongly the soft phase trusts neighbors over the
    anchor; 0.99 deliberately lets observed values drift. A convergence
    tolerance of 0 disables early stopping, so both phases run their full
    iteration budget.
    """

    k: int = 15
    alpha: float = 0.99
    hard_iterations: int = 40
    soft_iterations: int = 40
    convergence_tolerance: float = 0.0
    mode: Mode = Mode.FULL
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.k < 1:
            raise ValueError(f"k must be positive, got {self.k}")
        if self.hard_iterations < 1 or self.soft_iterations < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.convergence_tolerance < 0:
            raise ValueError("convergence tolerance must be >= 0")
        if self.seed < 0 or self.seed > 2**64 - 1:
            raise ValueError("seed must fit in 64 unsigned bits")
        if not isinstance(self.mode, Mode):
            object.__setattr__(self, "mode", Mode(self.mode))


@dataclass
class EvaluationReport:
    """Metric bundle; a metric is None when its evaluation did not run.

    Absent metrics stay None and are written out as "not_evaluated" so
    they can never be mistaken for a zero score. `flags` records
    degenerate-convention events (e.g. single-cluster ARI defined as 1).
    """

    rmse_masked: Optional[float] = None
    ari: Optional[float] = None
    nmi: Optional[float] = None
    ca: Optional[float] = None
    wall_time_seconds: float = 0.0
    config_echo: Optional[ScfpConfig] = None
    flags: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class Violation:
    """One validation failure with its location."""

    kind: str
    row: int = -1
    col: int = -1
    detail: str = ""

    def __str__(self) -> str:
        loc = f" at ({self.row},{self.col})" if self.row >= 0 else ""
        tail = f": {self.detail}" if self.detail else ""
        return f"{self.kind}{loc}{tail}"


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def raise_if_invalid(self) -> None:
        if not self.ok:
            summary = "; ".join(str(v) for v in self.violations[:10])
            more = f" (+{len(self.violations) - 10} more)" if len(self.violations) > 10 else ""
            raise ScfpError(f"invalid expression matrix: {summary}{more}")


def _locate(bad: BoolArray, kind: str, cap: int = 100) -> list[Violation]:
    rows, cols = np.nonzero(bad)
    return [Violation(kind, int(i), int(j)) for i, j in zip(rows[:cap], cols[:cap])]


def validate(x: ExpressionMatrix) -> ValidationResult:
    """Check value-level invariants, returning the violations found (capped per kind)."""
    violations: list[Violation] = []
    values = x.values
    violations += _locate(~np.isfinite(values), "non-finite entry")
    violations += _locate(np.isfinite(values) & (values < 0), "negative entry")
    if len(x.cell_ids) != x.n_cells:
        violations.append(
            Violation("dimension mismatch", detail=f"{len(x.cell_ids)} cell ids for {x.n_cells} rows")
        )
    if len(x.gene_ids) != x.n_genes:
        violations.append(
            Violation("dimension mismatch", detail=f"{len(x.gene_ids)} gene ids for {x.n_genes} columns")
        )
    return ValidationResult(tuple(violations))


def derive_known_mask(x: ExpressionMatrix) -> KnownMask:
    """Known = nonzero at input. Snapshot; later mutation of x cannot leak in."""
    return KnownMask(x.values != 0)


def check_dimensions(x: ExpressionMatrix, mask: Optional[KnownMask] = None,
                     graph: Optional["NeighborGraph"] = None) -> None:
    """Raise DimensionMismatchError unless matrix, mask and graph line up."""
    if mask is not None and mask.shape != x.shape:
        raise DimensionMismatchError(f"mask shape {mask.shape} != matrix shape {x.shape}")
    if graph is not None and graph.n_cells != x.n_cells:
        raise DimensionMismatchError(
            f"graph has {graph.n_cells} cells but matrix has {x.n_cells}"
        )


def validate_graph(graph: NeighborGraph) -> None:
    """Assert the NeighborGraph invariants; used by construction paths and tests."""
    adj = graph.adjacency
    if (adj.data < 0).any():
        raise ScfpError("graph has negative edge weights")
    row_sums = np.asarray(adj.sum(axis=1)).ravel()
    bad = np.abs(row_sums - 1.0) > ROW_SUM_TOL
    if bad.any():
        i = int(np.nonzero(bad)[0][0])
        raise ScfpError(f"graph row {i} sums to {row_sums[i]!r}, not 1")
    nnz_per_row = np.diff(adj.indptr)
    if (nnz_per_row > graph.k).any():
        i = int(np.nonzero(nnz_per_row > graph.k)[0][0])
        raise ScfpError(f"graph row {i} has {int(nnz_per_row[i])} neighbors, more than k={graph.k}")
    diag = adj.diagonal()
    for i in np.nonzero(diag)[0]:
        # self-loop rows must be pure fallback rows: single entry, weight 1
        if nnz_per_row[i] != 1 or diag[i] != 1.0:
            raise ScfpError(f"row {int(i)} mixes a self-loop with other edges")


def config_as_dict(config: ScfpConfig) -> dict[str, object]:
    """Flat mapping used for report echoes and CLI output."""
    return {
        "k": config.k,
        "alpha": config.alpha,
        "hard_iterations": config.hard_iterations,
        "soft_iterations": config.soft_iterations,
        "convergence_tolerance": config.convergence_tolerance,
        "mode": config.mode.value,
        "seed": config.seed,
    }


def replace_config(config: ScfpConfig, **changes) -> ScfpConfig:
    return replace(config, **changes)
