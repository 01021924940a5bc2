"""scFP: bi-level feature propagation for denoising sparse cell-gene matrices.

A cell-cell kNN graph built from cosine similarities first diffuses observed
expression into the zeros while hard-clamping the observed values; the graph
is then rebuilt from the warmed-up matrix and a soft-clamped diffusion lets
all values relax toward neighborhood consensus. The package also ships the
evaluation protocol used to benchmark imputation (dropout corruption +
masked RMSE) and clustering (PCA + k-means + ARI/NMI/CA).
"""

from .evaluation import (
    ClusteringResult,
    DropoutExperiment,
    adjusted_rand_index,
    apply_dropout,
    clustering_accuracy,
    evaluate_clustering,
    hungarian_assign,
    kmeans,
    masked_rmse,
    normalized_mutual_info,
    pca_reduce,
)
from .graph import cosine_knn, refine_graph, row_normalize
from .io import (
    DatasetBundle,
    load_bundle,
    read_csv_matrix,
    read_labels,
    read_matrix,
    read_matrix_market,
    write_labels,
    write_matrix,
    write_report,
)
from .model import (
    EvaluationReport,
    ExpressionMatrix,
    KnownMask,
    Mode,
    NeighborGraph,
    ScfpConfig,
    ScfpError,
    derive_known_mask,
    validate,
)
from .pipeline import GraphSummary, ImputationResult, preprocess, run_scfp
from .propagation import (
    PropagationTrace,
    SingularSystemError,
    closed_form_solution,
    dirichlet_energy,
    full_diffusion,
    hard_feature_propagation,
    soft_feature_propagation,
    soft_fixed_point_oracle,
)
from .synthesize import SimulationSpec, false_zero_rate, simulate

__version__ = "0.1.0"

__all__ = [
    "ClusteringResult",
    "DatasetBundle",
    "DropoutExperiment",
    "EvaluationReport",
    "ExpressionMatrix",
    "GraphSummary",
    "ImputationResult",
    "KnownMask",
    "Mode",
    "NeighborGraph",
    "PropagationTrace",
    "ScfpConfig",
    "ScfpError",
    "SimulationSpec",
    "SingularSystemError",
    "adjusted_rand_index",
    "apply_dropout",
    "closed_form_solution",
    "clustering_accuracy",
    "cosine_knn",
    "derive_known_mask",
    "dirichlet_energy",
    "evaluate_clustering",
    "false_zero_rate",
    "full_diffusion",
    "hard_feature_propagation",
    "hungarian_assign",
    "kmeans",
    "load_bundle",
    "masked_rmse",
    "normalized_mutual_info",
    "pca_reduce",
    "preprocess",
    "read_csv_matrix",
    "read_labels",
    "read_matrix",
    "read_matrix_market",
    "refine_graph",
    "row_normalize",
    "run_scfp",
    "simulate",
    "soft_feature_propagation",
    "soft_fixed_point_oracle",
    "validate",
    "write_labels",
    "write_matrix",
    "write_report",
]
