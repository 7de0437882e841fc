"""mmselect: distribution-matching selection of training instances.

Given a large embedding pool and a small unlabeled validation set drawn from
the target distribution, rank and select the pool rows that best match the
target: by cosine similarity to the validation centroid, or by calibrated
gradients of the optimal-transport cost between the two point clouds.
"""

__version__ = "0.1.0"

from .bench import (
    BenchConfig,
    BenchReport,
    ClusterSpec,
    default_config,
    generate,
    knn_classify,
    macro_f1,
    run_bench,
)
from .geometry import Centroid, Projection2D, centroid, cosine, pca2
from .selection import (
    SelectionResult,
    SelectionTask,
    run_selection,
    sample_validation,
    select_dissim,
    select_random,
    select_semsim,
)
from .store import (
    EmbeddingMatrix,
    InstanceManifest,
    InstanceRecord,
    ValidationReport,
    fuse_modalities,
    load_embeddings,
    load_manifest,
    validate_pair,
    write_embeddings,
    write_manifest,
)
from .transport import (
    CostMatrix,
    GradientScores,
    TransportSolution,
    calibrated_gradients,
    cost_matrix,
    directional_derivative_check,
    solve_exact,
    solve_sinkhorn,
    uniform_marginals,
)

__all__ = [
    "BenchConfig",
    "BenchReport",
    "Centroid",
    "ClusterSpec",
    "CostMatrix",
    "EmbeddingMatrix",
    "GradientScores",
    "InstanceManifest",
    "InstanceRecord",
    "Projection2D",
    "SelectionResult",
    "SelectionTask",
    "TransportSolution",
    "ValidationReport",
    "calibrated_gradients",
    "centroid",
    "cosine",
    "cost_matrix",
    "default_config",
    "directional_derivative_check",
    "fuse_modalities",
    "generate",
    "knn_classify",
    "load_embeddings",
    "load_manifest",
    "macro_f1",
    "pca2",
    "run_bench",
    "run_selection",
    "sample_validation",
    "select_dissim",
    "select_random",
    "select_semsim",
    "solve_exact",
    "solve_sinkhorn",
    "uniform_marginals",
    "validate_pair",
    "write_embeddings",
    "write_manifest",
]
