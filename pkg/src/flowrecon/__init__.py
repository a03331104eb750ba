"""Sparse flow-field reconstruction on unstructured 2D point clouds.

Velocity fields sampled on time-varying, non-grid node sets are
reconstructed from a small retained fraction (about 1%) of nodes.
The pipeline propagates known velocities along a k-nearest-neighbour
graph, marks retained nodes with a binary indicator channel, and
refines the estimate with a stack of distance-aware graph attention
layers interleaved with Laplacian diffusion.
"""

from .graph import (
    DuplicatePointsError,
    FlowGraph,
    FlowSnapshot,
    GraphConstructionError,
    GraphLayout,
    InvalidSnapshotError,
    SparseOperator,
    build_knn_graph,
    edge_weights,
    rw_adjacency,
    rw_laplacian,
)
from .sparsify import (
    MaskEmptyError,
    NonGridError,
    SparseSample,
    insert_intermediate_nodes,
    mask_random,
    split_half,
    super_resolution_sample,
)
from .featprop import (
    FeaturePropagationError,
    PropagationResult,
    dirichlet_energy,
    propagate_features,
)
from .model import (
    DEFAULT_WIDTHS,
    CheckpointError,
    GacnModel,
    LayerParams,
    NonFiniteActivationError,
    assemble_inputs,
    attention_coefficients,
    gacn_forward,
    gat_layer_forward,
    gcn_layer_forward,
    init_glorot,
    laplacian_diffusion,
    load_checkpoint,
    param_count,
    sage_layer_forward,
    save_checkpoint,
)
from .training import (
    AdamState,
    BackwardResult,
    NonFiniteGradientError,
    TrainConfig,
    TrainHistory,
    TrainingDivergedError,
    adam_step,
    backward,
    mse_loss,
    plateau_scheduler,
    total_loss,
    train,
    tv_loss,
)
from .datagen import (
    DatasetSizes,
    DatasetSplits,
    DomainError,
    DomainSpec,
    Rect,
    SnapshotIOError,
    SpectrumSpec,
    StreamField,
    load_manifest,
    load_snapshot,
    make_dataset,
    make_field,
    save_manifest,
    save_snapshot,
    synth_flow,
)
from .evaluate import (
    ABLATION_GRID,
    AblationRow,
    CubicFallbackWarning,
    EvaluationTable,
    MetricsReport,
    ReconstructionDataset,
    cubic_baseline,
    evaluate_methods,
    mae,
    metrics_report,
    r2,
    reconstruct_sample,
    rmse,
    run_ablation,
)
from .bench import BENCHMARK_WIDTHS, BenchmarkSettings, build_benchmark, mask_snapshots

__version__ = "0.1.0"

__all__ = [
    "ABLATION_GRID",
    "AblationRow",
    "AdamState",
    "BENCHMARK_WIDTHS",
    "BackwardResult",
    "BenchmarkSettings",
    "CheckpointError",
    "CubicFallbackWarning",
    "DEFAULT_WIDTHS",
    "DatasetSizes",
    "DatasetSplits",
    "DomainError",
    "DomainSpec",
    "DuplicatePointsError",
    "EvaluationTable",
    "FeaturePropagationError",
    "FlowGraph",
    "FlowSnapshot",
    "GacnModel",
    "GraphConstructionError",
    "GraphLayout",
    "InvalidSnapshotError",
    "LayerParams",
    "MaskEmptyError",
    "MetricsReport",
    "NonFiniteActivationError",
    "NonFiniteGradientError",
    "NonGridError",
    "PropagationResult",
    "ReconstructionDataset",
    "Rect",
    "SnapshotIOError",
    "SparseOperator",
    "SparseSample",
    "SpectrumSpec",
    "StreamField",
    "TrainConfig",
    "TrainHistory",
    "TrainingDivergedError",
    "adam_step",
    "assemble_inputs",
    "attention_coefficients",
    "backward",
    "build_benchmark",
    "build_knn_graph",
    "cubic_baseline",
    "dirichlet_energy",
    "edge_weights",
    "evaluate_methods",
    "gacn_forward",
    "gat_layer_forward",
    "gcn_layer_forward",
    "init_glorot",
    "insert_intermediate_nodes",
    "laplacian_diffusion",
    "load_checkpoint",
    "load_manifest",
    "load_snapshot",
    "mae",
    "make_dataset",
    "make_field",
    "mask_random",
    "mask_snapshots",
    "metrics_report",
    "mse_loss",
    "param_count",
    "plateau_scheduler",
    "propagate_features",
    "r2",
    "reconstruct_sample",
    "rmse",
    "run_ablation",
    "rw_adjacency",
    "rw_laplacian",
    "sage_layer_forward",
    "save_checkpoint",
    "save_manifest",
    "save_snapshot",
    "split_half",
    "super_resolution_sample",
    "synth_flow",
    "total_loss",
    "train",
    "tv_loss",
]
