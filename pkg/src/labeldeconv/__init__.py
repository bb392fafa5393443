"""Label deconvolution: train node encoders separately from a GNN on inverse labels."""
from __future__ import annotations

from .bundle import DatasetBundle, load_bundle, save_bundle
from .errors import (
    ConfigError,
    DataError,
    LabelDeconvError,
    NumericError,
    PreconditionError,
    ShapeError,
    SingularMatrixError,
)
from .graph import CsrGraph, NodeSplit, NormalizedAdjacency, build_csr, row_normalize, spmm
from .labels import DeconvWeights, HopLabelStack, LabelMatrix, TaskKind, inverse_labels, precompute_hop_labels
from .pipeline import (
    ExperimentReport,
    Method,
    TrainConfig,
    run_experiment,
    run_motivating_example,
    train_gnn_phase,
    train_glem_baseline,
    train_ne_phase,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CsrGraph",
    "DataError",
    "DatasetBundle",
    "DeconvWeights",
    "ExperimentReport",
    "HopLabelStack",
    "LabelDeconvError",
    "LabelMatrix",
    "Method",
    "NodeSplit",
    "NormalizedAdjacency",
    "NumericError",
    "PreconditionError",
    "ShapeError",
    "SingularMatrixError",
    "TaskKind",
    "TrainConfig",
    "build_csr",
    "inverse_labels",
    "load_bundle",
    "precompute_hop_labels",
    "row_normalize",
    "run_experiment",
    "run_motivating_example",
    "save_bundle",
    "spmm",
    "train_glem_baseline",
    "train_gnn_phase",
    "train_ne_phase",
]
