"""Doubly robust weighted GEE estimation of marginal treatment effects in
cluster-randomized trials with outcomes missing at random."""

from .correlation import EXCHANGEABLE, INDEPENDENCE, WorkingCorrelation
from .dataset import (
    ClusterBlock,
    DatasetError,
    ModelSpec,
    TrialDataset,
    append_cluster_means,
    load_csv,
)
from .estimator import (
    PLACEMENT_VINV_W,
    PLACEMENT_WHALF,
    EstimatorConfig,
    EstimatorError,
    FitResult,
    solve,
)
from .simulate import (
    McSummary,
    ScenarioEq5,
    ScenarioEq6,
    generate_eq5,
    generate_eq6,
    run_mc,
    summarize_to_table,
)

__all__ = [
    "EXCHANGEABLE",
    "INDEPENDENCE",
    "PLACEMENT_VINV_W",
    "PLACEMENT_WHALF",
    "ClusterBlock",
    "DatasetError",
    "EstimatorConfig",
    "EstimatorError",
    "FitResult",
    "McSummary",
    "ModelSpec",
    "ScenarioEq5",
    "ScenarioEq6",
    "TrialDataset",
    "WorkingCorrelation",
    "append_cluster_means",
    "generate_eq5",
    "generate_eq6",
    "load_csv",
    "run_mc",
    "solve",
    "summarize_to_table",
]

__version__ = "0.1.0"
