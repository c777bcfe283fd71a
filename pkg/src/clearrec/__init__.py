"""Cross-modal de-redundancy for multimodal recommendation via soft
null-space projection."""
from .data import InteractionDataset, load_interactions
from .diagnostics import retrieval_overlap, sliced_wasserstein, spectrum_report
from .evaluation import EvalReport, rank_and_score, split_dataset
from .matrixio import load_matrix, save_matrix
from .model import ModelState, TrainConfig
from .redundancy import (
    CrossModalProjector,
    ProjectionPair,
    RedundancyConfig,
    decompose,
    fit_projectors,
    project_features,
    projectors_from,
    select_rank_dynamic,
)
from .spectral import apply_projection, build_projector, cross_covariance, mean_center, svd
from .synthetic import SyntheticSpec, generate_synthetic
from .training import ClearRecommender, train

__version__ = "0.1.0"

__all__ = [
    "ClearRecommender",
    "CrossModalProjector",
    "EvalReport",
    "InteractionDataset",
    "ModelState",
    "ProjectionPair",
    "RedundancyConfig",
    "SyntheticSpec",
    "TrainConfig",
    "apply_projection",
    "build_projector",
    "cross_covariance",
    "decompose",
    "fit_projectors",
    "generate_synthetic",
    "load_interactions",
    "load_matrix",
    "mean_center",
    "project_features",
    "projectors_from",
    "rank_and_score",
    "retrieval_overlap",
    "save_matrix",
    "select_rank_dynamic",
    "sliced_wasserstein",
    "spectrum_report",
    "split_dataset",
    "svd",
    "train",
]
