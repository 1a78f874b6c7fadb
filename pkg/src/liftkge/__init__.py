"""Knowledge graph embeddings with low-dimensional entities lifted by a small
transposed-convolution network, on a from-scratch reverse-mode autodiff core."""

from .data import KnowledgeGraph, Triple, build_filter_index, load_dataset, save_dataset
from .evaluation import EvalReport, evaluate, rank_candidates
from .liftnet import LiftNetConfig, default_config, plan_liftnet
from .models import ModelKind, ModelParams, load_checkpoint, save_checkpoint
from .reporting import count_params, efficiency_percentage, emit_table
from .training import ModelSpec, TrainConfig, lr_grid_search, train

__version__ = "0.1.0"

__all__ = [
    "KnowledgeGraph",
    "Triple",
    "build_filter_index",
    "load_dataset",
    "save_dataset",
    "EvalReport",
    "evaluate",
    "rank_candidates",
    "LiftNetConfig",
    "default_config",
    "plan_liftnet",
    "ModelKind",
    "ModelParams",
    "load_checkpoint",
    "save_checkpoint",
    "count_params",
    "efficiency_percentage",
    "emit_table",
    "ModelSpec",
    "TrainConfig",
    "lr_grid_search",
    "train",
]
