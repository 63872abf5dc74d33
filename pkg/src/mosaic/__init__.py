"""Block-wise sequential pairwise ranking for implicit feedback, with
spectral long-memory filtering of user embedding trajectories."""

from .data import (
    Block,
    ColumnSchema,
    InteractionLog,
    PositiveRule,
    SplitDataset,
    build_blocks,
    dataset_stats,
    parse_interactions,
    temporal_split,
)
from .estimators import BprRecommender, MosaicRecommender, SnapeRecommender
from .memory import (
    MemoryConfig,
    MemoryEstimate,
    MemoryReport,
    classify_user,
    gph_estimate,
    periodogram,
    simulate_arfima,
    stationarity_test,
)
from .model import LatentModel, init_model, load_checkpoint, save_checkpoint
from .pipeline import PipelineReport, compose_scoring_model, filter_users, run_mosaic
from .trainer import TrainConfig, Trajectory, train_bpr, train_snape

__version__ = "0.1.0"

__all__ = [
    "Block",
    "BprRecommender",
    "ColumnSchema",
    "InteractionLog",
    "LatentModel",
    "MemoryConfig",
    "MemoryEstimate",
    "MemoryReport",
    "MosaicRecommender",
    "PipelineReport",
    "PositiveRule",
    "SnapeRecommender",
    "SplitDataset",
    "TrainConfig",
    "Trajectory",
    "build_blocks",
    "classify_user",
    "compose_scoring_model",
    "dataset_stats",
    "filter_users",
    "gph_estimate",
    "init_model",
    "load_checkpoint",
    "parse_interactions",
    "periodogram",
    "run_mosaic",
    "save_checkpoint",
    "simulate_arfima",
    "stationarity_test",
    "temporal_split",
    "train_bpr",
    "train_snape",
]
