"""
EmbedScale - embedding-dimension scaling lab for collaborative filtering

Trains BPR, NeuMF, LightGCN and SGL over a range of embedding sizes,
classifies the resulting NDCG curves and checks the supporting theory
numerically.
"""

from .data import (
    Dataset,
    DatasetStats,
    InteractionFormat,
    NoiseSpec,
    SplitSpec,
    inject_noise,
    load_interactions,
    sample_negative,
    split,
    stats,
)
from .graph import NormAdj, build_normalized_adjacency, eigen_spectrum, propagate
from .models import ModelKind, ModelType, Params, Ranker, init_params, score, score_all_items
from .objectives import DropConfig, ObjectiveConfig, ObjectiveType, bpr_drop_loss, bpr_loss, contrastive_loss
from .trainer import TrainConfig, TrainHistory, train
from .evaluator import MetricReport, evaluate, ndcg_at_k
from .sweep import CurveShape, DropComparison, SweepConfig, SweepResult, classify_curve, compare_drop, run_sweep
from .errors import EmbedScaleError

__version__ = "0.1.0"
__all__ = [
    "Dataset",
    "DatasetStats",
    "InteractionFormat",
    "NoiseSpec",
    "SplitSpec",
    "inject_noise",
    "load_interactions",
    "sample_negative",
    "split",
    "stats",
    "NormAdj",
    "build_normalized_adjacency",
    "eigen_spectrum",
    "propagate",
    "ModelKind",
    "ModelType",
    "Params",
    "Ranker",
    "init_params",
    "score",
    "score_all_items",
    "DropConfig",
    "ObjectiveConfig",
    "ObjectiveType",
    "bpr_drop_loss",
    "bpr_loss",
    "contrastive_loss",
    "TrainConfig",
    "TrainHistory",
    "train",
    "MetricReport",
    "evaluate",
    "ndcg_at_k",
    "CurveShape",
    "SweepConfig",
    "SweepResult",
    "classify_curve",
    "compare_drop",
    "DropComparison",
    "run_sweep",
    "EmbedScaleError",
]
