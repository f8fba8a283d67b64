"""Rating-coherent explainable recommendation at desk scale."""

__version__ = "0.1.0"

from .backbone import Backbone, BackboneConfig, load_checkpoint, save_checkpoint
from .bpe import BpeModel, train_bpe
from .corpus import DatasetSplit, InteractionRecord, ingest, keyword_targets, make_splits
from .metrics import MetricsReport, evaluate_predictions
from .pipeline import (
    GenerationResult,
    PromptSet,
    RatingDistribution,
    Verbalizer,
    infer,
    predict_rating,
    rating_score,
    soft_rating_embedding,
)
from .trainer import TrainerConfig, curriculum_task, fit, smooth_rating

__all__ = [
    "Backbone",
    "BackboneConfig",
    "BpeModel",
    "DatasetSplit",
    "GenerationResult",
    "InteractionRecord",
    "MetricsReport",
    "PromptSet",
    "RatingDistribution",
    "TrainerConfig",
    "Verbalizer",
    "curriculum_task",
    "evaluate_predictions",
    "fit",
    "infer",
    "ingest",
    "keyword_targets",
    "load_checkpoint",
    "make_splits",
    "predict_rating",
    "rating_score",
    "save_checkpoint",
    "smooth_rating",
    "soft_rating_embedding",
    "train_bpe",
]
