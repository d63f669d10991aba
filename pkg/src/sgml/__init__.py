"""Attribute-aware deep metric learning engine.

Joint attribute + embedding training with a soft-binomial deviance loss
modulated by attribute-space similarity, plus pair samplers, a synthetic
attributed-data generator, and a Recall@K retrieval evaluator.
"""

from .data import Dataset, DatasetSpec, ImageRecord, generate, load, save
from .evaluator import RecallReport, evaluate_all_layers, extract_features, recall_at_k
from .losses import (LossParams, PairSample, bce, bdl, sbdl_batch,
                     sbdl_negative, sbdl_positive, sgml_objective)
from .network import Checkpoint, NetworkShape, forward, init_params, load_checkpoint, save_checkpoint
from .sampling import (DatasetIndex, PairList, TripletBatch, enumerate_pairs,
                       sample_batch_wise, sample_image_wise, triplets_to_pairs)
from .similarity import cosine_similarity, sgs_mapping, similarity_matrix
from .trainer import TrainConfig, TrainingHistory, build_pair_samples, train

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DatasetSpec", "ImageRecord", "generate", "load", "save",
    "RecallReport", "evaluate_all_layers", "extract_features", "recall_at_k",
    "LossParams", "PairSample", "bce", "bdl", "sbdl_batch", "sbdl_negative",
    "sbdl_positive", "sgml_objective",
    "Checkpoint", "NetworkShape", "forward", "init_params",
    "load_checkpoint", "save_checkpoint",
    "DatasetIndex", "PairList", "TripletBatch", "enumerate_pairs",
    "sample_batch_wise", "sample_image_wise", "triplets_to_pairs",
    "cosine_similarity", "sgs_mapping", "similarity_matrix",
    "TrainConfig", "TrainingHistory", "build_pair_samples", "train",
    "__version__",
]
