"""Fairness-aware influence maximisation from diffusion cascades."""

from .data import (
    AttributeSchema,
    Cascade,
    CascadeLog,
    DatasetSplit,
    ProfileTable,
    combine_attributes,
    dataset_stats,
    parse_cascade_log,
    parse_profiles,
    parse_schema,
    split_by_time,
)
from .embedding import EmbeddingModel, TrainConfig, load_model, save_model, train
from .estimators import FairGreedySelector, FairInfluenceEmbedding
from .exceptions import DataError, FairIMError, MissingProfileError, ModelFormatError, NumericalError
from .fairness import FairnessScore, fairness_score
from .selection import SeedSet, SelectionInputs, fair_greedy, naive_fair_greedy

__version__ = "0.1.0"

__all__ = [
    "AttributeSchema", "Cascade", "CascadeLog", "DatasetSplit", "ProfileTable",
    "combine_attributes", "dataset_stats", "parse_cascade_log", "parse_profiles",
    "parse_schema", "split_by_time", "EmbeddingModel", "TrainConfig", "load_model",
    "save_model", "train", "FairGreedySelector", "FairInfluenceEmbedding", "DataError",
    "FairIMError", "MissingProfileError", "ModelFormatError", "NumericalError",
    "FairnessScore", "fairness_score", "SeedSet", "SelectionInputs", "fair_greedy",
    "naive_fair_greedy",
]
