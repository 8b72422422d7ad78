"""Offline signature identification by SVM fusion of three statistical matchers."""

from .featex import FEATURE_NAMES, N_FEATURES, extract_features
from .matchers import MatcherConfig, NormStats, SubjectStats, fit_subject
from .raster import ImageSet, PreprocessConfig, preprocess
from .svmfuse import Kernel, SVMModel, TrainConfig, decide, fused_score, prune_dependent, train

__version__ = "0.1.0"

__all__ = [
    "FEATURE_NAMES",
    "ImageSet",
    "Kernel",
    "MatcherConfig",
    "N_FEATURES",
    "NormStats",
    "PreprocessConfig",
    "SVMModel",
    "SubjectStats",
    "TrainConfig",
    "decide",
    "extract_features",
    "fit_subject",
    "fused_score",
    "preprocess",
    "prune_dependent",
    "train",
]
