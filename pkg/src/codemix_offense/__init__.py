"""Offensive language identification for code-mixed Dravidian social-media text."""
from .corpus import DatasetSplit, LabeledExample, class_distribution, label_schema, load_split, save_split
from .ensemble import MajorityVoteClassifier, majority_vote
from .estimator import OffensiveLanguageClassifier
from .metrics import compute_metrics, format_report
from .mlm import MaskedLMPretrainer, sample_masks
from .textprep import TextPreprocessor, truncate

__all__ = [
    "DatasetSplit",
    "LabeledExample",
    "MajorityVoteClassifier",
    "MaskedLMPretrainer",
    "OffensiveLanguageClassifier",
    "TextPreprocessor",
    "class_distribution",
    "compute_metrics",
    "format_report",
    "label_schema",
    "load_split",
    "majority_vote",
    "sample_masks",
    "save_split",
    "truncate",
]

__version__ = "0.1.0"
