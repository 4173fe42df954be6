"""
Pipeline stages: cataloguing, hashing, deduplication, normalization, splits,
metrics, the reference classifier, synthetic data and reporting.
"""

from .catalog import CatalogScanner, scan_dataset, distribution_table
from .phash import phash64, hamming
from .dedup import apply_dedup, group_duplicates
from .normalize import DatasetNormalizer, process_dataset
from .splits import SplitGenerator, toto_splits, loto_splits, validate_manifest
from .metrics import accuracy, aggregate, build_matrix, compare_protocols, pearson, spearman
from .baseline import FeatureExtractor, LinearSoftmaxModel, train
from .synthgen import DatasetSynthesizer, SynthSpec, default_spec, generate
from .report import emit_curves, emit_matrix_svg, emit_results_table

__all__ = [
    "CatalogScanner",
    "scan_dataset",
    "distribution_table",
    "phash64",
    "hamming",
    "apply_dedup",
    "group_duplicates",
    "DatasetNormalizer",
    "process_dataset",
    "SplitGenerator",
    "toto_splits",
    "loto_splits",
    "validate_manifest",
    "accuracy",
    "aggregate",
    "build_matrix",
    "compare_protocols",
    "pearson",
    "spearman",
    "FeatureExtractor",
    "LinearSoftmaxModel",
    "train",
    "DatasetSynthesizer",
    "SynthSpec",
    "default_spec",
    "generate",
    "emit_curves",
    "emit_matrix_svg",
    "emit_results_table",
]
