"""Linear emotion space engine: AU ingestion, emotion-space geometry, injection and CDAN."""

from .au import AU_NAMES, EMOTIONS, AUFrame, AUSequence, load_catalog, load_catalog_file, parse_au_csv, write_au_csv
from .errors import LesError
from .injector import AuBias, EmotionLevel, inject_sequence
from .space import N_LES, decompose, reconstruct
from .stats import DatasetStats, FeatureTable, build_feature_table, fit_stats, outlier_threshold

__version__ = "0.1.0"
