"""Prior-knowledge-input (PKI) classification of APT network flows."""

from .config import ExperimentConfig, load_config
from .dataset import Dataset, SplitSpec, stratified_split
from .errors import ConfigError, DataError, PkiError, SweepError
from .pki import PkiModel, pki_train, progressive_pki_train
from .runner import Experiment, emit_report
from .synthetic import SyntheticSpec, generate_synthetic

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "Dataset",
    "Experiment",
    "ExperimentConfig",
    "PkiError",
    "PkiModel",
    "SplitSpec",
    "SweepError",
    "SyntheticSpec",
    "emit_report",
    "generate_synthetic",
    "load_config",
    "pki_train",
    "progressive_pki_train",
    "stratified_split",
]
