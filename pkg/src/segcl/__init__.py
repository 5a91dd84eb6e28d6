"""Continual-learning engine for multi-class segmentation across shifted
domains: importance-weighted regularization strategies, a sequential-domain
trainer, the CL metric suite, and a deterministic synthetic benchmark."""

from ._kernels import backend_name
from .datasets import DomainDataset, ShiftSpec, default_four_domain_suite, generate_domain
from .importance import ImportanceMap, accumulate, aggregate, clip_outliers_iqr, normalize_unit
from .metrics import CLMetrics, TrainTestMatrix, cl_metrics, dice_score
from .network import ParameterStore, SegNet, SegNetConfig, build_segnet
from .regularization import FreezeMask, StrategyConfig
from .trainer import SequenceResult, TrainSchedule, run_sequence, train_domain

__version__ = "0.1.0"

__all__ = [
    "CLMetrics",
    "DomainDataset",
    "FreezeMask",
    "ImportanceMap",
    "ParameterStore",
    "SegNet",
    "SegNetConfig",
    "SequenceResult",
    "ShiftSpec",
    "StrategyConfig",
    "TrainSchedule",
    "TrainTestMatrix",
    "accumulate",
    "aggregate",
    "backend_name",
    "build_segnet",
    "cl_metrics",
    "clip_outliers_iqr",
    "default_four_domain_suite",
    "dice_score",
    "generate_domain",
    "normalize_unit",
    "run_sequence",
    "train_domain",
    "__version__",
]
