"""History-aware neural operators for path-dependent constitutive response."""

from . import errors
from .constitutive import (
    ElastoplasticParams,
    HashinModel,
    HashinParams,
    PathConfig,
    generate_sequences,
    simulate_sequence,
)
from .dataio import ChannelNormalizer, StrainStressSequence, read_dataset, write_dataset
from .estimator import HistoryOperatorRegressor
from .evalx import ExperimentReport, nrmse
from .nopcore import ModelSpec, build_model, load_checkpoint, save_checkpoint
from .rollout import ElastoplasticOracle, RolloutRequest, TorchPredictor, rollout
from .trainer import TrainConfig, fit

__version__ = "0.1.0"

__all__ = [
    "ChannelNormalizer",
    "ElastoplasticOracle",
    "ElastoplasticParams",
    "ExperimentReport",
    "HashinModel",
    "HashinParams",
    "HistoryOperatorRegressor",
    "ModelSpec",
    "PathConfig",
    "RolloutRequest",
    "StrainStressSequence",
    "TorchPredictor",
    "TrainConfig",
    "build_model",
    "errors",
    "fit",
    "generate_sequences",
    "load_checkpoint",
    "nrmse",
    "read_dataset",
    "rollout",
    "save_checkpoint",
    "simulate_sequence",
    "write_dataset",
]
