"""Adversarial purification with a logit-update decision rule, on a small numpy autodiff core."""

from alulab.alu import ALUClassifier, DetectionThreshold, LogitRecord, alu_predict, calibrate_threshold, classify, detect
from alulab.attacks import AttackConfig, fgsm, pgd, pipeline_pgd
from alulab.data import Dataset, gen_synthetic
from alulab.errors import (
    ConfigError,
    DataIntegrityError,
    DegenerateInstanceError,
    DimensionError,
    FormatError,
    GraphError,
    NotTrainedError,
    StageError,
)
from alulab.experiment import ExperimentConfig, ResultRecord, run_ablation, sweep
from alulab.models import VAE, LogitClassifier, TrainConfig
from alulab.purifier import LatentPurifier, PurifyConfig, purify
from alulab.tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "ALUClassifier",
    "AttackConfig",
    "ConfigError",
    "DataIntegrityError",
    "Dataset",
    "DegenerateInstanceError",
    "DetectionThreshold",
    "DimensionError",
    "ExperimentConfig",
    "FormatError",
    "GraphError",
    "LatentPurifier",
    "LogitClassifier",
    "LogitRecord",
    "NotTrainedError",
    "PurifyConfig",
    "ResultRecord",
    "StageError",
    "Tensor",
    "TrainConfig",
    "VAE",
    "alu_predict",
    "calibrate_threshold",
    "classify",
    "detect",
    "fgsm",
    "gen_synthetic",
    "pgd",
    "pipeline_pgd",
    "purify",
    "run_ablation",
    "sweep",
]
