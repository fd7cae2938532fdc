"""VAE-based multiple instance regression for bag-level yield prediction."""

from .data import Bag, read_jsonl, write_jsonl
from .evaluation import build_splits, r2, rmse, roc_auc, run_experiment, sweep_k
from .mir import (
    METHODS,
    MirConfig,
    cluster_mir_fit,
    fit_method,
    instance_mir_fit,
    mean_fit,
    mean_prototype,
    prime_mir_fit,
    vaemir_fit,
    vaemir_prototype,
)
from .regressor import MlpRegressor, RegressorTrainConfig
from .synth import SynthConfig, generate, oracle_prototype
from .vae import VaeModel, VaeTrainConfig, anomaly_score, anomaly_scores, train_vae

__version__ = "0.1.0"

__all__ = [
    "Bag", "read_jsonl", "write_jsonl",
    "build_splits", "r2", "rmse", "roc_auc", "run_experiment", "sweep_k",
    "METHODS", "MirConfig", "cluster_mir_fit", "fit_method", "instance_mir_fit", "mean_fit",
    "mean_prototype", "prime_mir_fit", "vaemir_fit", "vaemir_prototype",
    "MlpRegressor", "RegressorTrainConfig",
    "SynthConfig", "generate", "oracle_prototype",
    "VaeModel", "VaeTrainConfig", "anomaly_score", "anomaly_scores", "train_vae",
]
