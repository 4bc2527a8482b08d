"""Bayesian LSTM surrogate of nodal thermal histories."""

from .data import WindowDataset, compute_stats, make_windows, split_groups
from .layers import attention_pool, lstm_cell_forward
from .model import BayesianLSTM, FeatureWindow, ModelConfig, NormStats, forward
from .predict import (
    PredictionBand,
    predict_mc,
    rollout,
    rollout_history,
    teacher_forced_history,
    width_by_steps_ahead,
)
from .training import ElboTerms, TrainConfig, TrainResult, elbo_loss, evaluate_r2, r2_score, train

__all__ = [
    "BayesianLSTM",
    "ModelConfig",
    "NormStats",
    "FeatureWindow",
    "WindowDataset",
    "PredictionBand",
    "ElboTerms",
    "TrainConfig",
    "TrainResult",
    "forward",
    "lstm_cell_forward",
    "attention_pool",
    "make_windows",
    "compute_stats",
    "split_groups",
    "elbo_loss",
    "train",
    "evaluate_r2",
    "r2_score",
    "predict_mc",
    "width_by_steps_ahead",
    "rollout",
    "rollout_history",
    "teacher_forced_history",
]
