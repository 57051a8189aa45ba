"""Conformal prediction sets that stay valid under adversarial attack."""

from .attacks import AttackSpec, apply_attack
from .conformal import (CalibrationResult, calibrate_conservative, calibrate_known_attack, conformal_quantile,
                        evaluate_pipeline, prediction_set)
from .dataio import Dataset, generate_synthetic, stratified_split
from .game import MixedStrategy, PayoffMatrix, lp_minimax, solve_zero_sum
from .metrics import coverage, mean_size, sscv
from .model import AggregateClassifier, Classifier, TrainConfig, train
from .scores import ScoreSpec, score, score_all_labels

__version__ = "0.1.0"

__all__ = [
    "AggregateClassifier", "AttackSpec", "CalibrationResult", "Classifier", "Dataset", "MixedStrategy",
    "PayoffMatrix", "ScoreSpec", "TrainConfig", "apply_attack", "calibrate_conservative",
    "calibrate_known_attack", "conformal_quantile", "coverage", "evaluate_pipeline", "generate_synthetic", "lp_minimax",
    "mean_size", "prediction_set", "score", "score_all_labels", "solve_zero_sum", "sscv", "stratified_split", "train",
]
