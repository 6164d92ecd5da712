"""Experiment orchestration: configs, training, evaluation reports, sweeps and the CLI."""

from .config import ConfigError, ExperimentConfig, PreprocessSpec, SnrPolicy, default_train_config, load_config
from .evaluate import EvalReport, ReportError, evaluate, read_report, report_from_predictions, write_csv, write_report
from .pipeline import Preprocessor, fit_preprocessor
from .runtime import compute_threads
from .sweep import ReductionSweep, SnrSweep, sweep_reduction, sweep_snr_selection
from .train import FitResult, TrainedModel, TrainingError, fit, load_splits, train_model

__all__ = [
    "ConfigError", "EvalReport", "ExperimentConfig", "FitResult", "PreprocessSpec", "Preprocessor",
    "ReductionSweep", "ReportError", "SnrPolicy", "SnrSweep", "TrainedModel", "TrainingError",
    "compute_threads", "default_train_config", "evaluate", "fit", "fit_preprocessor", "load_config",
    "load_splits", "read_report", "report_from_predictions", "sweep_reduction", "sweep_snr_selection",
    "train_model", "write_csv", "write_report",
]
