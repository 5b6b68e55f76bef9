"""Fully-connected spatial-temporal graph networks for multivariate time series.

Built on a small define-by-run autodiff engine over numpy; see
:mod:`fcstg.tensor`.  The usual entry points are :class:`FCSTGNN`,
:func:`train`, :func:`evaluate` and the data helpers.
"""
from .config import ModelConfig, TrainConfig, load_config, parse_config
from .data import Dataset, load_container, synth_dedt, synth_rul, write_container
from .errors import ConfigError, DataError, TrainingDiverged
from .model import FCSTGNN, plan_windows
from .params import load_params, save_params
from .training import evaluate, predict, train

__all__ = [
    "ModelConfig", "TrainConfig", "load_config", "parse_config",
    "Dataset", "load_container", "synth_dedt", "synth_rul", "write_container",
    "ConfigError", "DataError", "TrainingDiverged",
    "FCSTGNN", "plan_windows", "load_params", "save_params",
    "evaluate", "predict", "train",
]
__version__ = "0.1.0"
