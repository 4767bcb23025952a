"""Multi-scale recurrent convolutional network for price-trend classification."""

from .backtest import BacktestLedger, buy_and_hold, simulate
from .data import LabeledDataset, TimeSeries, Trend, select_threshold, slice_windows, synth_series
from .estimator import MSTDRCNNClassifier
from .model import ModelConfig, ModelParams
from .train import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train

__all__ = [
    "BacktestLedger",
    "Checkpoint",
    "LabeledDataset",
    "MSTDRCNNClassifier",
    "ModelConfig",
    "ModelParams",
    "TimeSeries",
    "TrainConfig",
    "Trend",
    "buy_and_hold",
    "load_checkpoint",
    "save_checkpoint",
    "select_threshold",
    "simulate",
    "slice_windows",
    "synth_series",
    "train",
]

__version__ = "0.1.0"
