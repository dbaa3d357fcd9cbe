"""Balanced graph structure learning with diffusion-convolutional GRU forecasting."""

from .config import TrainConfig
from .data import MtsDataset, load, zscore_fit_apply
from .graph import f_bump, sparsity_report, ssu_forward, ssu_grad, thresholds
from .model import BGSLF, count_parameters
from .selection import cosine_frobenius, select_graph
from .tensor import Tensor, backward, custom_unary, finite_diff_check
from .training import evaluate, historical_average, train

__version__ = "0.1.0"

__all__ = [
    "BGSLF", "MtsDataset", "Tensor", "TrainConfig", "backward", "cosine_frobenius", "count_parameters",
    "custom_unary", "evaluate", "f_bump", "finite_diff_check", "historical_average", "load",
    "select_graph", "sparsity_report", "ssu_forward", "ssu_grad", "thresholds", "train",
    "zscore_fit_apply",
]
