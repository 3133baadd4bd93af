"""Truncated Fock-space simulation and training of a continuous-variable quantum recurrent network."""

__version__ = "0.1.0"

from .channels import DataNoiseSpec, LossSpec
from .datasets import generate_series, load_mnist
from .gates import LayerParams, param_count
from .qrnn import QRNNConfig, QRNNModel, forecast, run_sequence, step
from .training import CostSpec, TrainConfig, train

__all__ = [
    "CostSpec",
    "DataNoiseSpec",
    "LayerParams",
    "LossSpec",
    "QRNNConfig",
    "QRNNModel",
    "TrainConfig",
    "forecast",
    "generate_series",
    "load_mnist",
    "param_count",
    "run_sequence",
    "step",
    "train",
]
