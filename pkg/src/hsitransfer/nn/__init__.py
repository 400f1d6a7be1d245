"""From-scratch spectral CNN engine (numpy)."""

from hsitransfer.nn.arch import (
    CNN1D,
    PTCNN,
    ArchitectureConfig,
    feature_size,
    is_feasible,
    shape_trace,
)
from hsitransfer.nn.gradcheck import GradCheckReport, grad_check
from hsitransfer.nn.model import (
    ModelParams,
    forward,
    init_params,
    loss_and_gradients,
    reinit_head,
)
from hsitransfer.nn.optim import AdamState, TrainConfig, adam_step
from hsitransfer.nn.train import TrainReport, fit, predict, predict_time, train

__all__ = [
    "CNN1D",
    "PTCNN",
    "AdamState",
    "ArchitectureConfig",
    "GradCheckReport",
    "ModelParams",
    "TrainConfig",
    "TrainReport",
    "adam_step",
    "feature_size",
    "fit",
    "forward",
    "grad_check",
    "init_params",
    "is_feasible",
    "loss_and_gradients",
    "predict",
    "predict_time",
    "reinit_head",
    "shape_trace",
    "train",
]
