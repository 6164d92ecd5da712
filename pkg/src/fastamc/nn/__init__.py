from .gradcheck import GradCheckReport, analytic_gradients, compare_gradients, grad_check
from .layers import ShapeError, lstm_cell_step
from .network import LayerSpec, Network, NetworkSpec, cross_entropy, infer_shapes
from .optim import Adam, TrainConfig, adam_init, adam_step

__all__ = [
    "Adam", "GradCheckReport", "LayerSpec", "Network", "NetworkSpec", "ShapeError", "TrainConfig",
    "adam_init", "adam_step", "analytic_gradients", "compare_gradients", "cross_entropy",
    "grad_check", "infer_shapes", "lstm_cell_step",
]
