"""Adam with bias correction, and the training hyperparameter record."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1024
    learning_rate: float = 1e-3
    epochs: int = 100
    patience: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    loss: str = "categorical_crossentropy"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.loss != "categorical_crossentropy":
            raise ValueError(f"unsupported loss {self.loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def adam_init(params: dict[str, np.ndarray]) -> dict:
    return {
        "t": 0,
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
    }


def adam_step(params: dict, grads: dict, state: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One in-place Adam update of every array in ``params``; returns ``(params, state)``."""
    state["t"] += 1
    t = state["t"]
    corr1 = 1.0 - beta1**t
    corr2 = 1.0 - beta2**t
    for k, p in params.items():
        g = grads[k]
        m = state["m"][k]
        v = state["v"][k]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        p -= (lr * (m / corr1) / (np.sqrt(v / corr2) + eps)).astype(p.dtype)
    return params, state


class Adam:
    def __init__(self, network, cfg: TrainConfig):
        self.network = network
        self.cfg = cfg
        self.state = adam_init(network.named_params())

    def step(self) -> None:
        c = self.cfg
        adam_step(self.network.named_params(), self.network.named_grads(), self.state,
                  c.learning_rate, c.beta1, c.beta2, c.epsilon)
