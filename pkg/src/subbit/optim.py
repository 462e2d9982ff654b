"""SGD with momentum, weight decay, and a cosine learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from subbit.autograd import Tensor


@dataclass
class TrainConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 32
    epochs: int = 20
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def cosine_lr(lr0: float, epoch: int, epochs: int) -> float:
    return 0.5 * lr0 * (1.0 + np.cos(np.pi * epoch / epochs))


class SGD:
    """Momentum SGD; `no_decay` params skip weight decay (codebook tensors)."""

    def __init__(self, params: list[Tensor], config: TrainConfig,
                 no_decay: set[int] | None = None):
        self.params = params
        self.cfg = config
        self.no_decay = no_decay or set()
        self.buffers = [np.zeros_like(p.data) for p in params]
        self.lr = config.lr

    def set_epoch(self, epoch: int):
        self.lr = cosine_lr(self.cfg.lr, epoch, self.cfg.epochs)

    def step(self):
        for p, buf in zip(self.params, self.buffers):
            if p.grad is None:
                continue
            g = p.grad
            if self.cfg.weight_decay and id(p) not in self.no_decay:
                g = g + self.cfg.weight_decay * p.data
            buf *= self.cfg.momentum
            buf += g
            p.data -= self.lr * buf

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state_arrays(self) -> list[np.ndarray]:
        return self.buffers

    def load_state_arrays(self, arrays: list[np.ndarray]):
        for buf, arr in zip(self.buffers, arrays):
            buf[...] = arr
