"""Adam with decoupled-from-bias L2 regularization.

L2 enters as gradient augmentation g' = g + l2 * w on weight tensors
only; biases are exempt. Standard bias-corrected first/second moments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class TrainHyper:
    epochs: int = 30
    batch_size: int = 4
    learning_rate: float = 1e-4
    l2: float = 5e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> "TrainHyper":
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate <= 0 or self.l2 < 0 or self.adam_eps <= 0:
            raise ValueError("learning_rate and adam_eps must be positive, l2 >= 0")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("adam betas must lie in (0, 1)")
        return self

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_json(cls, d: dict) -> "TrainHyper":
        return cls(**d).validate()


def adam_step(net, hyper: TrainHyper) -> int:
    """One Adam update over all network parameters; returns the new step."""
    net.step += 1
    t = net.step
    b1, b2 = hyper.adam_beta1, hyper.adam_beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for p in net.parameters():
        g = p.grad
        if hyper.l2 > 0 and p.is_weight:
            g = g + hyper.l2 * p.value
        p.m[...] = b1 * p.m + (1.0 - b1) * g
        p.v[...] = b2 * p.v + (1.0 - b2) * (g * g)
        m_hat = p.m / corr1
        v_hat = p.v / corr2
        p.value -= hyper.learning_rate * m_hat / (np.sqrt(v_hat) + hyper.adam_eps)
    return net.step
