"""Adam with bias correction, plus the linear decay schedule used in training."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss; the run is aborted."""


class Adam:
    """Adam over a dict of named parameter tensors.

    Moment estimates live here, keyed by parameter name, so the state can
    be inspected and is stable across runs.  step() reads each parameter's
    .grad (a missing grad counts as zero, which leaves the parameter
    unchanged) and updates data in place.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float | None = None) -> None:
        if lr is None:
            lr = self.lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def linear_decay(base_lr: float, step: int, total_steps: int) -> float:
    """Learning rate decayed linearly from base_lr toward zero.

    step counts from 0; the first step runs at base_lr and the rate hits
    zero exactly when step == total_steps.
    """
    if total_steps <= 0:
        return base_lr
    return base_lr * max(0.0, 1.0 - step / total_steps)
