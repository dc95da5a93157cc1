from __future__ import annotations

import typing as t

import numpy as np

from .tensor import Tensor


class Adam:
    """Adam with bias correction. Moment estimates are kept in 64-bit and the
    updated values are cast back to each parameter's storage precision.

    Only the tensors passed here are ever modified. Prototypes are plain arrays
    owned by the prototype bank and are never given to an optimizer.

    :param params: Trainable tensors.
    :param lr: Step size.
    :param betas: Decay rates of the first and second moment estimates.
    :param eps: Added to the denominator.
    """

    def __init__(
        self,
        params: t.Iterable[Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> None:
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros(p.shape, dtype=np.float64) for p in self.params]
        self._v = [np.zeros(p.shape, dtype=np.float64) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        beta1, beta2 = self.betas
        correction1 = 1.0 - beta1**self.step_count
        correction2 = 1.0 - beta2**self.step_count

        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue

            m *= beta1
            m += (1.0 - beta1) * p.grad
            v *= beta2
            v += (1.0 - beta2) * p.grad * p.grad
            update = self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            p.data = (p.data.astype(np.float64) - update).astype(p.dtype)
