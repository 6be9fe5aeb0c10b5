import logging
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from src.app.core.errors import NumericalError
from src.engine.nn.layers import LayerParams

logger = logging.getLogger(__name__)


def adam_step(params: LayerParams, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> LayerParams:
    """
    One bias-corrected Adam update, in place.
    Zeroes the gradient accumulators afterwards and bumps the step counter.
    """
    if not (np.all(np.isfinite(params.grad_weights)) and np.all(np.isfinite(params.grad_biases))):
        raise NumericalError("Non-finite gradient", layer=params.role)

    params.step += 1
    t = params.step
    for value, grad, m, v in (
        (params.weights, params.grad_weights, params.m_weights, params.v_weights),
        (params.biases, params.grad_biases, params.m_biases, params.v_biases),
    ):
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        value -= lr * m_hat / (np.sqrt(v_hat) + eps)

    params.zero_grad()
    return params


@dataclass
class AdamOptimizer:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def step(self, all_params: Iterable[LayerParams]) -> None:
        for params in all_params:
            adam_step(params, self.lr, self.beta1, self.beta2, self.eps)
