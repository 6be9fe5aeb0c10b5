from dataclasses import dataclass

import numpy as np

from src.app.core.errors import ShapeError


@dataclass(frozen=True)
class LossReport:
    mse: float
    mae: float


def loss_mse_mae(pred: np.ndarray, target: np.ndarray) -> LossReport:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError("loss: prediction and target shapes differ", expected=target.shape, got=pred.shape)
    diff = pred - target
    return LossReport(mse=float(np.mean(diff * diff)), mae=float(np.mean(np.abs(diff))))


def mse_gradient(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """d mean((pred - target)^2) / d pred."""
    if pred.shape != target.shape:
        raise ShapeError("loss: prediction and target shapes differ", expected=target.shape, got=pred.shape)
    return 2.0 * (pred - target) / pred.size
