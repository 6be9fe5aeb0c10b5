import numpy as np
from scipy.special import expit

from src.app.core.errors import InputError

ACTIVATIONS = ("relu", "elu", "sigmoid", "tanh", "linear")


def _check(name: str) -> None:
    if name not in ACTIVATIONS:
        raise InputError(f"Unknown activation '{name}'. Expected one of {ACTIVATIONS}")


def activate(name: str, z: np.ndarray) -> np.ndarray:
    """Elementwise activation. ELU uses alpha = 1."""
    _check(name)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "elu":
        return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))
    if name == "sigmoid":
        return expit(z)
    if name == "tanh":
        return np.tanh(z)
    return z


def activation_derivative(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """d activation / d z, given both the pre-activation z and the output a."""
    _check(name)
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "elu":
        return np.where(z > 0, 1.0, a + 1.0)
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)
