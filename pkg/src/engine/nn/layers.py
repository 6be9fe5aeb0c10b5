"""
Neural layers on float64 numpy arrays with hand-written backward passes.

Every op accepts a single sample ((C,H,W) for images, (F,) for vectors) or a
batch with a leading N axis, and returns the same rank it was given.
Convolutions go through im2col: a strided sliding-window view of the padded
input, one matmul against the flattened kernels, and a k*k slice-add loop
(col2im) on the way back.
"""
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.app.core.errors import InputError, ShapeError
from src.engine.nn.activations import activate, activation_derivative


# ==========================================
# PARAMETERS
# ==========================================

@dataclass
class LayerParams:
    """Weights, biases, their gradient accumulators and Adam moments."""
    weights: np.ndarray
    biases: np.ndarray
    role: str = "layer"
    step: int = 0
    grad_weights: np.ndarray = field(init=False)
    grad_biases: np.ndarray = field(init=False)
    m_weights: np.ndarray = field(init=False)
    m_biases: np.ndarray = field(init=False)
    v_weights: np.ndarray = field(init=False)
    v_biases: np.ndarray = field(init=False)

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.biases = np.ascontiguousarray(self.biases, dtype=np.float64)
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_biases = np.zeros_like(self.biases)
        self.m_weights = np.zeros_like(self.weights)
        self.m_biases = np.zeros_like(self.biases)
        self.v_weights = np.zeros_like(self.weights)
        self.v_biases = np.zeros_like(self.biases)

    @classmethod
    def glorot(cls, rng: np.random.Generator, weight_shape, fan_in: int, fan_out: int, role: str,
               bias_size: Optional[int] = None) -> "LayerParams":
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights = rng.uniform(-limit, limit, size=weight_shape)
        biases = np.zeros(weight_shape[0] if bias_size is None else bias_size)
        return cls(weights=weights, biases=biases, role=role)

    def zero_grad(self) -> None:
        self.grad_weights.fill(0.0)
        self.grad_biases.fill(0.0)

    def copy(self) -> "LayerParams":
        clone = LayerParams(self.weights.copy(), self.biases.copy(), role=self.role, step=self.step)
        clone.m_weights = self.m_weights.copy()
        clone.m_biases = self.m_biases.copy()
        clone.v_weights = self.v_weights.copy()
        clone.v_biases = self.v_biases.copy()
        return clone


def _as_batch(x: np.ndarray, sample_rank: int, what: str) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == sample_rank:
        return x[None, ...], True
    if x.ndim == sample_rank + 1:
        return x, False
    raise ShapeError(f"{what}: expected rank {sample_rank} or {sample_rank + 1} input", got=x.shape)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


# ==========================================
# IM2COL / COL2IM
# ==========================================

def _im2col(xp: np.ndarray, k: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """(N,C,Hp,Wp) -> (N,out_h,out_w,C*k*k)."""
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    windows = windows[:, :, :out_h, :out_w]
    n, c = xp.shape[:2]
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, out_h, out_w, c * k * k)


def _col2im(cols: np.ndarray, padded_shape, k: int, stride: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add (N,Ho,Wo,C*k*k) back onto (N,C,Hp,Wp)."""
    n, out_h, out_w, _ = cols.shape
    c = padded_shape[1]
    cols = cols.reshape(n, out_h, out_w, c, k, k)
    out = np.zeros(padded_shape, dtype=np.float64)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += cols[..., i, j].transpose(0, 3, 1, 2)
    return out


# ==========================================
# CONV2D
# ==========================================

def _conv_forward_cached(x4: np.ndarray, params: LayerParams, stride: int, padding: int, activation: str):
    c_out, c_in, kh, kw = params.weights.shape
    if kh != kw:
        raise ShapeError("conv2d: only square kernels are supported", got=params.weights.shape)
    if x4.shape[1] != c_in:
        raise ShapeError("conv2d: input channels do not match kernel", expected=(c_in,), got=(x4.shape[1],))
    if stride < 1 or padding < 0:
        raise InputError(f"conv2d: invalid stride {stride} / padding {padding}")
    hp, wp = x4.shape[2] + 2 * padding, x4.shape[3] + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError("conv2d: kernel larger than padded input", expected=(kh, kw), got=(hp, wp))
    xp = np.pad(x4, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_h = conv_output_size(x4.shape[2], kh, stride, padding)
    out_w = conv_output_size(x4.shape[3], kw, stride, padding)
    cols = _im2col(xp, kh, stride, out_h, out_w)
    w_mat = params.weights.reshape(c_out, -1)
    z = (cols @ w_mat.T + params.biases).transpose(0, 3, 1, 2)
    a = activate(activation, z)
    cache = {"cols": cols, "z": z, "a": a, "padded_shape": xp.shape, "input_shape": x4.shape,
             "stride": stride, "padding": padding, "activation": activation}
    return a, cache


def _conv_backward_cached(cache: dict, params: LayerParams, upstream4: np.ndarray) -> np.ndarray:
    if upstream4.shape != cache["z"].shape:
        raise ShapeError("conv2d backward: upstream gradient does not match output", expected=cache["z"].shape, got=upstream4.shape)
    c_out, _, k, _ = params.weights.shape
    dz = upstream4 * activation_derivative(cache["activation"], cache["z"], cache["a"])
    dz_t = dz.transpose(0, 2, 3, 1)
    cols = cache["cols"]
    params.grad_weights += np.einsum("nhwo,nhwk->ok", dz_t, cols).reshape(params.weights.shape)
    params.grad_biases += dz.sum(axis=(0, 2, 3))
    dcols = dz_t @ params.weights.reshape(c_out, -1)
    dxp = _col2im(dcols, cache["padded_shape"], k, cache["stride"])
    p = cache["padding"]
    h, w = cache["input_shape"][2:]
    return dxp[:, :, p:p + h, p:p + w]


def conv2d_forward(x: np.ndarray, params: LayerParams, stride: int = 1, padding: int = 0, activation: str = "linear") -> np.ndarray:
    x4, single = _as_batch(x, 3, "conv2d")
    a, _ = _conv_forward_cached(x4, params, stride, padding, activation)
    return a[0] if single else a


def conv2d_backward(x: np.ndarray, params: LayerParams, upstream_grad: np.ndarray, stride: int = 1, padding: int = 0, activation: str = "linear") -> np.ndarray:
    """Accumulates dL/dW and dL/db into params and returns dL/dx."""
    x4, single = _as_batch(x, 3, "conv2d")
    up4, _ = _as_batch(upstream_grad, 3, "conv2d backward")
    _, cache = _conv_forward_cached(x4, params, stride, padding, activation)
    dx = _conv_backward_cached(cache, params, up4)
    return dx[0] if single else dx


# ==========================================
# TRANSPOSED CONV2D (adjoint of a strided conv)
# ==========================================

def _convT_forward_cached(x4: np.ndarray, params: LayerParams, stride: int, padding: int, out_hw, activation: str):
    c_in, c_out, k, _ = params.weights.shape
    if x4.shape[1] != c_in:
        raise ShapeError("conv_transpose2d: input channels do not match kernel", expected=(c_in,), got=(x4.shape[1],))
    n, _, h_in, w_in = x4.shape
    out_h, out_w = out_hw
    if conv_output_size(out_h, k, stride, padding) != h_in or conv_output_size(out_w, k, stride, padding) != w_in:
        raise ShapeError("conv_transpose2d: target shape is not the preimage of the input under the strided conv",
                         expected=(h_in, w_in), got=(out_h, out_w))
    hp = max(out_h + 2 * padding, stride * (h_in - 1) + k)
    wp = max(out_w + 2 * padding, stride * (w_in - 1) + k)
    x_t = x4.transpose(0, 2, 3, 1)
    cols = x_t @ params.weights.reshape(c_in, -1)
    full = _col2im(cols, (n, c_out, hp, wp), k, stride)
    z = full[:, :, padding:padding + out_h, padding:padding + out_w] + params.biases[None, :, None, None]
    a = activate(activation, z)
    cache = {"x_t": x_t, "z": z, "a": a, "padded_shape": (n, c_out, hp, wp), "in_hw": (h_in, w_in),
             "stride": stride, "padding": padding, "activation": activation}
    return a, cache


def _convT_backward_cached(cache: dict, params: LayerParams, upstream4: np.ndarray) -> np.ndarray:
    if upstream4.shape != cache["z"].shape:
        raise ShapeError("conv_transpose2d backward: upstream gradient does not match output", expected=cache["z"].shape, got=upstream4.shape)
    c_in, _, k, _ = params.weights.shape
    dz = upstream4 * activation_derivative(cache["activation"], cache["z"], cache["a"])
    params.grad_biases += dz.sum(axis=(0, 2, 3))
    p = cache["padding"]
    _, _, hp, wp = cache["padded_shape"]
    dz_p = np.zeros(cache["padded_shape"], dtype=np.float64)
    dz_p[:, :, p:p + dz.shape[2], p:p + dz.shape[3]] = dz
    h_in, w_in = cache["in_hw"]
    dcols = _im2col(dz_p, k, cache["stride"], h_in, w_in)
    params.grad_weights += np.einsum("nhwi,nhwk->ik", cache["x_t"], dcols).reshape(params.weights.shape)
    dx_t = dcols @ params.weights.reshape(c_in, -1).T
    return dx_t.transpose(0, 3, 1, 2)


def conv_transpose2d_forward(x: np.ndarray, params: LayerParams, out_hw, stride: int = 2, padding: int = 1, activation: str = "linear") -> np.ndarray:
    x4, single = _as_batch(x, 3, "conv_transpose2d")
    a, _ = _convT_forward_cached(x4, params, stride, padding, out_hw, activation)
    return a[0] if single else a


def conv_transpose2d_backward(x: np.ndarray, params: LayerParams, upstream_grad: np.ndarray, out_hw, stride: int = 2, padding: int = 1, activation: str = "linear") -> np.ndarray:
    x4, single = _as_batch(x, 3, "conv_transpose2d")
    up4, _ = _as_batch(upstream_grad, 3, "conv_transpose2d backward")
    _, cache = _convT_forward_cached(x4, params, stride, padding, out_hw, activation)
    dx = _convT_backward_cached(cache, params, up4)
    return dx[0] if single else dx


# ==========================================
# DENSE
# ==========================================

def _dense_forward_cached(x2: np.ndarray, params: LayerParams, activation: str):
    out_dim, in_dim = params.weights.shape
    if x2.shape[1] != in_dim:
        raise ShapeError("dense: input length does not match weights", expected=(in_dim,), got=(x2.shape[1],))
    z = x2 @ params.weights.T + params.biases
    a = activate(activation, z)
    return a, {"x": x2, "z": z, "a": a, "activation": activation}


def _dense_backward_cached(cache: dict, params: LayerParams, upstream2: np.ndarray) -> np.ndarray:
    if upstream2.shape != cache["z"].shape:
        raise ShapeError("dense backward: upstream gradient does not match output", expected=cache["z"].shape, got=upstream2.shape)
    dz = upstream2 * activation_derivative(cache["activation"], cache["z"], cache["a"])
    params.grad_weights += dz.T @ cache["x"]
    params.grad_biases += dz.sum(axis=0)
    return dz @ params.weights


def dense_forward(x: np.ndarray, params: LayerParams, activation: str = "linear") -> np.ndarray:
    x2, single = _as_batch(x, 1, "dense")
    a, _ = _dense_forward_cached(x2, params, activation)
    return a[0] if single else a


def dense_backward(x: np.ndarray, params: LayerParams, upstream_grad: np.ndarray, activation: str = "linear") -> np.ndarray:
    x2, single = _as_batch(x, 1, "dense")
    up2, _ = _as_batch(upstream_grad, 1, "dense backward")
    _, cache = _dense_forward_cached(x2, params, activation)
    dx = _dense_backward_cached(cache, params, up2)
    return dx[0] if single else dx


# ==========================================
# NEAREST UPSAMPLE (x2, then crop)
# ==========================================

def upsample2d_forward(x: np.ndarray, out_hw) -> np.ndarray:
    x4, single = _as_batch(x, 3, "upsample2d")
    out_h, out_w = out_hw
    h, w = x4.shape[2:]
    if not (2 * h - 1 <= out_h <= 2 * h and 2 * w - 1 <= out_w <= 2 * w):
        raise ShapeError("upsample2d: crop target must be within one pixel of twice the input", expected=(2 * h, 2 * w), got=(out_h, out_w))
    up = x4.repeat(2, axis=2).repeat(2, axis=3)[:, :, :out_h, :out_w]
    return up[0] if single else up


def upsample2d_backward(upstream_grad: np.ndarray, in_hw) -> np.ndarray:
    g4, single = _as_batch(upstream_grad, 3, "upsample2d backward")
    h, w = in_hw
    n, c, out_h, out_w = g4.shape
    full = np.zeros((n, c, 2 * h, 2 * w), dtype=np.float64)
    full[:, :, :out_h, :out_w] = g4
    dx = full.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))
    return dx[0] if single else dx


# ==========================================
# LAYER OBJECTS (cache activations between forward and backward)
# ==========================================

class Conv2D:
    def __init__(self, params: LayerParams, stride: int = 1, padding: Optional[int] = None, activation: str = "relu"):
        self.params = params
        self.stride = stride
        self.kernel = params.weights.shape[-1]
        self.padding = self.kernel // 2 if padding is None else padding
        self.activation = activation
        self._cache = None

    @classmethod
    def create(cls, rng, c_in: int, c_out: int, kernel: int, stride: int, activation: str, role: str) -> "Conv2D":
        params = LayerParams.glorot(rng, (c_out, c_in, kernel, kernel), c_in * kernel * kernel, c_out * kernel * kernel, role)
        return cls(params, stride=stride, activation=activation)

    def output_hw(self, hw) -> Tuple[int, int]:
        return tuple(conv_output_size(s, self.kernel, self.stride, self.padding) for s in hw)

    def forward(self, x4: np.ndarray, training: bool = False) -> np.ndarray:
        a, cache = _conv_forward_cached(x4, self.params, self.stride, self.padding, self.activation)
        if training:
            self._cache = cache
        return a

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise InputError(f"{self.params.role}: backward called without a training forward pass")
        return _conv_backward_cached(self._cache, self.params, upstream)


class ConvTranspose2D:
    def __init__(self, params: LayerParams, stride: int = 2, padding: Optional[int] = None, activation: str = "relu"):
        self.params = params
        self.stride = stride
        self.kernel = params.weights.shape[-1]
        self.padding = self.kernel // 2 if padding is None else padding
        self.activation = activation
        self._cache = None

    @classmethod
    def create(cls, rng, c_in: int, c_out: int, kernel: int, activation: str, role: str) -> "ConvTranspose2D":
        params = LayerParams.glorot(rng, (c_in, c_out, kernel, kernel), c_in * kernel * kernel, c_out * kernel * kernel, role,
                                    bias_size=c_out)
        return cls(params, activation=activation)

    def forward(self, x4: np.ndarray, out_hw, training: bool = False) -> np.ndarray:
        a, cache = _convT_forward_cached(x4, self.params, self.stride, self.padding, out_hw, self.activation)
        if training:
            self._cache = cache
        return a

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise InputError(f"{self.params.role}: backward called without a training forward pass")
        return _convT_backward_cached(self._cache, self.params, upstream)


class Dense:
    def __init__(self, params: LayerParams, activation: str = "linear"):
        self.params = params
        self.activation = activation
        self._cache = None

    @classmethod
    def create(cls, rng, in_dim: int, out_dim: int, activation: str, role: str) -> "Dense":
        params = LayerParams.glorot(rng, (out_dim, in_dim), in_dim, out_dim, role)
        return cls(params, activation=activation)

    def forward(self, x2: np.ndarray, training: bool = False) -> np.ndarray:
        a, cache = _dense_forward_cached(x2, self.params, self.activation)
        if training:
            self._cache = cache
        return a

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise InputError(f"{self.params.role}: backward called without a training forward pass")
        return _dense_backward_cached(self._cache, self.params, upstream)


class Upsample2D:
    """Parameter-free nearest x2 upsample with a crop to a recorded encoder shape."""

    def __init__(self, out_hw):
        self.out_hw = tuple(out_hw)
        self._in_hw = None

    def forward(self, x4: np.ndarray, training: bool = False) -> np.ndarray:
        if training:
            self._in_hw = x4.shape[2:]
        return upsample2d_forward(x4, self.out_hw)

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        return upsample2d_backward(upstream, self._in_hw)
