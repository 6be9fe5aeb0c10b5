"""
Single-layer LSTM surrogate advancing the latent state by one step.

Gates (all weights laid out as [U | W] over the concatenation [h_t, u]):
    d = sigmoid(b_d + U_d h + W_d u)          forget
    c = sigmoid(b_c + U_c h + W_c u)          input
    g = tanh(b_g + U_g h + W_g u)             candidate
    o = sigmoid(b_o + U_o h + W_o u)          output
    s' = d * s + c * g
    u' = tanh(s') * o
The last hidden vector goes through a dense projection (relu, elu or linear)
back to the latent size.
"""
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import expit

from src.app.core.errors import InputError, NumericalError, ShapeError
from src.data.dataset import SequenceSample, stack_samples
from src.engine.nn.activations import activate, activation_derivative
from src.engine.nn.layers import LayerParams
from src.engine.nn.losses import LossReport, loss_mse_mae, mse_gradient
from src.engine.nn.optim import AdamOptimizer
from src.engine.nn.weights_io import load_weights, save_weights

logger = logging.getLogger(__name__)

GATES = ("forget", "input", "candidate", "output")


@dataclass
class LstmState:
    u: np.ndarray
    s: np.ndarray

    @classmethod
    def zeros(cls, hidden: int, batch: Optional[int] = None) -> "LstmState":
        shape = (hidden,) if batch is None else (batch, hidden)
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class LstmWeights:
    latent_dim: int
    hidden: int
    steps: int
    activation: str
    gates: Dict[str, LayerParams]
    projection: LayerParams

    @classmethod
    def initialize(cls, latent_dim: int, hidden: int, steps: int, activation: str = "elu",
                   rng: Optional[np.random.Generator] = None) -> "LstmWeights":
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = latent_dim + hidden
        gates = {name: LayerParams.glorot(rng, (hidden, fan_in), fan_in, hidden, f"lstm.{name}") for name in GATES}
        projection = LayerParams.glorot(rng, (latent_dim, hidden), hidden, latent_dim, "lstm.projection")
        return cls(latent_dim, hidden, steps, activation, gates, projection)

    @classmethod
    def zeros(cls, latent_dim: int, hidden: int, steps: int, activation: str = "linear") -> "LstmWeights":
        gates = {name: LayerParams(np.zeros((hidden, latent_dim + hidden)), np.zeros(hidden), role=f"lstm.{name}") for name in GATES}
        projection = LayerParams(np.zeros((latent_dim, hidden)), np.zeros(latent_dim), role="lstm.projection")
        return cls(latent_dim, hidden, steps, activation, gates, projection)

    def parameters(self) -> List[LayerParams]:
        return [self.gates[name] for name in GATES] + [self.projection]

    def copy(self) -> "LstmWeights":
        return LstmWeights(self.latent_dim, self.hidden, self.steps, self.activation,
                           {k: v.copy() for k, v in self.gates.items()}, self.projection.copy())

    def to_header(self) -> dict:
        return {"kind": "lstm", "latent_dim": self.latent_dim, "hidden": self.hidden,
                "steps": self.steps, "activation": self.activation}


# ==========================================
# CELL & FORECAST
# ==========================================

def _gate_values(weights: LstmWeights, x_cat: np.ndarray) -> Dict[str, np.ndarray]:
    values = {}
    for name in GATES:
        p = weights.gates[name]
        z = x_cat @ p.weights.T + p.biases
        values[name] = np.tanh(z) if name == "candidate" else expit(z)
    return values


def lstm_cell(weights: LstmWeights, h: np.ndarray, state: LstmState) -> LstmState:
    """One step of the cell; pure in the weights, state threaded explicitly."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != weights.latent_dim:
        raise ShapeError("lstm_cell: input length does not match the latent size", expected=(weights.latent_dim,), got=h.shape)
    if state.u.shape[-1] != weights.hidden or state.s.shape != state.u.shape:
        raise ShapeError("lstm_cell: state does not match the hidden size", expected=(weights.hidden,), got=state.u.shape)
    g = _gate_values(weights, np.concatenate([h, state.u], axis=-1))
    s_next = g["forget"] * state.s + g["input"] * g["candidate"]
    return LstmState(u=np.tanh(s_next) * g["output"], s=s_next)


def forecast(weights: LstmWeights, window: np.ndarray) -> np.ndarray:
    """Runs the cell over a (q, p) window from a zero state and projects to p."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape != (weights.steps, weights.latent_dim):
        raise ShapeError("forecast: window must be (q, p)", expected=(weights.steps, weights.latent_dim), got=window.shape)
    state = LstmState.zeros(weights.hidden)
    for h in window:
        state = lstm_cell(weights, h, state)
    p = weights.projection
    return activate(weights.activation, p.weights @ state.u + p.biases)


def forecast_batch(weights: LstmWeights, windows: np.ndarray) -> np.ndarray:
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3 or windows.shape[1:] != (weights.steps, weights.latent_dim):
        raise ShapeError("forecast: windows must be (N, q, p)", expected=(weights.steps, weights.latent_dim), got=windows.shape[1:])
    state = LstmState.zeros(weights.hidden, len(windows))
    for t in range(weights.steps):
        state = lstm_cell(weights, windows[:, t], state)
    p = weights.projection
    return activate(weights.activation, state.u @ p.weights.T + p.biases)


# ==========================================
# BACKPROPAGATION THROUGH TIME
# ==========================================

def loss_and_gradients(weights: LstmWeights, windows: np.ndarray, targets: np.ndarray) -> LossReport:
    """MSE of the one-step forecast over a batch; accumulates BPTT gradients."""
    n, q, p_dim = windows.shape
    hidden = weights.hidden
    u = np.zeros((n, hidden))
    s = np.zeros((n, hidden))
    tape = []
    for t in range(q):
        x_cat = np.concatenate([windows[:, t], u], axis=1)
        g = _gate_values(weights, x_cat)
        s_prev = s
        s = g["forget"] * s_prev + g["input"] * g["candidate"]
        tanh_s = np.tanh(s)
        u = tanh_s * g["output"]
        tape.append((x_cat, g, s_prev, tanh_s))

    proj = weights.projection
    z = u @ proj.weights.T + proj.biases
    y = activate(weights.activation, z)
    report = loss_mse_mae(y, targets)

    dz = mse_gradient(y, targets) * activation_derivative(weights.activation, z, y)
    proj.grad_weights += dz.T @ u
    proj.grad_biases += dz.sum(axis=0)
    du = dz @ proj.weights
    ds = np.zeros((n, hidden))
    for x_cat, g, s_prev, tanh_s in reversed(tape):
        ds = ds + du * g["output"] * (1.0 - tanh_s * tanh_s)
        dz_gate = {
            "output": du * tanh_s * g["output"] * (1.0 - g["output"]),
            "forget": ds * s_prev * g["forget"] * (1.0 - g["forget"]),
            "input": ds * g["candidate"] * g["input"] * (1.0 - g["input"]),
            "candidate": ds * g["input"] * (1.0 - g["candidate"] ** 2),
        }
        dx_cat = np.zeros_like(x_cat)
        for name in GATES:
            params = weights.gates[name]
            params.grad_weights += dz_gate[name].T @ x_cat
            params.grad_biases += dz_gate[name].sum(axis=0)
            dx_cat += dz_gate[name] @ params.weights
        du = dx_cat[:, p_dim:]
        ds = ds * g["forget"]
    return report


@dataclass
class LstmTrainingResult:
    weights: LstmWeights
    history: List[Tuple[int, LossReport, Optional[LossReport]]] = field(default_factory=list)
    seconds: float = 0.0

    def history_frame(self) -> pd.DataFrame:
        rows = [{"epoch": e, "train_mse": tr.mse, "train_mae": tr.mae,
                 "val_mse": va.mse if va else np.nan, "val_mae": va.mae if va else np.nan}
                for e, tr, va in self.history]
        return pd.DataFrame(rows, columns=["epoch", "train_mse", "train_mae", "val_mse", "val_mae"])


def train_lstm(weights: LstmWeights, samples: Sequence[SequenceSample], epochs: int, batch: int, lr: float, seed: int,
               val_samples: Optional[Sequence[SequenceSample]] = None, log_every: int = 20) -> LstmTrainingResult:
    """Adam on the one-step MSE with full BPTT over each q-window. Trains `weights` in place."""
    if not samples:
        raise InputError("train_lstm needs at least one sequence sample")
    windows, targets = stack_samples(samples)
    if windows.shape[1:] != (weights.steps, weights.latent_dim):
        raise ShapeError("train_lstm: samples do not match the network", expected=(weights.steps, weights.latent_dim), got=windows.shape[1:])
    val = stack_samples(val_samples) if val_samples else None
    rng = np.random.default_rng(seed)
    optimizer = AdamOptimizer(lr=lr)
    result = LstmTrainingResult(weights=weights)

    start = time.perf_counter()
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(windows))
        sq_sum, abs_sum = 0.0, 0.0
        for i in range(0, len(order), batch):
            idx = order[i:i + batch]
            report = loss_and_gradients(weights, windows[idx], targets[idx])
            if not np.isfinite(report.mse):
                raise NumericalError("Non-finite LSTM loss", epoch=epoch)
            try:
                optimizer.step(weights.parameters())
            except NumericalError as e:
                raise NumericalError("Non-finite gradient during LSTM training", layer=e.layer, epoch=epoch) from e
            sq_sum += report.mse * len(idx)
            abs_sum += report.mae * len(idx)
        train_report = LossReport(sq_sum / len(windows), abs_sum / len(windows))
        val_report = loss_mse_mae(forecast_batch(weights, val[0]), val[1]) if val else None
        result.history.append((epoch, train_report, val_report))
        if epoch % log_every == 0 or epoch == epochs:
            val_text = f"{val_report.mse:.3e}" if val_report else "n/a"
            logger.info(f"   [LSTM] epoch {epoch}/{epochs} train mse {train_report.mse:.3e} | val mse {val_text}")
    result.seconds = time.perf_counter() - start
    return result


def persistence_mse(samples: Sequence[SequenceSample]) -> LossReport:
    """Error of the h_{t+1} = h_t baseline."""
    windows, targets = stack_samples(samples)
    return loss_mse_mae(windows[:, -1], targets)


# ==========================================
# SCALED SURROGATE (what the pipeline uses)
# ==========================================

@dataclass
class LatentScaler:
    """Per-component min-max map of latents onto [0, 1], fitted on training latents."""
    low: np.ndarray
    high: np.ndarray

    @classmethod
    def fit(cls, latents: np.ndarray) -> "LatentScaler":
        latents = np.asarray(latents, dtype=np.float64)
        if latents.ndim != 2 or len(latents) == 0:
            raise InputError("LatentScaler.fit expects a non-empty (N, p) array")
        return cls(latents.min(axis=0), latents.max(axis=0))

    @classmethod
    def identity(cls, latent_dim: int) -> "LatentScaler":
        return cls(np.zeros(latent_dim), np.ones(latent_dim))

    @property
    def span(self) -> np.ndarray:
        span = self.high - self.low
        return np.where(span > 0, span, 1.0)

    def transform(self, latents: np.ndarray) -> np.ndarray:
        return (np.asarray(latents, dtype=np.float64) - self.low) / self.span

    def inverse(self, scaled: np.ndarray) -> np.ndarray:
        return np.asarray(scaled, dtype=np.float64) * self.span + self.low

    def scale_samples(self, samples: Sequence[SequenceSample]) -> List[SequenceSample]:
        return [SequenceSample(self.transform(s.inputs), self.transform(s.target), s.target_index) for s in samples]


class LstmSurrogate:
    """
    LSTM weights plus the latent scaler, predicting in raw latent units.
    With a `delta_scaler` the network output is the scaled step and the
    forecast is h_t + step (residual around persistence).
    """

    def __init__(self, weights: LstmWeights, scaler: LatentScaler, delta_scaler: Optional[LatentScaler] = None):
        for s in (scaler, delta_scaler):
            if s is not None and s.low.shape != (weights.latent_dim,):
                raise ShapeError("scaler does not match the latent size", expected=(weights.latent_dim,), got=s.low.shape)
        self.weights = weights
        self.scaler = scaler
        self.delta_scaler = delta_scaler

    @property
    def steps(self) -> int:
        return self.weights.steps

    @property
    def latent_dim(self) -> int:
        return self.weights.latent_dim

    @property
    def residual(self) -> bool:
        return self.delta_scaler is not None

    def _to_latent(self, out: np.ndarray, last: np.ndarray) -> np.ndarray:
        if self.delta_scaler is None:
            return self.scaler.inverse(out)
        return last + self.delta_scaler.inverse(out)

    def predict(self, window: np.ndarray) -> np.ndarray:
        window = np.asarray(window, dtype=np.float64)
        return self._to_latent(forecast(self.weights, self.scaler.transform(window)), window[-1])

    def predict_batch(self, windows: np.ndarray) -> np.ndarray:
        windows = np.asarray(windows, dtype=np.float64)
        return self._to_latent(forecast_batch(self.weights, self.scaler.transform(windows)), windows[:, -1])

    def training_samples(self, samples: Sequence[SequenceSample]) -> List[SequenceSample]:
        """Samples in network units: scaled windows, scaled targets or scaled steps."""
        if self.delta_scaler is None:
            return self.scaler.scale_samples(samples)
        return [SequenceSample(self.scaler.transform(s.inputs), self.delta_scaler.transform(s.target - s.inputs[-1]),
                               s.target_index) for s in samples]

    def evaluate(self, samples: Sequence[SequenceSample]) -> LossReport:
        windows, targets = stack_samples(samples)
        return loss_mse_mae(self.predict_batch(windows), targets)

    def save(self, path) -> Path:
        tensors = [(f"{p.role}.weights", p.weights) for p in self.weights.parameters()]
        tensors += [(f"{p.role}.biases", p.biases) for p in self.weights.parameters()]
        tensors += [("scaler.low", self.scaler.low), ("scaler.high", self.scaler.high)]
        if self.delta_scaler is not None:
            tensors += [("delta.low", self.delta_scaler.low), ("delta.high", self.delta_scaler.high)]
        return save_weights(path, [{**self.weights.to_header(), "residual": self.residual}], tensors)

    @classmethod
    def load(cls, path) -> "LstmSurrogate":
        headers, tensors = load_weights(path)
        header = next((h for h in headers if h.get("kind") == "lstm"), None)
        if header is None:
            raise InputError(f"{path} holds no LSTM architecture header")
        weights = LstmWeights.zeros(header["latent_dim"], header["hidden"], header["steps"], header["activation"])
        for p in weights.parameters():
            w, b = tensors.get(f"{p.role}.weights"), tensors.get(f"{p.role}.biases")
            if w is None or b is None or w.shape != p.weights.shape or b.shape != p.biases.shape:
                raise ShapeError(f"{path}: tensor for '{p.role}' is missing or mis-shaped")
            p.weights[...] = w
            p.biases[...] = b
        delta = None
        if header.get("residual", False):
            if "delta.low" not in tensors or "delta.high" not in tensors:
                raise ShapeError(f"{path}: residual surrogate without its step scaler")
            delta = LatentScaler(tensors["delta.low"], tensors["delta.high"])
        return cls(weights, LatentScaler(tensors["scaler.low"], tensors["scaler.high"]), delta)


def train_surrogate(train_samples: Sequence[SequenceSample], val_samples: Optional[Sequence[SequenceSample]],
                    latent_dim: int, hidden: int, steps: int, activation: str, epochs: int, batch: int, lr: float,
                    seed: int, scaler_latents: Optional[np.ndarray] = None, log_every: int = 20,
                    residual: bool = True):
    """
    Fits the scaler (on `scaler_latents`, or on every latent the training
    samples touch), initialises the LSTM from `seed` and trains it on scaled samples.
    With `residual` the network learns the min-max scaled step target - h_t,
    with the step scaler fitted on the training samples.
    Returns (LstmSurrogate, LstmTrainingResult).
    """
    if not train_samples:
        raise InputError("train_surrogate needs at least one sequence sample")
    windows, targets = stack_samples(train_samples)
    if scaler_latents is None:
        scaler_latents = np.concatenate([windows.reshape(-1, latent_dim), targets])
    scaler = LatentScaler.fit(scaler_latents)
    delta_scaler = LatentScaler.fit(targets - windows[:, -1]) if residual else None
    init_seq, train_seq = np.random.SeedSequence(seed).spawn(2)
    weights = LstmWeights.initialize(latent_dim, hidden, steps, activation, np.random.default_rng(init_seq))
    surrogate = LstmSurrogate(weights, scaler, delta_scaler)
    result = train_lstm(
        weights,
        surrogate.training_samples(train_samples),
        epochs, batch, lr,
        int(train_seq.generate_state(1)[0]),
        val_samples=surrogate.training_samples(val_samples) if val_samples else None,
        log_every=log_every,
    )
    return surrogate, result
