"""
Convolutional autoencoder.

Encoder: L stride-2 "same" convolutions, flatten, one linear dense layer to
the latent size p. Decoder: dense back to the last feature map, then L
blocks that return to the recorded encoder resolutions (nearest upsample
plus a stride-1 conv, or one stride-2 transposed conv), and a final conv to
the input channels with a sigmoid so every output lies in [0, 1].
Odd sizes are handled by recording each encoder level's spatial shape and
cropping the decoder to it.
"""
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.app.core.config import CaeSettings
from src.app.core.errors import InputError, NumericalError, ShapeError
from src.data.dataset import kfold
from src.engine.nn.layers import Conv2D, ConvTranspose2D, Dense, LayerParams, Upsample2D, conv_output_size
from src.engine.nn.losses import LossReport, loss_mse_mae, mse_gradient
from src.engine.nn.optim import AdamOptimizer
from src.engine.nn.weights_io import load_weights, save_weights
from src.utils.data_utils import mean_std

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CaeArchitecture:
    input_shape: Tuple[int, int, int]
    latent_dim: int = 7
    layers: int = 4
    filters: int = 64
    kernels: Tuple[int, ...] = ()
    activation: str = "relu"
    decoder: str = "upsample"

    def __post_init__(self):
        if not self.kernels:
            object.__setattr__(self, "kernels", (3,) * self.layers)
        object.__setattr__(self, "kernels", tuple(int(k) for k in self.kernels))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if len(self.kernels) != self.layers:
            raise InputError(f"{len(self.kernels)} kernel sizes given for {self.layers} encoder layers")
        if self.latent_dim < 1:
            raise InputError("latent_dim must be >= 1")
        if self.decoder not in ("upsample", "transpose"):
            raise InputError(f"unknown decoder kind '{self.decoder}'")

    @classmethod
    def from_settings(cls, settings: CaeSettings, input_shape) -> "CaeArchitecture":
        return cls(
            input_shape=tuple(input_shape),
            latent_dim=settings.latent_dim,
            layers=settings.layers,
            filters=settings.filters,
            kernels=tuple(settings.kernel_list()),
            activation=settings.activation,
            decoder=settings.decoder,
        )

    def level_shapes(self) -> List[Tuple[int, int]]:
        """Spatial shape at every encoder level, input first."""
        shapes = [tuple(self.input_shape[1:])]
        for k in self.kernels:
            h, w = shapes[-1]
            shapes.append((conv_output_size(h, k, 2, k // 2), conv_output_size(w, k, 2, k // 2)))
        return shapes

    def to_header(self) -> dict:
        header = asdict(self)
        header["kind"] = "cae"
        return header

    @classmethod
    def from_header(cls, header: dict) -> "CaeArchitecture":
        fields_ = {k: v for k, v in header.items() if k != "kind"}
        return cls(**fields_)


@dataclass
class EpochReport:
    epoch: int
    train: LossReport
    val: Optional[LossReport]


@dataclass
class CaeTrainingResult:
    model: "CaeModel"
    initial_val: Optional[LossReport]
    history: List[EpochReport] = field(default_factory=list)
    seconds: float = 0.0

    def history_frame(self) -> pd.DataFrame:
        rows = [{
            "epoch": r.epoch,
            "train_mse": r.train.mse,
            "train_mae": r.train.mae,
            "val_mse": r.val.mse if r.val else np.nan,
            "val_mae": r.val.mae if r.val else np.nan,
        } for r in self.history]
        return pd.DataFrame(rows, columns=["epoch", "train_mse", "train_mae", "val_mse", "val_mae"])


class CaeModel:
    def __init__(self, arch: CaeArchitecture, rng: Optional[np.random.Generator] = None):
        self.arch = arch
        rng = rng if rng is not None else np.random.default_rng(0)
        channels = arch.input_shape[0]
        shapes = arch.level_shapes()
        f = arch.filters
        self._bottleneck = (f,) + shapes[-1]
        flat = int(np.prod(self._bottleneck))

        self.encoder_convs = []
        c_in = channels
        for i, k in enumerate(arch.kernels):
            self.encoder_convs.append(Conv2D.create(rng, c_in, f, k, 2, arch.activation, f"encoder.conv{i}"))
            c_in = f
        self.encoder_dense = Dense.create(rng, flat, arch.latent_dim, "linear", "encoder.dense")

        self.decoder_dense = Dense.create(rng, arch.latent_dim, flat, arch.activation, "decoder.dense")
        self.decoder_blocks = []
        for n, level in enumerate(range(arch.layers, 0, -1)):
            k = arch.kernels[level - 1]
            target = shapes[level - 1]
            if arch.decoder == "upsample":
                self.decoder_blocks.append((
                    Upsample2D(target),
                    Conv2D.create(rng, f, f, k, 1, arch.activation, f"decoder.conv{n}"),
                ))
            else:
                self.decoder_blocks.append((ConvTranspose2D.create(rng, f, f, k, arch.activation, f"decoder.convT{n}"), target))
        self.decoder_out = Conv2D.create(rng, f, channels, arch.kernels[0], 1, "sigmoid", "decoder.out")

    # ------------------------------------------
    # parameters
    # ------------------------------------------
    def parameters(self) -> List[LayerParams]:
        params = [c.params for c in self.encoder_convs] + [self.encoder_dense.params, self.decoder_dense.params]
        for block in self.decoder_blocks:
            layer = block[1] if self.arch.decoder == "upsample" else block[0]
            params.append(layer.params)
        params.append(self.decoder_out.params)
        return params

    # ------------------------------------------
    # forward / backward
    # ------------------------------------------
    def _check_fields(self, x) -> Tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 3
        x4 = x[None, ...] if single else x
        if x4.ndim != 4 or x4.shape[1:] != self.arch.input_shape:
            raise ShapeError("encode: field shape does not match the model input", expected=self.arch.input_shape, got=x.shape)
        if not np.all(np.isfinite(x4)) or x4.min() < 0.0 or x4.max() > 1.0:
            raise InputError("encode: fields must be finite and normalised to [0, 1]")
        return x4, single

    def _encode4(self, x4: np.ndarray, training: bool) -> np.ndarray:
        out = x4
        for conv in self.encoder_convs:
            out = conv.forward(out, training)
        return self.encoder_dense.forward(out.reshape(len(out), -1), training)

    def _decode2(self, h2: np.ndarray, training: bool) -> np.ndarray:
        out = self.decoder_dense.forward(h2, training).reshape((len(h2),) + self._bottleneck)
        for first, second in self.decoder_blocks:
            if self.arch.decoder == "upsample":
                out = second.forward(first.forward(out, training), training)
            else:
                out = first.forward(out, second, training)
        return self.decoder_out.forward(out, training)

    def _backward(self, grad_out: np.ndarray) -> np.ndarray:
        g = self.decoder_out.backward(grad_out)
        for first, second in reversed(self.decoder_blocks):
            if self.arch.decoder == "upsample":
                g = first.backward(second.backward(g))
            else:
                g = first.backward(g)
        g = self.decoder_dense.backward(g.reshape(len(g), -1))
        g = self.encoder_dense.backward(g)
        g = g.reshape((len(g),) + self._bottleneck)
        for conv in reversed(self.encoder_convs):
            g = conv.backward(g)
        return g

    def encode(self, field: np.ndarray) -> np.ndarray:
        x4, single = self._check_fields(field)
        h = self._encode4(x4, training=False)
        return h[0] if single else h

    def decode(self, h: np.ndarray) -> np.ndarray:
        h = np.asarray(h, dtype=np.float64)
        single = h.ndim == 1
        h2 = h[None, :] if single else h
        if h2.ndim != 2 or h2.shape[1] != self.arch.latent_dim:
            raise ShapeError("decode: latent length does not match the model", expected=(self.arch.latent_dim,), got=h.shape)
        out = self._decode2(h2, training=False)
        return out[0] if single else out

    def encode_many(self, fields: np.ndarray, batch_size: int = 64) -> np.ndarray:
        return np.concatenate([self.encode(fields[i:i + batch_size]) for i in range(0, len(fields), batch_size)])

    def decode_many(self, latents: np.ndarray, batch_size: int = 64) -> np.ndarray:
        return np.concatenate([self.decode(latents[i:i + batch_size]) for i in range(0, len(latents), batch_size)])

    def reconstruct(self, fields: np.ndarray, batch_size: int = 64) -> np.ndarray:
        return self.decode_many(self.encode_many(fields, batch_size), batch_size)

    def evaluate(self, fields: np.ndarray, batch_size: int = 64) -> LossReport:
        return loss_mse_mae(self.reconstruct(fields, batch_size), np.asarray(fields, dtype=np.float64))

    def loss_and_gradients(self, batch: np.ndarray) -> LossReport:
        """MSE reconstruction loss of one batch; accumulates parameter gradients."""
        x4, _ = self._check_fields(batch)
        recon = self._decode2(self._encode4(x4, training=True), training=True)
        report = loss_mse_mae(recon, x4)
        self._backward(mse_gradient(recon, x4))
        return report

    # ------------------------------------------
    # persistence
    # ------------------------------------------
    def save(self, path) -> Path:
        tensors = []
        for p in self.parameters():
            tensors.append((f"{p.role}.weights", p.weights))
            tensors.append((f"{p.role}.biases", p.biases))
        return save_weights(path, [self.arch.to_header()], tensors)

    @classmethod
    def load(cls, path) -> "CaeModel":
        headers, tensors = load_weights(path)
        header = next((h for h in headers if h.get("kind") == "cae"), None)
        if header is None:
            raise InputError(f"{path} holds no autoencoder architecture header")
        model = cls(CaeArchitecture.from_header(header))
        for p in model.parameters():
            w, b = tensors.get(f"{p.role}.weights"), tensors.get(f"{p.role}.biases")
            if w is None or b is None or w.shape != p.weights.shape or b.shape != p.biases.shape:
                raise ShapeError(f"{path}: tensor for '{p.role}' is missing or mis-shaped", expected=p.weights.shape,
                                 got=None if w is None else w.shape)
            p.weights[...] = w
            p.biases[...] = b
        return model


def _first_bad_layer(model: CaeModel) -> Optional[str]:
    for p in model.parameters():
        if not (np.all(np.isfinite(p.weights)) and np.all(np.isfinite(p.biases))):
            return p.role
    return None


def train_cae(arch: CaeArchitecture, train_fields: np.ndarray, val_fields: Optional[np.ndarray],
              epochs: int, batch: int, lr: float, seed: int, log_every: int = 10) -> CaeTrainingResult:
    """Mini-batch Adam on the reconstruction MSE. Deterministic for a given seed."""
    train_fields = np.asarray(train_fields, dtype=np.float64)
    if len(train_fields) == 0:
        raise InputError("train_cae needs at least one training field")
    init_seq, shuffle_seq = np.random.SeedSequence(seed).spawn(2)
    model = CaeModel(arch, np.random.default_rng(init_seq))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    optimizer = AdamOptimizer(lr=lr)
    has_val = val_fields is not None and len(val_fields) > 0

    result = CaeTrainingResult(model=model, initial_val=model.evaluate(val_fields) if has_val else None)
    start = time.perf_counter()
    for epoch in range(1, epochs + 1):
        order = shuffle_rng.permutation(len(train_fields))
        sq_sum, abs_sum = 0.0, 0.0
        for i in range(0, len(order), batch):
            batch_fields = train_fields[order[i:i + batch]]
            report = model.loss_and_gradients(batch_fields)
            if not np.isfinite(report.mse):
                raise NumericalError("Non-finite reconstruction loss", layer=_first_bad_layer(model), epoch=epoch)
            try:
                optimizer.step(model.parameters())
            except NumericalError as e:
                raise NumericalError("Non-finite gradient during autoencoder training", layer=e.layer, epoch=epoch) from e
            sq_sum += report.mse * len(batch_fields)
            abs_sum += report.mae * len(batch_fields)
        train_report = LossReport(mse=sq_sum / len(train_fields), mae=abs_sum / len(train_fields))
        val_report = model.evaluate(val_fields) if has_val else None
        result.history.append(EpochReport(epoch, train_report, val_report))
        if epoch % log_every == 0 or epoch == epochs:
            val_text = f"{val_report.mse:.3e}" if val_report else "n/a"
            logger.info(f"   [CAE] epoch {epoch}/{epochs} train mse {train_report.mse:.3e} | val mse {val_text}")
    result.seconds = time.perf_counter() - start
    return result


@dataclass
class CrossValidationResult:
    records: pd.DataFrame
    summary: dict


def cross_validate(arch: CaeArchitecture, data: np.ndarray, k: int = 5, repeats: int = 1,
                   epochs: int = 60, batch: int = 16, lr: float = 1e-3, seed: int = 0) -> CrossValidationResult:
    """
    k-fold cross-validation of the reconstruction error, repeated `repeats`
    times with a fresh shuffle each time. Summary: population mean and
    sample (ddof=1) std of MSE, MAE and wall time over all folds.
    """
    data = np.asarray(data, dtype=np.float64)
    if len(data) < k:
        raise InputError(f"cross_validate needs at least k={k} samples, got {len(data)}")
    rows = []
    for r in range(repeats):
        for fold, (train_idx, hold_idx) in enumerate(kfold(range(len(data)), k, seed + r)):
            fold_seed = int(np.random.SeedSequence([seed, r, fold]).generate_state(1)[0])
            start = time.perf_counter()
            try:
                trained = train_cae(arch, data[train_idx], None, epochs, batch, lr, fold_seed, log_every=max(epochs, 1))
            except NumericalError as e:
                logger.error(f"❌ fold {fold} of repeat {r} aborted: {e}")
                raise NumericalError(f"cross-validation fold {fold} (repeat {r}) aborted: {e}",
                                     layer=e.layer, epoch=e.epoch, stage=f"cv-fold-{r}.{fold}") from e
            report = trained.model.evaluate(data[hold_idx])
            rows.append({"repeat": r, "fold": fold, "mse": report.mse, "mae": report.mae,
                         "seconds": time.perf_counter() - start})
    records = pd.DataFrame(rows, columns=["repeat", "fold", "mse", "mae", "seconds"])
    return CrossValidationResult(records=records, summary=summarize_folds(records))


def summarize_folds(records: pd.DataFrame) -> dict:
    summary = {}
    for column, label in (("mse", "MSE"), ("mae", "MAE"), ("seconds", "Time")):
        mean, std = mean_std(records[column].to_numpy())
        summary[f"Mean-{label}"] = mean
        summary[f"Std-{label}"] = std
    return summary

