"""
Kalman machinery shared by latent assimilation and the full-space baseline.

With an identity observation operator and a fixed background covariance
(optimal interpolation) the correction is
    K = Q (Q + R)^-1
    analysis = forecast + K (observation - forecast)
and the same code runs at the latent size p or the grid size n.
"""
import logging
import statistics
import time
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Mapping, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigh
from scipy.linalg.lapack import dpocon

from src.app.core.errors import InputError, MemoryGuardError, ShapeError, SingularMatrixError

logger = logging.getLogger(__name__)

RECORD_COLUMNS = ["timestep", "mse_forecast", "mse_analysis", "sigma_mode", "correction_seconds",
                  "mse_forecast_truth", "mse_analysis_truth"]


# ==========================================
# COVARIANCES
# ==========================================

@dataclass(frozen=True)
class CovarianceEstimate:
    matrix: np.ndarray
    provenance: Literal["sample_based", "scaled_identity"]
    samples: Optional[int] = None
    sigma: Optional[float] = None

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def label(self) -> str:
        return "sample" if self.provenance == "sample_based" else f"{self.sigma:g}I"


def sample_covariance(samples, normalize: bool = False) -> CovarianceEstimate:
    """
    V = samples minus their mean, returned as the Gram matrix V V^T with one
    column of V per sample. No 1/(s-1) factor unless `normalize` is set.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
        raise InputError(f"sample_covariance needs at least one non-empty sample, got shape {x.shape}")
    v = x - x.mean(axis=0)
    cov = v.T @ v
    cov = 0.5 * (cov + cov.T)
    if normalize and len(x) > 1:
        cov /= len(x) - 1
    return CovarianceEstimate(cov, "sample_based", samples=len(x))


def identity_covariance(dim: int, sigma: float) -> CovarianceEstimate:
    if not sigma > 0:
        raise InputError(f"scaled-identity covariance needs sigma > 0, got {sigma}")
    return CovarianceEstimate(sigma * np.eye(dim), "scaled_identity", sigma=float(sigma))


@dataclass(frozen=True)
class RMode:
    """An observation-error setting: the sample estimate or sigma * I."""
    sigma: Optional[float] = None

    @property
    def label(self) -> str:
        return "sample" if self.sigma is None else f"{self.sigma:g}I"

    @classmethod
    def parse(cls, value: Union[str, float]) -> "RMode":
        if isinstance(value, str):
            text = value.strip()
            if text == "sample":
                return cls(None)
            text = text[:-1] if text.endswith("I") else text
            value = float(text)
        if not value > 0:
            raise InputError(f"sigma must be > 0, got {value}")
        return cls(float(value))

    def build(self, dim: int, observed_samples: Optional[np.ndarray] = None, normalize: bool = False) -> CovarianceEstimate:
        if self.sigma is not None:
            return identity_covariance(dim, self.sigma)
        if observed_samples is None:
            raise InputError("the sample-based R mode needs observation samples")
        return sample_covariance(observed_samples, normalize=normalize)


def commuting_projection(R: CovarianceEstimate, Q: CovarianceEstimate) -> CovarianceEstimate:
    """
    Keeps only the variance of R along each eigenvector of Q:
        R' = U diag(U^T R U) U^T,  Q = U diag(q) U^T
    R' commutes with Q, so Q (Q + R')^-1 has eigenvalues q / (q + r') in
    [0, 1] and the analysis is never farther from the observation than the
    forecast.
    """
    q = Q.matrix if isinstance(Q, CovarianceEstimate) else np.asarray(Q, dtype=np.float64)
    r = R.matrix if isinstance(R, CovarianceEstimate) else np.asarray(R, dtype=np.float64)
    if q.shape != r.shape or q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise ShapeError("commuting_projection: Q and R must be square and of equal size", expected=q.shape, got=r.shape)
    _, basis = eigh(q)
    variances = np.clip(np.sum(basis * (r @ basis), axis=0), 0.0, None)
    projected = (basis * variances) @ basis.T
    projected = 0.5 * (projected + projected.T)
    samples = R.samples if isinstance(R, CovarianceEstimate) else None
    return CovarianceEstimate(projected, "sample_based", samples=samples)


# ==========================================
# GAIN & UPDATE
# ==========================================

def kalman_gain(Q: CovarianceEstimate, H, R: CovarianceEstimate, condition_limit: float = 1e12,
                nugget: float = 0.0) -> np.ndarray:
    """
    K = Q (Q + R)^-1 through a Cholesky solve of the symmetric Q + R.
    H is the observation operator; only the identity (or None) is accepted.
    `nugget` adds nugget * mean(diag(Q + R)) to the diagonal first.
    """
    q = Q.matrix if isinstance(Q, CovarianceEstimate) else np.asarray(Q, dtype=np.float64)
    r = R.matrix if isinstance(R, CovarianceEstimate) else np.asarray(R, dtype=np.float64)
    if q.shape != r.shape or q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise ShapeError("kalman_gain: Q and R must be square and of equal size", expected=q.shape, got=r.shape)
    if H is not None and not (np.shape(H) == q.shape and np.array_equal(H, np.eye(q.shape[0]))):
        raise InputError("only the identity observation operator is supported")

    s = q + r
    if nugget > 0:
        s = s + nugget * np.mean(np.diag(s)) * np.eye(s.shape[0])
    try:
        factor = cho_factor(s, lower=False, check_finite=True)
    except LinAlgError as e:
        raise SingularMatrixError("Q + R is not positive definite", condition=float("inf")) from e
    rcond, info = dpocon(factor[0], np.linalg.norm(s, 1))
    condition = float("inf") if rcond == 0 else 1.0 / rcond
    if info != 0 or condition > condition_limit:
        raise SingularMatrixError(f"Q + R is ill-conditioned (limit {condition_limit:.1e})", condition=condition)
    # Q (Q+R)^-1 = ((Q+R)^-1 Q)^T for symmetric Q and Q+R
    return cho_solve(factor, q).T


def analysis_update(forecast: np.ndarray, obs: np.ndarray, K: np.ndarray) -> np.ndarray:
    forecast = np.asarray(forecast, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    if forecast.shape != obs.shape or forecast.ndim != 1 or K.shape != (forecast.size, forecast.size):
        raise ShapeError("analysis_update: forecast, observation and gain disagree", expected=forecast.shape,
                         got=(obs.shape, K.shape))
    return forecast + K @ (obs - forecast)


@dataclass
class AnalysisRecord:
    timestep: int
    forecast: np.ndarray
    observation: np.ndarray
    analysis: np.ndarray
    gain: Optional[np.ndarray]
    correction_seconds: float
    sigma_mode: str
    truth: Optional[np.ndarray] = None

    @staticmethod
    def _mse(a, b) -> float:
        return float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))

    @property
    def mse_forecast(self) -> float:
        return self._mse(self.forecast, self.observation)

    @property
    def mse_analysis(self) -> float:
        return self._mse(self.analysis, self.observation)

    def consistency_residual(self) -> float:
        """max |analysis - (forecast + K (obs - forecast))|; needs the stored gain."""
        if self.gain is None:
            raise InputError("record was produced without keeping its gain")
        return float(np.max(np.abs(self.analysis - analysis_update(self.forecast, self.observation, self.gain))))

    def as_row(self) -> dict:
        return {
            "timestep": self.timestep,
            "mse_forecast": self.mse_forecast,
            "mse_analysis": self.mse_analysis,
            "sigma_mode": self.sigma_mode,
            "correction_seconds": self.correction_seconds,
            "mse_forecast_truth": self._mse(self.forecast, self.truth) if self.truth is not None else np.nan,
            "mse_analysis_truth": self._mse(self.analysis, self.truth) if self.truth is not None else np.nan,
        }


def records_frame(records: Sequence[AnalysisRecord]) -> pd.DataFrame:
    return pd.DataFrame([r.as_row() for r in records], columns=RECORD_COLUMNS)


def _timed_correction(forecast, obs, Q, R, repeats: int, condition_limit: float, nugget: float):
    timings = []
    for _ in range(repeats):
        start = time.perf_counter()
        K = kalman_gain(Q, None, R, condition_limit=condition_limit, nugget=nugget)
        analysis = analysis_update(forecast, obs, K)
        timings.append(time.perf_counter() - start)
    return K, analysis, statistics.median(timings)


# ==========================================
# LATENT ASSIMILATION
# ==========================================

class Decoder(Protocol):
    def decode(self, h: np.ndarray) -> np.ndarray: ...


class Forecaster(Protocol):
    steps: int

    def predict(self, window: np.ndarray) -> np.ndarray: ...


@dataclass
class AssimilationResult:
    records: List[AnalysisRecord] = field(default_factory=list)
    decoded_forecasts: Dict[int, np.ndarray] = field(default_factory=dict)
    decoded_analyses: Dict[int, np.ndarray] = field(default_factory=dict)
    skipped: List[Tuple[int, str]] = field(default_factory=list)

    def frame(self) -> pd.DataFrame:
        return records_frame(self.records)


def latent_assimilate(decoder: Optional[Decoder], surrogate: Forecaster, background_latents: np.ndarray,
                      observed_latents: Mapping[int, np.ndarray], Q: CovarianceEstimate, R: CovarianceEstimate,
                      truth_latents: Optional[np.ndarray] = None, timing_repeats: int = 5,
                      condition_limit: float = 1e12, nugget: float = 0.0, keep_gain: bool = True) -> AssimilationResult:
    """
    For every observation timestep t: forecast h_t from the background
    latents t-q..t-1, correct it with the encoded observation, and decode
    forecast and analysis. Timesteps without a full window are skipped and reported.
    """
    background_latents = np.asarray(background_latents, dtype=np.float64)
    q = surrogate.steps
    result = AssimilationResult()
    for t in sorted(observed_latents):
        if t < q or t >= len(background_latents):
            reason = f"needs {q} preceding latents" if t < q else "lies past the end of the trajectory"
            logger.warning(f"⚠️ Skipping timestep {t}: {reason}")
            result.skipped.append((t, reason))
            continue
        h_forecast = surrogate.predict(background_latents[t - q:t])
        obs = np.asarray(observed_latents[t], dtype=np.float64)
        K, h_analysis, seconds = _timed_correction(h_forecast, obs, Q, R, timing_repeats, condition_limit, nugget)
        result.records.append(AnalysisRecord(
            timestep=t, forecast=h_forecast, observation=obs, analysis=h_analysis,
            gain=K if keep_gain else None, correction_seconds=seconds, sigma_mode=R.label,
            truth=None if truth_latents is None else np.asarray(truth_latents[t], dtype=np.float64),
        ))
        if decoder is not None:
            result.decoded_forecasts[t] = decoder.decode(h_forecast)
            result.decoded_analyses[t] = decoder.decode(h_analysis)
    return result


# ==========================================
# FULL-SPACE BASELINE
# ==========================================

def check_state_dim(n: int, max_state_dim: int) -> None:
    if n > max_state_dim:
        mb = n * n * 8 / 1e6
        raise MemoryGuardError(
            f"full-space assimilation at n={n} needs several dense {n}x{n} matrices (~{mb:.0f} MB each); "
            f"the configured cap is n <= {max_state_dim}"
        )


def standard_da(forecast_fields: Mapping[int, np.ndarray], observation_fields: Mapping[int, np.ndarray],
                Q: CovarianceEstimate, R: CovarianceEstimate, truth_fields: Optional[Mapping[int, np.ndarray]] = None,
                max_state_dim: int = 4000, condition_limit: float = 1e12, nugget: float = 1e-6,
                keep_gain: bool = False, timing_repeats: int = 1) -> List[AnalysisRecord]:
    """Same gain and update on flattened physical fields (dimension n)."""
    n = Q.dim
    check_state_dim(n, max_state_dim)
    records = []
    for t in sorted(observation_fields):
        if t not in forecast_fields:
            raise InputError(f"no forecast field for observation timestep {t}")
        forecast = np.asarray(forecast_fields[t], dtype=np.float64).ravel()
        obs = np.asarray(observation_fields[t], dtype=np.float64).ravel()
        if forecast.size != n or obs.size != n:
            raise ShapeError("standard_da: fields do not match the covariance size", expected=(n,), got=(forecast.size, obs.size))
        K, analysis, seconds = _timed_correction(forecast, obs, Q, R, timing_repeats, condition_limit, nugget)
        truth = None if truth_fields is None else np.asarray(truth_fields[t], dtype=np.float64).ravel()
        records.append(AnalysisRecord(t, forecast, obs, analysis, K if keep_gain else None, seconds, R.label, truth))
        logger.info(f"   [sDA] t={t} mode={R.label} correction {seconds:.3f}s")
    return records
