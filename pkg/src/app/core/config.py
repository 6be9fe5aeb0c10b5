"""
Experiment configuration.

A run is described by one YAML file parsed into `ExperimentConfig`. Every
cross-field rule (scene stability, shared latent size, sigma > 0, ...) is a
validator, so a bad file is rejected before anything is computed.
Process-level knobs (log level, worker threads) come from `RuntimeSettings`,
read from LADA_* environment variables or a .env file.
"""
import math
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.app.core.errors import ConfigError

Activation = Literal["relu", "elu", "sigmoid", "tanh", "linear"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ==========================================
# SCENE
# ==========================================

class VelocitySettings(_Strict):
    kind: Literal["uniform", "vortex"] = "vortex"
    vx: float = 0.0
    vy: float = 0.0
    strength: float = 0.2


class WindowSettings(_Strict):
    side: Literal["top", "bottom", "left", "right"]
    start: int = Field(ge=0)
    stop: int = Field(gt=0)
    exchange: float = Field(default=0.2, gt=0.0, le=1.0)
    depth: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _ordered(self):
        if self.stop <= self.start:
            raise ValueError(f"window stop ({self.stop}) must exceed start ({self.start})")
        return self


class GaussianBump(_Strict):
    row: float
    col: float
    sigma: float = Field(gt=0.0)


def _default_windows() -> List[WindowSettings]:
    return [
        WindowSettings(side="top", start=8, stop=20, exchange=0.2),
        WindowSettings(side="top", start=40, stop=52, exchange=0.2),
        WindowSettings(side="right", start=15, stop=30, exchange=0.2),
    ]


class SceneConfig(_Strict):
    grid_rows: int = Field(default=45, ge=4)
    grid_cols: int = Field(default=62, ge=4)
    diffusivity: float = Field(default=0.05, ge=0.0)
    velocity: VelocitySettings = Field(default_factory=VelocitySettings)
    windows: List[WindowSettings] = Field(default_factory=_default_windows)
    initial_ppm: float = 1420.0
    ambient_ppm: float = 400.0
    initial_kind: Literal["uniform", "gaussian"] = "uniform"
    bump: Optional[GaussianBump] = None
    steps: int = Field(default=600, ge=1)
    substeps: int = Field(default=4, ge=1)
    dt: float = Field(default=1.0, gt=0.0)
    dx: float = Field(default=1.0, gt=0.0)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _physical(self):
        if self.initial_ppm <= self.ambient_ppm:
            raise ValueError("initial_ppm must exceed ambient_ppm")
        if self.initial_kind == "gaussian" and self.bump is None:
            raise ValueError("initial_kind 'gaussian' needs a 'bump' block")
        for w in self.windows:
            extent = self.grid_cols if w.side in ("top", "bottom") else self.grid_rows
            if w.stop > extent:
                raise ValueError(f"window on the {w.side} wall runs past the grid ({w.stop} > {extent})")
        from src.data.scene import check_stability
        check_stability(self)
        return self

    @property
    def diffusion_number(self) -> float:
        return self.diffusivity * self.dt / self.dx ** 2

    @property
    def shape(self) -> Tuple[int, int]:
        return self.grid_rows, self.grid_cols


class SensorSettings(_Strict):
    # (row, col) as fractions of the grid so the layout scales with resolution
    positions: List[Tuple[float, float]] = Field(default_factory=lambda: [
        (0.20, 0.15), (0.20, 0.55), (0.25, 0.88), (0.50, 0.35),
        (0.55, 0.70), (0.82, 0.18), (0.80, 0.60),
    ])
    half_width: int = Field(default=5, ge=0)
    noise_std: float = Field(default=0.0, ge=0.0)

    @field_validator("positions")
    @classmethod
    def _in_unit_square(cls, value):
        if len(value) < 3:
            raise ValueError("at least 3 sensors are needed for 2D interpolation")
        for r, c in value:
            if not (0.0 <= r <= 1.0 and 0.0 <= c <= 1.0):
                raise ValueError(f"sensor position {(r, c)} is not a grid fraction in [0, 1]")
        return value


class ObservationSettings(_Strict):
    count: int = Field(default=10, ge=1)
    first: int = Field(default=30, ge=0)
    last: int = Field(default=360, ge=0)
    timesteps: Optional[List[int]] = None

    def resolve(self) -> List[int]:
        if self.timesteps:
            return sorted(set(self.timesteps))
        if self.count == 1:
            return [self.first]
        step = (self.last - self.first) / (self.count - 1)
        return sorted({int(round(self.first + i * step)) for i in range(self.count)})


# ==========================================
# DATA / MODELS
# ==========================================

class SplitSettings(_Strict):
    jump: int = Field(default=1, ge=1)
    lstm_windowing: Literal["targets", "segments"] = "targets"


class CaeSettings(_Strict):
    layers: int = Field(default=4, ge=1)
    filters: int = Field(default=16, ge=1)
    kernel: int = Field(default=3, ge=1)
    kernels: Optional[List[int]] = None
    activation: Activation = "relu"
    decoder: Literal["upsample", "transpose"] = "upsample"
    latent_dim: int = Field(default=7, ge=1)
    epochs: int = Field(default=60, ge=0)
    batch: int = Field(default=16, ge=1)
    lr: float = Field(default=1e-3, gt=0.0)
    log_every: int = Field(default=10, ge=1)
    # every n-th training timestep also contributes its sensor-interpolated field; 0 = off
    observation_augment: int = Field(default=1, ge=0)

    @model_validator(mode="after")
    def _kernels(self):
        if self.kernels is not None:
            if len(self.kernels) != self.layers:
                raise ValueError(f"kernels lists {len(self.kernels)} sizes for {self.layers} encoder layers")
            if any(k < 1 or k % 2 == 0 for k in self.kernels):
                raise ValueError("kernel sizes must be odd and positive")
        elif self.kernel % 2 == 0:
            raise ValueError("kernel size must be odd")
        return self

    def kernel_list(self) -> List[int]:
        return list(self.kernels) if self.kernels is not None else [self.kernel] * self.layers


class LstmSettings(_Strict):
    hidden: int = Field(default=30, ge=1)
    steps: int = Field(default=3, ge=1)
    activation: Activation = "elu"
    epochs: int = Field(default=100, ge=0)
    batch: int = Field(default=16, ge=1)
    lr: float = Field(default=1e-3, gt=0.0)
    latent_dim: Optional[int] = Field(default=None, ge=1)
    log_every: int = Field(default=20, ge=1)
    # predict the step h_t+1 - h_t on top of persistence
    residual: bool = True


class SdaSettings(_Strict):
    max_state_dim: int = Field(default=4000, ge=1)
    nugget: float = Field(default=1e-6, ge=0.0)
    sample_r: Literal["projected", "full"] = "projected"
    keep_gain: bool = False


class AssimilationSettings(_Strict):
    r_modes: List[Union[Literal["sample"], float]] = Field(default_factory=lambda: ["sample", 0.01, 0.001, 0.0001])
    q_source: Literal["val", "train", "test"] = "val"
    normalize_covariance: bool = False
    condition_limit: float = Field(default=1e12, gt=1.0)
    timing_repeats: int = Field(default=25, ge=1)
    nugget: float = Field(default=0.0, ge=0.0)
    sda: SdaSettings = Field(default_factory=SdaSettings)

    @field_validator("r_modes")
    @classmethod
    def _positive_sigma(cls, value):
        if not value:
            raise ValueError("r_modes must not be empty")
        for mode in value:
            if not isinstance(mode, str) and not (mode > 0 and math.isfinite(mode)):
                raise ValueError(f"scaled-identity sigma must be finite and > 0, got {mode}")
        return value


class CrossValidationSettings(_Strict):
    folds: int = Field(default=5, ge=2)
    repeats: int = Field(default=1, ge=1)
    lstm_repeats: int = Field(default=5, ge=1)


class GridSettings(_Strict):
    cae: Dict[str, List[Union[int, float, str]]] = Field(default_factory=lambda: {
        "filters": [16, 32, 64], "activation": ["relu", "elu"], "epochs": [250, 300, 400], "batch": [16, 32, 64],
    })
    lstm: Dict[str, List[Union[int, float, str]]] = Field(default_factory=lambda: {
        "hidden": [30, 50, 70], "activation": ["relu", "elu"], "steps": [3, 5, 7], "epochs": [200, 300, 400], "batch": [16, 32, 64],
    })

    @model_validator(mode="after")
    def _known_axes(self):
        allowed = {"cae": set(CaeSettings.model_fields), "lstm": set(LstmSettings.model_fields)}
        for name in ("cae", "lstm"):
            axes = getattr(self, name)
            if "neurons" in axes:
                axes["hidden"] = axes.pop("neurons")
            for axis, values in axes.items():
                if axis not in allowed[name]:
                    raise ValueError(f"grid.{name}: unknown axis '{axis}'")
                if not values:
                    raise ValueError(f"grid.{name}.{axis} has no values")
        return self


class StructureVariant(_Strict):
    name: str
    layers: int = Field(ge=1)
    kernels: Optional[List[int]] = None
    decoder: Literal["upsample", "transpose"] = "upsample"


def _default_structures() -> List[StructureVariant]:
    return [
        StructureVariant(name="enc3-dec4", layers=3),
        StructureVariant(name="enc4-dec5", layers=4),
        StructureVariant(name="enc5-dec6", layers=5),
        StructureVariant(name="enc4-transpose", layers=4, decoder="transpose"),
        StructureVariant(name="enc4-k5", layers=4, kernels=[5, 5, 5, 5]),
        StructureVariant(name="enc4-k5533", layers=4, kernels=[5, 5, 3, 3]),
    ]


class SweepSettings(_Strict):
    latent_sizes: List[int] = Field(default_factory=lambda: [4, 7, 16, 64])

    @field_validator("latent_sizes")
    @classmethod
    def _sizes(cls, value):
        if not value or any(size < 1 for size in value):
            raise ValueError("latent_sizes must be a non-empty list of sizes >= 1")
        return value


class ExportSettings(_Strict):
    every: int = Field(default=50, ge=0)
    triptychs: bool = True


class ExperimentConfig(_Strict):
    seed: int = Field(default=42, ge=0)
    output_dir: Path = Path("outputs/desk")
    channels: Literal[1, 3] = 1
    scene: SceneConfig = Field(default_factory=SceneConfig)
    sensors: SensorSettings = Field(default_factory=SensorSettings)
    observations: ObservationSettings = Field(default_factory=ObservationSettings)
    split: SplitSettings = Field(default_factory=SplitSettings)
    cae: CaeSettings = Field(default_factory=CaeSettings)
    lstm: LstmSettings = Field(default_factory=LstmSettings)
    assimilation: AssimilationSettings = Field(default_factory=AssimilationSettings)
    cross_validation: CrossValidationSettings = Field(default_factory=CrossValidationSettings)
    grid: GridSettings = Field(default_factory=GridSettings)
    structures: List[StructureVariant] = Field(default_factory=_default_structures)
    sweep: SweepSettings = Field(default_factory=SweepSettings)
    export: ExportSettings = Field(default_factory=ExportSettings)
    _source: Optional[Path] = PrivateAttr(default=None)

    @model_validator(mode="after")
    def _consistent(self):
        if self.lstm.latent_dim is not None and self.lstm.latent_dim != self.cae.latent_dim:
            raise ValueError(f"lstm.latent_dim ({self.lstm.latent_dim}) differs from cae.latent_dim ({self.cae.latent_dim})")
        obs = self.observations.resolve()
        if any(t < 0 or t >= self.scene.steps for t in obs):
            raise ValueError(f"observation timesteps {obs} fall outside [0, {self.scene.steps})")
        return self

    @property
    def latent_dim(self) -> int:
        return self.cae.latent_dim

    @property
    def source(self) -> Optional[Path]:
        """The YAML file this config was read from; None for built-in defaults."""
        return self._source

    def with_overrides(self, **sections) -> "ExperimentConfig":
        """
        Returns a validated copy with nested fields replaced, e.g.
        with_overrides(cae={"filters": 32}, seed=7).
        """
        data = self.model_dump()
        for key, value in sections.items():
            if isinstance(value, dict) and isinstance(data.get(key), dict):
                data[key].update(value)
            else:
                data[key] = value
        try:
            updated = ExperimentConfig.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"Invalid configuration override: {e}") from e
        updated._source = self._source
        return updated


# ==========================================
# RUNTIME (environment)
# ==========================================

class RuntimeSettings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="LADA_", env_file=".env", extra="ignore")

    log_level: str = "INFO"
    threads: int = 1
    config_path: Optional[Path] = None


def load_config(path) -> ExperimentConfig:
    """Reads and validates a YAML experiment file. Raises ConfigError on any problem."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Could not parse {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    try:
        config = ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{path}: {e}") from e
    config._source = path.resolve()
    return config
