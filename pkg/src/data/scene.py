"""
Synthetic ventilation scene.

A room on a regular grid starts at a high CO2 concentration and relaxes
toward the ambient level through window cells on its walls, while a
divergence-free flow stirs the air. The explicit solver is conservative
first-order upwind advection plus a 5-point diffusion stencil with zero-flux
walls, so without windows the spatial mean is preserved and values never
leave [ambient, initial].

Sensors are point samples of the simulated field. Their readings are
spread over a square zone, interpolated linearly over the rest of the grid
and normalised the same way the model fields are.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import griddata

from src.app.core.config import SceneConfig, SensorSettings
from src.app.core.errors import InputError

logger = logging.getLogger(__name__)

# value -> (r, g, b), linear in between
COLORMAP_BREAKPOINTS = (
    (0.00, (0.0, 0.0, 1.0)),
    (0.25, (0.0, 1.0, 1.0)),
    (0.50, (0.0, 1.0, 0.0)),
    (0.75, (1.0, 1.0, 0.0)),
    (1.00, (1.0, 0.0, 0.0)),
)


# ==========================================
# FLOW FIELD & STABILITY
# ==========================================

def face_velocities(config: SceneConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    Velocities on cell faces, in grid cells per solver step.
    ux has shape (rows, cols+1) (vertical faces, +col direction),
    uy has shape (rows+1, cols) (horizontal faces, +row direction).
    """
    rows, cols = config.shape
    v = config.velocity
    if v.kind == "uniform":
        ux = np.full((rows, cols + 1), float(v.vx))
        uy = np.full((rows + 1, cols), float(v.vy))
        return ux, uy

    # Streamfunction on cell corners, zero on the walls: the discrete
    # divergence of the resulting face field vanishes identically.
    i = np.arange(rows + 1)[:, None]
    j = np.arange(cols + 1)[None, :]
    psi = np.sin(np.pi * i / rows) * np.sin(np.pi * j / cols)
    psi[0, :] = psi[-1, :] = 0.0
    psi[:, 0] = psi[:, -1] = 0.0
    ux = psi[1:, :] - psi[:-1, :]
    uy = -(psi[:, 1:] - psi[:, :-1])
    peak = max(np.abs(ux).max(), np.abs(uy).max())
    scale = v.strength / peak if peak > 0 else 0.0
    return ux * scale, uy * scale


def check_stability(config: SceneConfig) -> None:
    """Rejects a scene whose explicit update would not be a convex combination."""
    d = config.diffusion_number
    if d > 0.25:
        raise InputError(f"unstable scene: diffusivity*dt/dx^2 = {d:.4g} > 0.25")
    ux, uy = face_velocities(config)
    courant = config.dt / config.dx
    max_ux = float(np.abs(ux).max()) * courant
    max_uy = float(np.abs(uy).max()) * courant
    if max(max_ux, max_uy) > 1.0:
        raise InputError(f"unstable scene: |v|*dt/dx = {max(max_ux, max_uy):.4g} > 1")
    combined = 4.0 * d + 2.0 * (max_ux + max_uy)
    if combined > 1.0 + 1e-12:
        raise InputError(f"unstable scene: 4D + 2(|ux|+|uy|) = {combined:.4g} > 1 breaks the maximum principle")


def window_exchange(config: SceneConfig) -> np.ndarray:
    """Per-cell relaxation coefficient toward ambient (0 away from windows)."""
    rows, cols = config.shape
    exchange = np.zeros((rows, cols))
    for w in config.windows:
        if w.side == "top":
            region = (slice(0, w.depth), slice(w.start, w.stop))
        elif w.side == "bottom":
            region = (slice(rows - w.depth, rows), slice(w.start, w.stop))
        elif w.side == "left":
            region = (slice(w.start, w.stop), slice(0, w.depth))
        else:
            region = (slice(w.start, w.stop), slice(cols - w.depth, cols))
        exchange[region] = np.maximum(exchange[region], w.exchange)
    return exchange


def initial_field(config: SceneConfig) -> np.ndarray:
    rows, cols = config.shape
    if config.initial_kind == "uniform":
        return np.full((rows, cols), float(config.initial_ppm))
    bump = config.bump
    r = np.arange(rows)[:, None] - bump.row
    c = np.arange(cols)[None, :] - bump.col
    shape = np.exp(-(r * r + c * c) / (2.0 * bump.sigma ** 2))
    return config.ambient_ppm + (config.initial_ppm - config.ambient_ppm) * shape


# ==========================================
# SOLVER
# ==========================================

def _solver_step(c: np.ndarray, ux: np.ndarray, uy: np.ndarray, courant: float, d: float, ambient: float) -> np.ndarray:
    rows, cols = c.shape
    outside_x = np.full((rows, 1), ambient)
    outside_y = np.full((1, cols), ambient)
    west = np.concatenate([outside_x, c], axis=1)
    east = np.concatenate([c, outside_x], axis=1)
    north = np.concatenate([outside_y, c], axis=0)
    south = np.concatenate([c, outside_y], axis=0)
    fx = np.where(ux > 0, ux * west, ux * east)
    fy = np.where(uy > 0, uy * north, uy * south)
    divergence = (fx[:, 1:] - fx[:, :-1]) + (fy[1:, :] - fy[:-1, :])

    padded = np.pad(c, 1, mode="edge")
    laplacian = padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:] - 4.0 * c
    return c - courant * divergence + d * laplacian


def simulate(config: SceneConfig, initial: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Runs the scene and returns `steps` snapshots in ppm, shape (steps, rows, cols).
    Snapshot 0 is the initial field; each later snapshot advances `substeps`
    solver steps.
    """
    check_stability(config)
    ux, uy = face_velocities(config)
    exchange = window_exchange(config)
    courant = config.dt / config.dx
    d = config.diffusion_number
    ambient = float(config.ambient_ppm)

    c = initial_field(config) if initial is None else np.array(initial, dtype=np.float64)
    if c.shape != config.shape:
        raise InputError(f"initial field shape {c.shape} does not match grid {config.shape}")

    snapshots = np.empty((config.steps,) + config.shape)
    snapshots[0] = c
    for t in range(1, config.steps):
        for _ in range(config.substeps):
            c = _solver_step(c, ux, uy, courant, d, ambient)
            c -= exchange * (c - ambient)
        snapshots[t] = c
    logger.info(f"🌬️ Simulated {config.steps} snapshots on a {config.grid_rows}x{config.grid_cols} grid "
                f"(mean {snapshots[0].mean():.1f} -> {snapshots[-1].mean():.1f} ppm)")
    return snapshots


# ==========================================
# NORMALISATION & COLOUR
# ==========================================

def normalize(field_ppm: np.ndarray, min_ppm: float, max_ppm: float) -> np.ndarray:
    if not max_ppm > min_ppm:
        raise InputError(f"degenerate normalisation range [{min_ppm}, {max_ppm}]")
    scaled = (np.asarray(field_ppm, dtype=np.float64) - min_ppm) / (max_ppm - min_ppm)
    return np.clip(scaled, 0.0, 1.0)


def colormap_rgb(field: np.ndarray) -> np.ndarray:
    """
    Blue -> cyan -> green -> yellow -> red map of a normalised field.
    A (H,W) or (1,H,W) input becomes (3,H,W); any other shape gets a leading channel axis.
    """
    values = np.asarray(field, dtype=np.float64)
    if values.ndim == 3 and values.shape[0] == 1:
        values = values[0]
    if np.any(values < 0.0) or np.any(values > 1.0) or not np.all(np.isfinite(values)):
        raise InputError("colormap_rgb expects a normalised field in [0, 1]")
    xs = [bp for bp, _ in COLORMAP_BREAKPOINTS]
    return np.stack([
        np.interp(values, xs, [rgb[ch] for _, rgb in COLORMAP_BREAKPOINTS]) for ch in range(3)
    ])


def to_channels(field: np.ndarray, channels: int) -> np.ndarray:
    """Normalised (H,W) field -> (C,H,W) model input."""
    if channels == 1:
        return np.asarray(field, dtype=np.float64)[None, ...]
    if channels == 3:
        return colormap_rgb(field)
    raise InputError(f"unsupported channel count {channels}")


# ==========================================
# SENSORS
# ==========================================

@dataclass(frozen=True)
class SensorSet:
    positions: Tuple[Tuple[int, int], ...]
    half_width: int = 5
    noise_std: float = 0.0

    @classmethod
    def from_settings(cls, settings: SensorSettings, shape: Tuple[int, int]) -> "SensorSet":
        rows, cols = shape
        positions = tuple((int(round(r * (rows - 1))), int(round(c * (cols - 1)))) for r, c in settings.positions)
        return cls(positions=positions, half_width=settings.half_width, noise_std=settings.noise_std)

    def __len__(self) -> int:
        return len(self.positions)

    def validate(self, shape: Tuple[int, int]) -> None:
        rows, cols = shape
        for r, c in self.positions:
            if not (0 <= r < rows and 0 <= c < cols):
                raise InputError(f"sensor at {(r, c)} lies outside the {rows}x{cols} grid")

    def zones(self, shape: Tuple[int, int]) -> List[Tuple[slice, slice]]:
        """Square zone of side 2*half_width around each sensor, shifted back inside the grid."""
        rows, cols = shape
        zones = []
        for r, c in self.positions:
            if self.half_width == 0:
                zones.append((slice(r, r + 1), slice(c, c + 1)))
                continue
            side_r = min(2 * self.half_width, rows)
            side_c = min(2 * self.half_width, cols)
            r0 = int(np.clip(r - self.half_width, 0, rows - side_r))
            c0 = int(np.clip(c - self.half_width, 0, cols - side_c))
            zones.append((slice(r0, r0 + side_r), slice(c0, c0 + side_c)))
        return zones


def sample_sensors(field_ppm: np.ndarray, sensors: SensorSet, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    field_ppm = np.asarray(field_ppm, dtype=np.float64)
    sensors.validate(field_ppm.shape)
    readings = np.array([field_ppm[r, c] for r, c in sensors.positions])
    if sensors.noise_std > 0:
        if rng is None:
            raise InputError("a random generator is required when sensor noise is enabled")
        readings = readings + rng.normal(0.0, sensors.noise_std, size=readings.shape)
    return readings


def observation_field(readings: Sequence[float], sensors: SensorSet, shape: Tuple[int, int],
                      min_ppm: Optional[float] = None, max_ppm: Optional[float] = None) -> np.ndarray:
    """
    Full-grid field from sensor readings: piecewise-linear interpolation on a
    Delaunay triangulation of the sensor positions, nearest sensor outside the
    convex hull, then each zone painted with its own reading. Normalised
    when a ppm range is given.
    """
    readings = np.asarray(readings, dtype=np.float64)
    if len(sensors) < 3:
        raise InputError(f"at least 3 sensors are needed, got {len(sensors)}")
    if readings.shape != (len(sensors),):
        raise InputError(f"expected {len(sensors)} readings, got shape {readings.shape}")
    sensors.validate(shape)
    points = np.array(sensors.positions, dtype=np.float64)
    if np.linalg.matrix_rank(points - points.mean(axis=0)) < 2:
        raise InputError("sensor positions are collinear; 2D interpolation is undefined")

    rows, cols = shape
    rr, cc = np.mgrid[0:rows, 0:cols]
    field = griddata(points, readings, (rr, cc), method="linear")
    outside = np.isnan(field)
    if outside.any():
        field[outside] = griddata(points, readings, (rr[outside], cc[outside]), method="nearest")
    for (zr, zc), value in zip(sensors.zones(shape), readings):
        field[zr, zc] = value

    if min_ppm is not None and max_ppm is not None:
        field = normalize(field, min_ppm, max_ppm)
    return field


def observe(truth_ppm: np.ndarray, timesteps: Sequence[int], sensors: SensorSet, config: SceneConfig,
            rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Readings (n_obs, n_sensors) and normalised observation fields (n_obs, rows, cols)."""
    readings = np.stack([sample_sensors(truth_ppm[t], sensors, rng) for t in timesteps])
    fields = np.stack([
        observation_field(r, sensors, config.shape, config.ambient_ppm, config.initial_ppm) for r in readings
    ])
    return readings, fields
