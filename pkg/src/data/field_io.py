"""Field snapshots on disk: CSV grids, 8-bit PGM images and npz caches."""
import logging
from pathlib import Path
from typing import Dict

import numpy as np
import pandas as pd
from PIL import Image

from src.app.core.errors import InputError

logger = logging.getLogger(__name__)


def _to_2d(field: np.ndarray) -> np.ndarray:
    field = np.asarray(field, dtype=np.float64)
    if field.ndim == 3 and field.shape[0] == 1:
        field = field[0]
    if field.ndim != 2:
        raise InputError(f"expected a (H,W) or (1,H,W) field, got shape {field.shape}")
    return field


def to_uint8(field: np.ndarray) -> np.ndarray:
    return np.round(np.clip(field, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_field_csv(path, field: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(_to_2d(field)).to_csv(path, header=False, index=False, float_format="%.10g")
    return path


def read_field_csv(path) -> np.ndarray:
    return pd.read_csv(path, header=None).to_numpy(dtype=np.float64)


def write_pgm(path, field: np.ndarray) -> Path:
    """Normalised field -> binary P5 PGM (3-channel fields go to P6 with the same stem)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    field = np.asarray(field, dtype=np.float64)
    if field.ndim == 3 and field.shape[0] == 3:
        path = path.with_suffix(".ppm")
        Image.fromarray(to_uint8(field.transpose(1, 2, 0)), mode="RGB").save(path, format="PPM")
        return path
    Image.fromarray(to_uint8(_to_2d(field)), mode="L").save(path, format="PPM")
    return path


def write_triptych(path, forecast: np.ndarray, observation: np.ndarray, analysis: np.ndarray, gap: int = 2) -> Path:
    """Forecast | observation | analysis side by side, separated by white columns."""
    panels = [np.asarray(p, dtype=np.float64) for p in (forecast, observation, analysis)]
    if len({p.shape for p in panels}) != 1:
        raise InputError(f"triptych panels differ in shape: {[p.shape for p in panels]}")
    if panels[0].ndim == 2:
        spacer = np.ones((panels[0].shape[0], gap))
        strip = np.concatenate([panels[0], spacer, panels[1], spacer, panels[2]], axis=1)
    else:
        spacer = np.ones(panels[0].shape[:2] + (gap,))
        strip = np.concatenate([panels[0], spacer, panels[1], spacer, panels[2]], axis=2)
    return write_pgm(path, strip)


def export_snapshots(out_dir, fields: np.ndarray, every: int) -> int:
    """Writes snap_{t:05}.csv and snap_{t:05}.pgm for every `every`-th snapshot."""
    if every <= 0:
        return 0
    out_dir = Path(out_dir)
    count = 0
    for t in range(0, len(fields), every):
        write_field_csv(out_dir / f"snap_{t:05}.csv", fields[t])
        write_pgm(out_dir / f"snap_{t:05}.pgm", fields[t])
        count += 1
    logger.info(f"🖼️ Exported {count} snapshots to {out_dir}")
    return count


def save_arrays(path, **arrays) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **arrays)
    return path


def load_arrays(path) -> Dict[str, np.ndarray]:
    with np.load(path) as data:
        return {key: data[key] for key in data.files}
