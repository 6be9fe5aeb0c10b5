from pathlib import Path

import numpy as np
import pytest

from src.app.core.config import ExperimentConfig, SceneConfig, load_config

ROOT = Path(__file__).resolve().parents[1]
SMOKE_CONFIG = ROOT / "config" / "smoke.yaml"
DESK_CONFIG = ROOT / "config" / "settings.yaml"


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def still_room():
    """Tiny scene with nothing moving: no diffusion, no flow, no windows."""
    return SceneConfig(
        grid_rows=6, grid_cols=7, diffusivity=0.0,
        velocity={"kind": "uniform", "vx": 0.0, "vy": 0.0},
        windows=[], steps=5, substeps=3,
    )


@pytest.fixture
def smoke_config(tmp_path) -> ExperimentConfig:
    return load_config(SMOKE_CONFIG).with_overrides(output_dir=str(tmp_path / "smoke"))


@pytest.fixture(scope="session")
def smoke_run(tmp_path_factory):
    """One full smoke pipeline shared by the integration tests (read-only)."""
    from src.harness.pipeline import run_full_pipeline

    config = load_config(SMOKE_CONFIG)
    return run_full_pipeline(config, out_dir=tmp_path_factory.mktemp("smoke_run"))
