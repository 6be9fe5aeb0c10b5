from pathlib import Path

import pytest

from src.app.core.config import load_config

DESK_CONFIG = Path(__file__).resolve().parents[2] / "config" / "settings.yaml"


@pytest.fixture(scope="session")
def desk_config():
    return load_config(DESK_CONFIG)


@pytest.fixture(scope="session")
def desk_run(desk_config, tmp_path_factory):
    """Full desk-scale pipeline (45x62 grid, p=7), shared by the acceptance checks."""
    from src.harness.pipeline import run_full_pipeline

    return run_full_pipeline(desk_config, out_dir=tmp_path_factory.mktemp("desk_run"), with_report=False)
