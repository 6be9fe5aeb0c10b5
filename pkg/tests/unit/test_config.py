from pathlib import Path

import pytest

from src.app.cli import main
from src.app.core.config import ExperimentConfig, ObservationSettings, RuntimeSettings, load_config
from src.app.core.errors import ConfigError

ROOT = Path(__file__).resolve().parents[2]
SMOKE_CONFIG = ROOT / "config" / "smoke.yaml"
DESK_CONFIG = ROOT / "config" / "settings.yaml"


class TestLoadConfig:
    def test_smoke_profile(self):
        config = load_config(SMOKE_CONFIG)
        assert config.seed == 7
        assert config.scene.shape == (16, 20)
        assert config.observations.resolve() == [10, 20, 30, 40]
        assert config.grid.lstm["hidden"] == [4, 6]
        assert config.source == SMOKE_CONFIG.resolve()

    def test_desk_profile_is_valid(self):
        config = load_config(DESK_CONFIG)
        assert config.latent_dim == config.cae.latent_dim
        assert config.assimilation.sda.max_state_dim >= config.scene.grid_rows * config.scene.grid_cols

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "absent.yaml")

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("seed: 1\ncae:\n  filterz: 3\n")
        with pytest.raises(ConfigError, match="filterz"):
            load_config(path)

    def test_bad_yaml(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("seed: [1, 2\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_top_level_must_be_a_mapping(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError, match="mapping"):
            load_config(path)

    def test_non_positive_sigma(self, tmp_path):
        path = tmp_path / "sigma.yaml"
        path.write_text("assimilation:\n  r_modes: [sample, 0.0]\n")
        with pytest.raises(ConfigError, match="sigma"):
            load_config(path)

    def test_latent_sizes_must_agree(self, tmp_path):
        path = tmp_path / "latent.yaml"
        path.write_text("cae:\n  latent_dim: 7\nlstm:\n  latent_dim: 5\n")
        with pytest.raises(ConfigError, match="latent_dim"):
            load_config(path)

    def test_unstable_scene(self, tmp_path):
        path = tmp_path / "unstable.yaml"
        path.write_text("scene:\n  diffusivity: 0.4\n")
        with pytest.raises(ConfigError, match="unstable"):
            load_config(path)


class TestOverrides:
    def test_nested_update_keeps_siblings(self):
        base = ExperimentConfig()
        changed = base.with_overrides(cae={"filters": 32}, seed=3)
        assert changed.cae.filters == 32 and changed.seed == 3
        assert changed.cae.latent_dim == base.cae.latent_dim
        assert base.cae.filters == 16

    def test_source_survives_overrides(self):
        config = load_config(SMOKE_CONFIG).with_overrides(seed=3)
        assert config.source == SMOKE_CONFIG.resolve()
        assert ExperimentConfig().with_overrides(seed=3).source is None

    def test_invalid_override(self):
        with pytest.raises(ConfigError):
            ExperimentConfig().with_overrides(cae={"latent_dim": 0})


class TestObservationSchedule:
    def test_evenly_spaced(self):
        assert ObservationSettings(count=3, first=0, last=10).resolve() == [0, 5, 10]

    def test_explicit_list_wins(self):
        assert ObservationSettings(timesteps=[9, 3, 3]).resolve() == [3, 9]


class TestRuntimeSettings:
    def test_environment_prefix(self, monkeypatch):
        monkeypatch.setenv("LADA_THREADS", "4")
        monkeypatch.setenv("LADA_LOG_LEVEL", "DEBUG")
        settings = RuntimeSettings()
        assert settings.threads == 4 and settings.log_level == "DEBUG"


class TestCliExitCodes:
    def test_missing_config(self, tmp_path):
        assert main(["split", "--config", str(tmp_path / "nope.yaml")]) == 2

    def test_zero_threads(self, tmp_path):
        assert main(["split", "--config", str(SMOKE_CONFIG), "--out", str(tmp_path), "--threads", "0"]) == 2

    def test_unknown_log_level(self, tmp_path):
        assert main(["split", "--config", str(SMOKE_CONFIG), "--out", str(tmp_path), "--log-level", "LOUD"]) == 2

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            main(["teleport"])
