from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import yaml

from src.app.cli import main
from src.app.core.config import load_config
from src.harness.pipeline import NO_DA, run_full_pipeline
from src.harness.tables import drop_time_columns
from src.harness.workspace import RunWorkspace

SMOKE_CONFIG = Path(__file__).resolve().parents[2] / "config" / "smoke.yaml"
MODES = ["sample", "0.01I", "0.001I", "0.0001I"]
IDENTITY_MODES = ["0.01I", "0.001I", "0.0001I"]


def _tables(root: Path):
    return {p.name: p for p in sorted((root / "tables").glob("*.csv"))}


class TestSmokeRun:
    def test_every_stage_leaves_its_artefacts(self, smoke_run):
        root = smoke_run.workspace.root
        for name in ("la_latent", "sda_physical", "la_vs_sda_physical", "cae_history", "lstm_history",
                     "cae_reconstruction", "lstm_forecast"):
            assert (root / "tables" / f"{name}.csv").exists(), name
        for mode in MODES:
            assert (root / "tables" / f"la_records_{mode}.csv").exists()
            assert (root / "tables" / f"sda_records_{mode}.csv").exists()
        assert (root / "split.csv").exists()
        assert (root / "models" / "cae.lada").exists() and (root / "models" / "lstm.lada").exists()
        assert (root / "scene" / "snapshots" / "snap_00020.pgm").exists()

    def test_triptych_for_every_observation(self, smoke_run):
        root = smoke_run.workspace.root
        timesteps = smoke_run.workspace.scene().obs_timesteps
        assert timesteps == [10, 20, 30, 40]
        for mode in MODES:
            for t in timesteps:
                assert (root / "images" / mode / f"triptych_{t:05}.pgm").exists(), (mode, t)

    def test_assimilation_beats_the_free_run(self, smoke_run):
        table = pd.read_csv(smoke_run.workspace.table_path("la_latent"), index_col=0)
        assert (table["status"] == "ok").all()
        assert list(table.index) == [NO_DA] + MODES
        for mode in IDENTITY_MODES:
            assert table.loc[mode, "Latent-MSE"] < table.loc[NO_DA, "Latent-MSE"]

    def test_identity_scaling_order(self, smoke_run):
        latent = smoke_run.latent.table
        mse = [latent.row(mode)["Latent-MSE"] for mode in IDENTITY_MODES]
        assert mse[0] >= mse[1] >= mse[2]

    def test_records_agree_with_summary(self, smoke_run):
        records = pd.read_csv(smoke_run.workspace.table_path("la_records_0.001I"))
        assert records["timestep"].tolist() == [10, 20, 30, 40]
        assert (records["sigma_mode"] == "0.001I").all()
        assert records["mse_analysis"].mean() == pytest.approx(smoke_run.latent.table.row("0.001I")["Latent-MSE"], rel=1e-12)

    def test_comparison_lines_up_both_methods(self, smoke_run):
        comparison = smoke_run.comparison.values()
        assert list(comparison.index) == [NO_DA] + MODES
        for mode in MODES:
            assert comparison.loc[mode, "sDA-MSE"] == smoke_run.sda.row(mode)["MSE"]

    def test_report_and_manifest(self, smoke_run):
        root = smoke_run.workspace.root
        assert smoke_run.report_path == root / "report.md"
        text = (root / "report.md").read_text()
        assert "la_latent" in text and "## Assimilation" in text
        assert (root / "report.pdf").stat().st_size > 0
        assert list((root / "report").glob("*.png"))
        manifest = (root / "manifest.txt").read_text()
        assert "seed=7" in manifest and "stage_assimilate_seconds=" in manifest
        assert f"config={SMOKE_CONFIG.resolve()}\n" in manifest
        assert f"output_dir={root}\n" in manifest

    def test_autoencoder_is_scored_on_observation_fields(self, smoke_run):
        table = pd.read_csv(smoke_run.workspace.table_path("cae_reconstruction"), index_col=0)
        assert list(table.index) == ["train", "val", "test", "observations"]
        assert np.isfinite(table.loc["observations", "mse"])

    def test_standard_da_with_the_sample_estimate_never_overshoots(self, smoke_run):
        records = pd.read_csv(smoke_run.workspace.table_path("sda_records_sample"))
        assert (records["mse_analysis"] <= records["mse_forecast"] * (1.0 + 1e-9) + 1e-15).all()
        assert smoke_run.sda.row("sample")["MSE"] <= smoke_run.sda.row(NO_DA)["MSE"]


class TestWorkspace:
    def test_augmentation_fields_match_the_assimilated_observations(self, smoke_config):
        workspace = RunWorkspace(smoke_config)
        scene = workspace.scene()
        np.testing.assert_allclose(workspace.observation_style_fields(scene.obs_timesteps), scene.obs_fields, atol=1e-12)

    def _readings(self, config, out_dir):
        return RunWorkspace(config, out_dir).scene(force=True).readings

    def test_sensor_noise_follows_the_scene_seed(self, smoke_config, tmp_path):
        noisy = smoke_config.with_overrides(sensors={"noise_std": 5.0})
        base = self._readings(noisy, tmp_path / "a")
        other_run_seed = self._readings(noisy.with_overrides(seed=99), tmp_path / "b")
        other_scene_seed = self._readings(noisy.with_overrides(scene={"seed": 3}), tmp_path / "c")
        np.testing.assert_array_equal(base, other_run_seed)
        assert not np.allclose(base, other_scene_seed)


class TestVariants:
    def test_three_channel_fields(self, smoke_config, tmp_path):
        bundle = run_full_pipeline(smoke_config.with_overrides(channels=3), out_dir=tmp_path, with_report=False)
        scene = bundle.workspace.scene()
        assert scene.fields.shape[1:] == (3, 16, 20)
        assert not bundle.latent.table.failures
        for result in bundle.latent.results.values():
            assert [r.timestep for r in result.records] == [10, 20, 30, 40]
            for decoded in result.decoded_analyses.values():
                assert decoded.shape == (3, 16, 20)
        assert bundle.sda is not None and "sample" in bundle.sda.labels

    def test_segment_windowing(self, smoke_config, tmp_path):
        config = smoke_config.with_overrides(split={"lstm_windowing": "segments"}, lstm={"steps": 1})
        bundle = run_full_pipeline(config, out_dir=tmp_path, with_report=False)
        workspace = bundle.workspace
        train = set(workspace.split().train)
        samples = workspace.sequence_samples("train")
        assert samples
        for sample in samples:
            assert sample.target_index in train and sample.target_index - 1 in train
        assert list(bundle.latent.results) == MODES
        assert workspace.surrogate().steps == 1


class TestDeterminism:
    def test_rerun_gives_identical_tables(self, smoke_run, tmp_path):
        again = run_full_pipeline(load_config(SMOKE_CONFIG), out_dir=tmp_path / "again", with_report=False)
        first, second = _tables(smoke_run.workspace.root), _tables(again.workspace.root)
        assert first.keys() == second.keys()
        for name in first:
            a = drop_time_columns(pd.read_csv(first[name]))
            b = drop_time_columns(pd.read_csv(second[name]))
            pd.testing.assert_frame_equal(a, b, check_exact=True, obj=name)


class TestCommandLine:
    def test_stage_by_stage(self, tmp_path):
        common = ["--config", str(SMOKE_CONFIG), "--out", str(tmp_path)]
        for command in ("generate", "split", "train-ae", "train-lstm", "assimilate", "baseline-da", "report"):
            assert main([command, *common]) == 0, command
        assert (tmp_path / "tables" / "la_vs_sda_physical.csv").exists()
        assert (tmp_path / "report.md").exists()
        assert "command=report" in (tmp_path / "manifest.txt").read_text()

    def test_memory_guard_exit_code(self, tmp_path):
        raw = yaml.safe_load(SMOKE_CONFIG.read_text())
        raw.setdefault("assimilation", {})["sda"] = {"max_state_dim": 10}
        path = tmp_path / "tight.yaml"
        path.write_text(yaml.safe_dump(raw))
        assert main(["baseline-da", "--config", str(path), "--out", str(tmp_path / "out")]) == 3

    def test_full_run_skips_standard_da_above_the_cap(self, tmp_path):
        config = load_config(SMOKE_CONFIG).with_overrides(assimilation={"sda": {"max_state_dim": 10}})
        bundle = run_full_pipeline(config, out_dir=tmp_path, with_report=False)
        assert bundle.sda is None
        assert not (tmp_path / "tables" / "sda_physical.csv").exists()
        assert "baseline_da=skipped" in (tmp_path / "manifest.txt").read_text()
