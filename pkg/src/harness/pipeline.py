"""
Assimilation stages and the end-to-end run.

    scene -> split -> CAE -> encode -> LSTM -> LA (every R mode) -> sDA -> tables, images, manifest, report
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from src.app.core.config import ExperimentConfig
from src.app.core.errors import MemoryGuardError, NumericalError
from src.engine.assimilate import (
    AssimilationResult,
    RMode,
    check_state_dim,
    commuting_projection,
    latent_assimilate,
    records_frame,
    sample_covariance,
    standard_da,
)
from src.data import field_io
from src.harness.tables import ResultTable
from src.harness.workspace import RunWorkspace, physical_mse

logger = logging.getLogger(__name__)

NO_DA = "No DA"
LA_COLUMNS = ["Latent-MSE", "Latent-MSE-truth", "Physical-MSE", "Physical-MSE-truth", "Mean-Time"]
SDA_COLUMNS = ["MSE", "MSE-truth", "Mean-Time"]
COMPARISON_COLUMNS = ["LA-MSE", "sDA-MSE", "LA-Time", "sDA-Time"]


@dataclass
class LatentOutcome:
    table: ResultTable
    results: Dict[str, AssimilationResult] = field(default_factory=dict)


# ==========================================
# LATENT ASSIMILATION
# ==========================================

def run_latent_assimilation(workspace: RunWorkspace, export_images: Optional[bool] = None) -> LatentOutcome:
    """
    Runs the latent Kalman correction once per configured R mode and writes
    `la_records_{mode}.csv`, `la_latent.csv` and the triptych images.
    A mode whose gain fails the condition guard is recorded as failed.
    """
    cfg = workspace.config
    settings = cfg.assimilation
    scene, assignment = workspace.scene(), workspace.split()
    latents = workspace.latents()
    model, surrogate = workspace.cae(), workspace.surrogate()
    export_images = cfg.export.triptychs if export_images is None else export_images

    Q = sample_covariance(latents.background[list(assignment.indices(settings.q_source))],
                          normalize=settings.normalize_covariance)
    observed = np.stack([latents.observed[t] for t in scene.obs_timesteps])
    logger.info(f"🧮 Q from {Q.samples} {settings.q_source} latents, R sample set of {len(observed)} encoded observations")

    outcome = LatentOutcome(ResultTable("la_latent", LA_COLUMNS, index_name="mode"))
    for raw_mode in settings.r_modes:
        mode = RMode.parse(raw_mode)
        try:
            R = mode.build(cfg.latent_dim, observed, normalize=settings.normalize_covariance)
            result = latent_assimilate(
                model, surrogate, latents.background, latents.observed, Q, R,
                truth_latents=latents.background, timing_repeats=settings.timing_repeats,
                condition_limit=settings.condition_limit, nugget=settings.nugget,
            )
        except NumericalError as e:
            outcome.table.add_failure(mode.label, str(e))
            continue
        if not result.records:
            outcome.table.add_failure(mode.label, "no observation timestep could be assimilated")
            continue
        outcome.results[mode.label] = result
        _write_latent_records(workspace, mode.label, result)
        if export_images:
            _write_triptychs(workspace, mode.label, result)
        logger.info(f"   [LA] mode={mode.label} latent mse {np.mean([r.mse_analysis for r in result.records]):.3e}")

    if outcome.results:
        first = next(iter(outcome.results.values()))
        no_da = _latent_row(workspace, first, use_analysis=False)
        outcome.table.add_row(NO_DA, {**no_da, "Mean-Time": 0.0})
        for label, result in outcome.results.items():
            outcome.table.add_row(label, _latent_row(workspace, result, use_analysis=True))
    outcome.table.to_csv(workspace.table_path("la_latent"))
    return outcome


def _decoded(result: AssimilationResult, use_analysis: bool) -> Dict[int, np.ndarray]:
    return result.decoded_analyses if use_analysis else result.decoded_forecasts


def _latent_row(workspace: RunWorkspace, result: AssimilationResult, use_analysis: bool) -> Dict[str, float]:
    scene = workspace.scene()
    latent, latent_truth, phys, phys_truth, seconds = [], [], [], [], []
    for record in result.records:
        t = record.timestep
        row = record.as_row()
        latent.append(row["mse_analysis" if use_analysis else "mse_forecast"])
        latent_truth.append(row["mse_analysis_truth" if use_analysis else "mse_forecast_truth"])
        decoded = _decoded(result, use_analysis)[t]
        phys.append(physical_mse(decoded, scene.observation(t)))
        phys_truth.append(physical_mse(decoded, scene.fields[t]))
        seconds.append(record.correction_seconds)
    return {
        "Latent-MSE": float(np.mean(latent)),
        "Latent-MSE-truth": float(np.mean(latent_truth)),
        "Physical-MSE": float(np.mean(phys)),
        "Physical-MSE-truth": float(np.mean(phys_truth)),
        "Mean-Time": float(np.mean(seconds)),
    }


def _write_latent_records(workspace: RunWorkspace, label: str, result: AssimilationResult) -> None:
    scene = workspace.scene()
    df = result.frame()
    df["physical_mse_forecast"] = [physical_mse(result.decoded_forecasts[t], scene.observation(t)) for t in df["timestep"]]
    df["physical_mse_analysis"] = [physical_mse(result.decoded_analyses[t], scene.observation(t)) for t in df["timestep"]]
    path = workspace.table_path(f"la_records_{label}")
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format="%.17g")


def _write_triptychs(workspace: RunWorkspace, label: str, result: AssimilationResult) -> None:
    scene = workspace.scene()
    for t in sorted(result.decoded_analyses):
        field_io.write_triptych(workspace.images_dir / label / f"triptych_{t:05}.pgm",
                                result.decoded_forecasts[t], scene.observation(t), result.decoded_analyses[t])


# ==========================================
# FULL-SPACE BASELINE
# ==========================================

def run_baseline_da(workspace: RunWorkspace) -> ResultTable:
    """
    Standard DA on flattened fields: forecast = the simulated field at each
    observation timestep, Q from the background-set fields, R per mode.
    Writes `sda_records_{mode}.csv` and `sda_physical.csv`.
    """
    cfg = workspace.config
    settings, sda = cfg.assimilation, cfg.assimilation.sda
    scene, assignment = workspace.scene(), workspace.split()
    n = int(np.prod(scene.fields.shape[1:]))
    check_state_dim(n, sda.max_state_dim)

    background = scene.fields[list(assignment.indices(settings.q_source))].reshape(-1, n)
    Q = sample_covariance(background, normalize=settings.normalize_covariance)
    observed = scene.obs_fields.reshape(len(scene.obs_fields), n)
    forecasts = {t: scene.fields[t] for t in scene.obs_timesteps}
    observations = dict(zip(scene.obs_timesteps, scene.obs_fields))
    logger.info(f"🧮 sDA at n={n}: Q from {Q.samples} {settings.q_source} fields")

    table = ResultTable("sda_physical", SDA_COLUMNS, index_name="mode")
    rows = {}
    no_da = None
    for raw_mode in settings.r_modes:
        mode = RMode.parse(raw_mode)
        try:
            R = mode.build(n, observed, normalize=settings.normalize_covariance)
            if mode.sigma is None and sda.sample_r == "projected":
                R = commuting_projection(R, Q)
            records = standard_da(forecasts, observations, Q, R, truth_fields=forecasts, max_state_dim=sda.max_state_dim,
                                  condition_limit=settings.condition_limit, nugget=sda.nugget, keep_gain=sda.keep_gain)
        except NumericalError as e:
            table.add_failure(mode.label, str(e))
            continue
        frame = records_frame(records)
        frame.to_csv(workspace.table_path(f"sda_records_{mode.label}"), index=False, float_format="%.17g")
        rows[mode.label] = {"MSE": float(frame["mse_analysis"].mean()),
                            "MSE-truth": float(frame["mse_analysis_truth"].mean()),
                            "Mean-Time": float(frame["correction_seconds"].mean())}
        if no_da is None:
            no_da = {"MSE": float(frame["mse_forecast"].mean()), "MSE-truth": 0.0, "Mean-Time": 0.0}

    if no_da is not None:
        table.add_row(NO_DA, no_da)
    for label, values in rows.items():
        table.add_row(label, values)
    table.to_csv(workspace.table_path("sda_physical"))
    return table


def compare_la_sda(la: ResultTable, sda: ResultTable) -> ResultTable:
    """Physical-space MSE and correction time of both methods, one row per mode both completed."""
    table = ResultTable("la_vs_sda_physical", COMPARISON_COLUMNS, index_name="mode")
    for label in la.labels:
        if label not in sda.labels:
            continue
        la_row, sda_row = la.row(label), sda.row(label)
        table.add_row(label, {"LA-MSE": la_row["Physical-MSE"], "sDA-MSE": sda_row["MSE"],
                              "LA-Time": la_row["Mean-Time"], "sDA-Time": sda_row["Mean-Time"]})
    return table


# ==========================================
# END TO END
# ==========================================

@dataclass
class PipelineBundle:
    workspace: RunWorkspace
    latent: LatentOutcome
    sda: Optional[ResultTable]
    comparison: Optional[ResultTable]
    report_path: Optional[object] = None


def run_full_pipeline(config: ExperimentConfig, out_dir=None, with_report: bool = True) -> PipelineBundle:
    """
    Every stage in order, each timed into the manifest. A failing stage raises
    StageError naming it; artefacts written before the failure stay on disk.
    """
    workspace = RunWorkspace(config, out_dir)
    extra = {}
    with workspace.stage("generate"):
        workspace.scene(force=True)
        workspace.export_scene()
    with workspace.stage("split"):
        workspace.split()
    with workspace.stage("train-ae"):
        workspace.cae(force=True)
    with workspace.stage("encode"):
        workspace.latents(force=True)
    with workspace.stage("train-lstm"):
        workspace.surrogate(force=True)
    with workspace.stage("assimilate"):
        latent = run_latent_assimilation(workspace)

    sda, comparison = None, None
    with workspace.stage("baseline-da"):
        try:
            sda = run_baseline_da(workspace)
        except MemoryGuardError as e:
            logger.warning(f"⚠️ Skipping standard DA: {e}")
            extra["baseline_da"] = "skipped (state dimension above max_state_dim)"
    if sda is not None:
        comparison = compare_la_sda(latent.table, sda)
        comparison.to_csv(workspace.table_path("la_vs_sda_physical"))

    bundle = PipelineBundle(workspace, latent, sda, comparison)
    workspace.write_manifest(extra)
    if with_report:
        from src.harness.report import build_report

        with workspace.stage("report"):
            bundle.report_path = build_report(workspace.root)
    workspace.write_manifest(extra)
    logger.info(f"🏁 Pipeline finished, outputs in {workspace.root}")
    return bundle
