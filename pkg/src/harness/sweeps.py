import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

from src.app.core.errors import InputError, LadaError
from src.engine.assimilate import RMode
from src.harness.pipeline import NO_DA, run_latent_assimilation
from src.harness.tables import ResultTable
from src.harness.workspace import RunWorkspace

logger = logging.getLogger(__name__)


@dataclass
class SweepOutcome:
    latent: ResultTable
    physical: ResultTable
    seconds: ResultTable
    per_size: Dict[int, ResultTable] = field(default_factory=dict)


def _size_label(size: int) -> str:
    return f"p={size}"


def _run_size(base: RunWorkspace, size: int) -> ResultTable:
    config = base.config.with_overrides(
        cae={"latent_dim": size},
        lstm={"latent_dim": None},
        export={"triptychs": False},
    )
    workspace = RunWorkspace(config, base.root / "sweep" / f"p{size}", shared_scene=base.scene())
    logger.info(f"📐 Latent sweep: training CAE + LSTM at p={size}")
    workspace.cae(force=True)
    workspace.latents(force=True)
    workspace.surrogate(force=True)
    outcome = run_latent_assimilation(workspace)
    if outcome.table.failures:
        raise InputError(f"R modes failed at p={size}: {outcome.table.failures}")
    return outcome.table


def run_latent_sweep(workspace: RunWorkspace, sizes: Optional[Sequence[int]] = None, threads: int = 1) -> SweepOutcome:
    """
    Retrains the autoencoder and the surrogate once per latent size on the
    shared scene, runs every R mode, and writes `sweep_latent_mse.csv`,
    `sweep_physical_mse.csv` and `sweep_correction_seconds.csv`
    (one row per size, one column per mode).
    """
    sizes = list(sizes if sizes is not None else workspace.config.sweep.latent_sizes)
    if not sizes or any(s < 1 for s in sizes):
        raise InputError(f"latent sizes must all be >= 1, got {sizes}")
    modes = [RMode.parse(m).label for m in workspace.config.assimilation.r_modes]
    workspace.scene()

    def run(size):
        try:
            return size, _run_size(workspace, size), None
        except (LadaError, ValueError) as e:
            return size, None, str(e)

    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        results = list(pool.map(run, sizes))

    outcome = SweepOutcome(
        latent=ResultTable("sweep_latent_mse", [NO_DA] + modes, index_name="latent_size"),
        physical=ResultTable("sweep_physical_mse", [NO_DA] + modes, index_name="latent_size"),
        seconds=ResultTable("sweep_correction_seconds", modes, index_name="latent_size"),
    )
    for size, table, error in results:
        label = _size_label(size)
        if error is not None:
            for target in (outcome.latent, outcome.physical, outcome.seconds):
                target.add_failure(label, error)
            continue
        outcome.per_size[size] = table
        frame = table.values()
        outcome.latent.add_row(label, frame["Latent-MSE"].to_dict())
        outcome.physical.add_row(label, frame["Physical-MSE"].to_dict())
        outcome.seconds.add_row(label, frame["Mean-Time"].drop(NO_DA).to_dict())

    for table in (outcome.latent, outcome.physical, outcome.seconds):
        table.to_csv(workspace.table_path(table.name))
    return outcome
