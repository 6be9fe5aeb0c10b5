"""
Hyperparameter grid search and CAE structure comparison.

Every cell of the Cartesian product is scored on its own thread with its
own seed; a failing cell is recorded in the table and the search goes on.
"""
import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.app.core.config import ExperimentConfig, StructureVariant
from src.app.core.errors import InputError, LadaError
from src.engine.cae import CaeArchitecture, cross_validate, summarize_folds
from src.engine.surrogate import train_surrogate
from src.harness.tables import CV_COLUMNS, ResultTable
from src.harness.workspace import RunWorkspace, derive_seed

logger = logging.getLogger(__name__)

Cell = Dict[str, object]


@dataclass
class SearchOutcome:
    table: ResultTable
    raw: pd.DataFrame
    best: Optional[str]
    cells: Dict[str, Cell]


def expand_axes(axes: Mapping[str, Sequence]) -> List[Cell]:
    if not axes or any(len(values) == 0 for values in axes.values()):
        raise InputError(f"grid search needs non-empty axes, got {dict(axes)}")
    names = list(axes)
    return [dict(zip(names, combo)) for combo in itertools.product(*(axes[n] for n in names))]


def cell_label(cell: Cell) -> str:
    return ",".join(f"{k}={v}" for k, v in cell.items())


# ==========================================
# CELL SCORING
# ==========================================

def _cv_fields(workspace: RunWorkspace) -> np.ndarray:
    scene, assignment = workspace.scene(), workspace.split()
    return scene.fields[sorted(assignment.train + assignment.val)]


def score_cae_cell(workspace: RunWorkspace, config: ExperimentConfig, seed: int) -> pd.DataFrame:
    cv = config.cross_validation
    settings = config.cae
    arch = CaeArchitecture.from_settings(settings, workspace.scene().fields.shape[1:])
    result = cross_validate(arch, _cv_fields(workspace), k=cv.folds, repeats=cv.repeats,
                            epochs=settings.epochs, batch=settings.batch, lr=settings.lr, seed=seed)
    return result.records


def score_lstm_cell(workspace: RunWorkspace, config: ExperimentConfig, seed: int) -> pd.DataFrame:
    """`lstm_repeats` independent fits, each scored on the validation windows."""
    settings = config.lstm
    train_samples = workspace.sequence_samples("train", settings.steps)
    val_samples = workspace.sequence_samples("val", settings.steps)
    if not train_samples or not val_samples:
        raise InputError(f"no train/val windows for q={settings.steps}")
    train_latents = workspace.latents().background[list(workspace.split().train)]
    rows = []
    for r in range(config.cross_validation.lstm_repeats):
        start = time.perf_counter()
        surrogate, _ = train_surrogate(
            train_samples, None, config.latent_dim, settings.hidden, settings.steps, settings.activation,
            settings.epochs, settings.batch, settings.lr, derive_seed(seed, r),
            scaler_latents=train_latents, log_every=max(settings.epochs, 1), residual=settings.residual,
        )
        report = surrogate.evaluate(val_samples)
        rows.append({"repeat": r, "fold": 0, "mse": report.mse, "mae": report.mae,
                     "seconds": time.perf_counter() - start})
    return pd.DataFrame(rows, columns=["repeat", "fold", "mse", "mae", "seconds"])


# ==========================================
# SEARCH
# ==========================================

def _evaluate_cells(kind: str, cells: Dict[str, ExperimentConfig], workspace: RunWorkspace,
                    threads: int, table_name: str) -> Tuple[ResultTable, pd.DataFrame]:
    scorer = score_cae_cell if kind == "cae" else score_lstm_cell
    seed = workspace.config.seed
    # shared stages are built before the threads start
    workspace.split()
    if kind == "lstm":
        workspace.latents()

    def run(indexed):
        index, (label, config) = indexed
        logger.info(f"🔎 [{table_name}] cell {index + 1}/{len(cells)}: {label}")
        try:
            return label, scorer(workspace, config, derive_seed(seed, 10, index)), None
        except (LadaError, ValueError) as e:
            return label, None, str(e)

    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        outcomes = list(pool.map(run, enumerate(cells.items())))

    table = ResultTable(table_name, CV_COLUMNS, index_name="cell")
    raw = []
    for label, records, error in outcomes:
        if error is not None:
            table.add_failure(label, error)
            continue
        table.add_row(label, summarize_folds(records))
        raw.append(records.assign(cell=label))
    raw_frame = pd.concat(raw, ignore_index=True) if raw else pd.DataFrame(columns=["repeat", "fold", "mse", "mae", "seconds", "cell"])
    return table, raw_frame[["cell", "repeat", "fold", "mse", "mae", "seconds"]]


def _write_outcome(workspace: RunWorkspace, name: str, table: ResultTable, raw: pd.DataFrame,
                   cells: Dict[str, Cell]) -> SearchOutcome:
    table.to_csv(workspace.table_path(name))
    raw.to_csv(workspace.table_path(f"{name}_raw"), index=False, float_format="%.17g")
    best = table.best()
    if best is None:
        logger.error(f"❌ [{name}] every cell failed")
    else:
        pd.DataFrame([{"cell": best, **cells[best], **table.row(best)}]).to_csv(
            workspace.table_path(f"{name}_best"), index=False, float_format="%.17g")
        logger.info(f"🏆 [{name}] best cell: {best} (Mean-MSE {table.row(best)['Mean-MSE']:.3e})")
    return SearchOutcome(table, raw, best, cells)


def run_grid_search(workspace: RunWorkspace, kind: Literal["cae", "lstm"],
                    axes: Optional[Mapping[str, Sequence]] = None, threads: int = 1) -> SearchOutcome:
    """
    CAE cells are scored by k-fold cross-validation on train+val fields,
    LSTM cells by repeated fits scored on validation windows. Writes
    `gridsearch_{kind}.csv`, `gridsearch_{kind}_raw.csv` and `gridsearch_{kind}_best.csv`.
    """
    if kind not in ("cae", "lstm"):
        raise InputError(f"unknown grid kind '{kind}'")
    axes = axes if axes is not None else getattr(workspace.config.grid, kind)
    axes = {("hidden" if k == "neurons" else k): v for k, v in axes.items()}
    grid = expand_axes(axes)
    cells = {cell_label(cell): cell for cell in grid}
    configs = {label: workspace.config.with_overrides(**{kind: cell}) for label, cell in cells.items()}
    table, raw = _evaluate_cells(kind, configs, workspace, threads, f"gridsearch_{kind}")
    return _write_outcome(workspace, f"gridsearch_{kind}", table, raw, cells)


def run_structure_search(workspace: RunWorkspace, variants: Optional[Sequence[StructureVariant]] = None,
                         threads: int = 1) -> SearchOutcome:
    """Cross-validated comparison of encoder depth, kernel sizes and decoder kind."""
    variants = list(variants if variants is not None else workspace.config.structures)
    if not variants:
        raise InputError("structure search needs at least one variant")
    cells = {v.name: {"layers": v.layers, "kernels": v.kernels, "decoder": v.decoder} for v in variants}
    configs = {name: workspace.config.with_overrides(cae=cell) for name, cell in cells.items()}
    table, raw = _evaluate_cells("cae", configs, workspace, threads, "structures_cae")
    return _write_outcome(workspace, "structures_cae", table, raw, cells)
