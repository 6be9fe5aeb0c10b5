"""
Command-line entry point.

    lada <command> [--config FILE] [--seed N] [--out DIR] [--threads N] [--log-level LEVEL]

Exit codes: 0 success, 1 other failure, 2 configuration error, 3 numerical failure.
"""
import argparse
import sys
from typing import Callable, Dict, Optional, Sequence

from pydantic import ValidationError

from src.app.core.config import ExperimentConfig, RuntimeSettings, load_config
from src.app.core.errors import ConfigError, LadaError
from src.app.core.logger import logger, set_log_level
from src.harness.tables import ResultTable

COMMANDS = {
    "generate": "simulate the scene, sample the sensors and export snapshots",
    "split": "write the train/val/test assignment",
    "train-ae": "train the convolutional autoencoder",
    "train-lstm": "encode the trajectory and train the LSTM surrogate",
    "assimilate": "latent assimilation for every configured R mode",
    "baseline-da": "standard DA in the full physical space",
    "gridsearch-ae": "cross-validated autoencoder grid search",
    "gridsearch-lstm": "repeated-fit LSTM grid search",
    "structure-ae": "cross-validated comparison of autoencoder structures",
    "sweep-latent": "retrain and assimilate for every latent size",
    "report": "markdown + PDF report of every table in the output directory",
    "run": "the whole pipeline, generate to report",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment file (default: built-in desk profile)")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("--threads", type=int, help="worker threads for grid cells and sweep sizes")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")

    parser = argparse.ArgumentParser(prog="lada", description="Latent assimilation experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text, description=help_text)
    return parser


def resolve_config(args, runtime: RuntimeSettings) -> ExperimentConfig:
    path = args.config or runtime.config_path
    config = load_config(path) if path else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    return config.with_overrides(**overrides) if overrides else config


# ==========================================
# COMMANDS
# ==========================================

def _generate(ws, threads):
    ws.scene(force=True)
    ws.export_scene()


def _split(ws, threads):
    ws.split()


def _train_ae(ws, threads):
    ws.cae(force=True)


def _train_lstm(ws, threads):
    ws.latents()
    ws.surrogate(force=True)


def _assimilate(ws, threads):
    from src.harness.pipeline import run_latent_assimilation

    run_latent_assimilation(ws)


def _baseline_da(ws, threads):
    from src.harness.pipeline import compare_la_sda, run_baseline_da

    sda = run_baseline_da(ws)
    la_path = ws.table_path("la_latent")
    if la_path.exists():
        compare_la_sda(ResultTable.from_csv(la_path), sda).to_csv(ws.table_path("la_vs_sda_physical"))


def _gridsearch(kind):
    def command(ws, threads):
        from src.harness.gridsearch import run_grid_search

        run_grid_search(ws, kind, threads=threads)
    return command


def _structure_ae(ws, threads):
    from src.harness.gridsearch import run_structure_search

    run_structure_search(ws, threads=threads)


def _sweep_latent(ws, threads):
    from src.harness.sweeps import run_latent_sweep

    run_latent_sweep(ws, threads=threads)


def _report(ws, threads):
    from src.harness.report import build_report

    build_report(ws.root)


HANDLERS: Dict[str, Callable] = {
    "generate": _generate,
    "split": _split,
    "train-ae": _train_ae,
    "train-lstm": _train_lstm,
    "assimilate": _assimilate,
    "baseline-da": _baseline_da,
    "gridsearch-ae": _gridsearch("cae"),
    "gridsearch-lstm": _gridsearch("lstm"),
    "structure-ae": _structure_ae,
    "sweep-latent": _sweep_latent,
    "report": _report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        try:
            runtime = RuntimeSettings()
        except ValidationError as e:
            raise ConfigError(f"Invalid LADA_* environment settings: {e}") from e
        set_log_level(args.log_level or runtime.log_level)
        config = resolve_config(args, runtime)
        threads = args.threads if args.threads is not None else runtime.threads
        if threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {threads}")
        logger.info(f"🚀 {args.command}: output {config.output_dir}, seed {config.seed}, threads {threads}")

        from src.harness.workspace import RunWorkspace

        if args.command == "run":
            from src.harness.pipeline import run_full_pipeline

            run_full_pipeline(config)
        else:
            workspace = RunWorkspace(config)
            with workspace.stage(args.command):
                HANDLERS[args.command](workspace, threads)
            workspace.write_manifest({"command": args.command})
    except LadaError as e:
        logger.error(f"❌ {e}")
        return e.exit_code
    except ValueError as e:
        logger.error(f"❌ Invalid setting: {e}")
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
