"""
Run report: every table found under <out>/tables as markdown, the charts
they support, and the same content as a PDF.
"""
import logging
from pathlib import Path
from typing import Dict

import pandas as pd

from src.app.core.errors import InputError
from src.utils.data_utils import frame_to_markdown, summarize_dataframe
from src.utils.pdf_utils import convert_markdown_to_pdf
from src.utils.viz_utils import generate_result_charts

logger = logging.getLogger(__name__)

SECTIONS = [
    ("Assimilation", ["la_latent", "sda_physical", "la_vs_sda_physical"]),
    ("Model quality", ["cae_reconstruction", "lstm_forecast"]),
    ("Hyperparameter search", ["gridsearch_cae", "gridsearch_cae_best", "gridsearch_lstm", "gridsearch_lstm_best", "structures_cae"]),
    ("Latent-size sweep", ["sweep_latent_mse", "sweep_physical_mse", "sweep_correction_seconds"]),
]
# loaded for charts, too long to print
CHART_ONLY = ("cae_history", "lstm_history")


def load_tables(tables_dir) -> Dict[str, pd.DataFrame]:
    tables = {}
    for path in sorted(Path(tables_dir).glob("*.csv")):
        df = pd.read_csv(path)
        if "status" in df.columns:
            df = df.set_index(df.columns[0])
        tables[path.stem] = df
    return tables


def _manifest_lines(out_dir: Path):
    path = out_dir / "manifest.txt"
    if not path.exists():
        return []
    return [f"- {line.replace('=', ': ', 1)}" for line in path.read_text().splitlines() if "=" in line]


def render_markdown(out_dir, tables: Dict[str, pd.DataFrame], charts) -> str:
    out_dir = Path(out_dir)
    lines = ["# Latent assimilation run", "", f"Output directory: `{out_dir}`", ""]
    manifest = _manifest_lines(out_dir)
    if manifest:
        lines += ["## Run manifest", *manifest, ""]

    for heading, names in SECTIONS:
        present = [n for n in names if n in tables]
        if not present:
            continue
        lines += [f"## {heading}", ""]
        for name in present:
            df = tables[name]
            lines += [f"### {name}", summarize_dataframe(df, name), ""]
            shown = df.drop(columns=["status"]) if "status" in df.columns and (df["status"] == "ok").all() else df
            lines += [frame_to_markdown(shown.set_index(shown.columns[0]) if shown.index.name is None else shown), ""]

    if charts:
        lines += ["## Charts", ""]
        lines += [f"![{caption}](report/{Path(path).name})" for caption, path in charts]
    return "\n".join(lines) + "\n"


def build_report(out_dir) -> Path:
    """Writes report.md, charts under report/ and report.pdf. Returns the markdown path."""
    out_dir = Path(out_dir)
    tables_dir = out_dir / "tables"
    if not tables_dir.is_dir():
        raise InputError(f"no tables found under {out_dir}; run a pipeline stage first")
    tables = load_tables(tables_dir)
    logger.info(f"📝 Building report from {len(tables)} tables")

    chart_dir = out_dir / "report"
    charts = generate_result_charts(tables, str(chart_dir))
    markdown = render_markdown(out_dir, {k: v for k, v in tables.items() if k not in CHART_ONLY}, charts)
    md_path = out_dir / "report.md"
    md_path.write_text(markdown, encoding="utf-8")
    convert_markdown_to_pdf(markdown, out_dir / "report.pdf", title="Latent assimilation run",
                            subtitle=str(out_dir), chart_list=charts)
    return md_path
