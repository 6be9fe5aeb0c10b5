import numpy as np
import pandas as pd

# ==========================================
# PART 1: STATISTICS
# ==========================================

def mean_std(values):
    """Population mean and sample (ddof=1) std. A single value has std 0."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return float("nan"), float("nan")
    mean = float(np.mean(values))
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return mean, std


# ==========================================
# PART 2: TABLE SUMMARIES (markdown for the report)
# ==========================================

def format_number(value):
    if isinstance(value, (int, np.integer)):
        return str(value)
    if isinstance(value, (float, np.floating)):
        if np.isnan(value):
            return "-"
        return f"{value:.3e}"
    return str(value)


def frame_to_markdown(df: pd.DataFrame, index_label="") -> str:
    """Pipe table with scientific notation, the index as first column."""
    header = [index_label or (df.index.name or "")] + [str(c) for c in df.columns]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for label, row in df.iterrows():
        cells = [str(label)] + [format_number(v) for v in row.tolist()]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines)


def summarize_dataframe(df: pd.DataFrame, name: str) -> str:
    """
    Short prose digest of a result table: size, failed rows and, for each
    numeric column, the row holding its minimum.
    """
    summary = [f"- **{name}**: {len(df)} rows x {len(df.columns)} columns"]
    if "status" in df.columns:
        failed = df[df["status"].astype(str) != "ok"]
        if len(failed):
            summary.append(f"- Failed rows: {', '.join(str(i) for i in failed.index)}")

    for col in df.select_dtypes(include=["number"]).columns:
        series = df[col].dropna()
        if series.empty:
            continue
        best = series.idxmin()
        summary.append(f"- Lowest {col}: {series.min():.3e} ({best})")
    return "\n".join(summary)
