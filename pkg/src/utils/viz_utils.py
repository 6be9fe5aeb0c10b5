import logging
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import seaborn as sns  # noqa: E402

logger = logging.getLogger(__name__)

sns.set_theme(style="whitegrid")


def _save(fig, output_dir, filename):
    path = os.path.join(output_dir, filename)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _ok_rows(df: pd.DataFrame) -> pd.DataFrame:
    if "status" in df.columns:
        df = df[df["status"].astype(str) == "ok"].drop(columns=["status"])
    return df


def plot_mode_bars(df, metric, title, output_dir, filename):
    """One bar per row label (R mode), log-scaled since errors span decades."""
    df = _ok_rows(df)
    if df.empty or metric not in df.columns:
        return None
    data = df[metric].reset_index()
    data.columns = ["mode", metric]
    data = data[data[metric] > 0]
    if data.empty:
        return None
    fig, ax = plt.subplots(figsize=(9, 5))
    sns.barplot(data=data, x="mode", y=metric, hue="mode", palette="viridis", legend=False, ax=ax)
    ax.set_yscale("log")
    ax.set_title(title, fontsize=14, fontweight="bold")
    ax.set_xlabel("")
    for container in ax.containers:
        ax.bar_label(container, fmt="%.2e", padding=3, fontsize=8)
    return _save(fig, output_dir, filename)


def plot_grid_search(df, title, output_dir, filename, top=15):
    df = _ok_rows(df)
    if df.empty:
        return None
    data = df.sort_values("Mean-MSE").head(top)
    fig, ax = plt.subplots(figsize=(11, max(4, 0.45 * len(data) + 1.5)))
    ax.barh(data.index.astype(str), data["Mean-MSE"], xerr=data["Std-MSE"],
            color=sns.color_palette("viridis", len(data)), capsize=3)
    ax.invert_yaxis()
    ax.set_xscale("log")
    ax.set_xlabel("Mean-MSE (error bar: Std-MSE)")
    ax.set_title(title, fontsize=14, fontweight="bold")
    return _save(fig, output_dir, filename)


def plot_sweep(df, ylabel, title, output_dir, filename):
    """Rows like 'p=16' become the x axis, one line per column."""
    df = _ok_rows(df)
    if df.empty:
        return None
    sizes = [int(str(label).split("=")[-1]) for label in df.index]
    fig, ax = plt.subplots(figsize=(9, 5))
    for column in df.columns:
        ax.plot(sizes, df[column].to_numpy(dtype=np.float64), marker="o", label=str(column))
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("latent size")
    ax.set_ylabel(ylabel)
    ax.set_title(title, fontsize=14, fontweight="bold")
    ax.legend()
    return _save(fig, output_dir, filename)


def plot_history(df, title, output_dir, filename):
    if df.empty:
        return None
    fig, ax = plt.subplots(figsize=(9, 5))
    ax.plot(df["epoch"], df["train_mse"], label="train")
    if df["val_mse"].notna().any():
        ax.plot(df["epoch"], df["val_mse"], label="validation")
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE")
    ax.set_title(title, fontsize=14, fontweight="bold")
    ax.legend()
    return _save(fig, output_dir, filename)


def generate_result_charts(tables, output_dir):
    """
    Draws every chart the available tables support.
    `tables` maps table name (CSV stem) to DataFrame; returns [(caption, png path)].
    """
    os.makedirs(output_dir, exist_ok=True)
    plans = [
        ("cae_history", "Autoencoder training loss", lambda df: plot_history(df, "Autoencoder training loss", output_dir, "cae_history.png")),
        ("lstm_history", "LSTM training loss", lambda df: plot_history(df, "LSTM training loss", output_dir, "lstm_history.png")),
        ("la_latent", "Latent-space MSE per R mode", lambda df: plot_mode_bars(df, "Latent-MSE", "Latent-space MSE per R mode", output_dir, "la_latent_mse.png")),
        ("la_latent", "Physical-space MSE of decoded states", lambda df: plot_mode_bars(df, "Physical-MSE", "Physical-space MSE of decoded states", output_dir, "la_physical_mse.png")),
        ("la_vs_sda_physical", "Correction time, standard DA", lambda df: plot_mode_bars(df, "sDA-Time", "Correction time, standard DA (s)", output_dir, "sda_time.png")),
        ("gridsearch_cae", "Autoencoder grid search", lambda df: plot_grid_search(df, "Autoencoder grid search", output_dir, "gridsearch_cae.png")),
        ("gridsearch_lstm", "LSTM grid search", lambda df: plot_grid_search(df, "LSTM grid search", output_dir, "gridsearch_lstm.png")),
        ("structures_cae", "Autoencoder structures", lambda df: plot_grid_search(df, "Autoencoder structures", output_dir, "structures_cae.png")),
        ("sweep_latent_mse", "Latent MSE by latent size", lambda df: plot_sweep(df, "latent MSE", "Latent MSE by latent size", output_dir, "sweep_latent_mse.png")),
        ("sweep_physical_mse", "Physical MSE by latent size", lambda df: plot_sweep(df, "physical MSE", "Physical MSE by latent size", output_dir, "sweep_physical_mse.png")),
        ("sweep_correction_seconds", "Correction time by latent size", lambda df: plot_sweep(df, "seconds", "Correction time by latent size", output_dir, "sweep_correction_seconds.png")),
    ]
    charts = []
    for name, caption, draw in plans:
        if name not in tables:
            continue
        try:
            path = draw(tables[name])
        except (KeyError, ValueError, TypeError) as e:
            logger.warning(f"⚠️ Chart error for {name}: {e}")
            continue
        if path:
            charts.append((caption, path))
    return charts
