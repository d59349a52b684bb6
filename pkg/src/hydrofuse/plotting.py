"""Figures for the ``report`` subcommand, rendered headless from a results document."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

KPI_LABELS = {
    "b_c": "hit rate b_c",
    "d_bar_c2l": "mean distance (m)",
    "p_bar_c2l": "mean distance (pipes)",
    "rho_c": "search area (%)",
    "d_best_c2l": "best-candidate distance (m)",
    "p_best_c2l": "best-candidate distance (pipes)",
}

STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def _column(doc: dict, key: str, estimator: str) -> np.ndarray:
    vals = [rec[key].get(estimator) for rec in doc["scenarios"]]
    return np.array([v for v in vals if v is not None], dtype=float)


def rmse_figure(doc: dict, path) -> Path:
    """Per-scenario RMSE distribution per estimator, heads and flows side by side."""
    names = doc["estimators"]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(7.0, 3.0))
        for ax, key, label in ((axes[0], "head_rmse_cm", "head RMSE (cm)"),
                               (axes[1], "flow_rmse_lps", "flow RMSE (L/s)")):
            data = [_column(doc, key, e) for e in names]
            ax.boxplot(data, showmeans=True)
            ax.set_xticks(range(1, len(names) + 1), names, rotation=20)
            ax.set_ylabel(label)
        fig.tight_layout()
        path = Path(path)
        fig.savefig(path)
        plt.close(fig)
    return path


def kpi_figure(doc: dict, path) -> Path | None:
    """Batch-average localization KPIs, one panel per KPI. ``None`` if nothing was localized."""
    names = [e for e in doc["estimators"] if any(e in rec["localization"] for rec in doc["scenarios"])]
    if not names:
        return None
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(2, 3, figsize=(8.0, 4.5))
        for ax, (kpi, label) in zip(axes.ravel(), KPI_LABELS.items()):
            means = []
            for e in names:
                vals = [rec["localization"][e][kpi] for rec in doc["scenarios"]
                        if e in rec["localization"] and rec["localization"][e][kpi] is not None]
                means.append(float(np.mean(np.asarray(vals, dtype=float))) if vals else np.nan)
            ax.bar(range(len(names)), means, color="0.55")
            ax.set_xticks(range(len(names)), names, rotation=20)
            ax.set_title(label)
        fig.tight_layout()
        path = Path(path)
        fig.savefig(path)
        plt.close(fig)
    return path


def render_report(doc: dict, directory) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = {"rmse.png": rmse_figure(doc, directory / "rmse.png")}
    kpi = kpi_figure(doc, directory / "localization_kpis.png")
    if kpi is not None:
        out["localization_kpis.png"] = kpi
    return out
