"""Figure rendering for the report path: convergence curves and the
evaluation boxplot, written next to the exported CSV data."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .campaign import EvalSummary  # noqa: E402
from .export import ModeCurve, SMOOTHING_WINDOW, collect_curves, \
    export_curves  # noqa: E402

_MODE_COLORS = {
    "proposed": "tab:blue",
    "extrinsic-nps": "tab:orange",
    "extrinsic-ps": "tab:green",
    "random-uniform": "tab:red",
}


def render_convergence(curves: Sequence[ModeCurve], out_png: str | Path,
                       title: str = "Delivery rate vs training episodes"
                       ) -> Path:
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    for curve in curves:
        color = _MODE_COLORS.get(curve.mode)
        x = range(curve.smoothed.size)
        ax.plot(x, curve.smoothed, label=f"{curve.mode} (n={curve.n_seeds})",
                color=color, linewidth=1.4)
        ax.fill_between(x, curve.smoothed - curve.std,
                        curve.smoothed + curve.std, alpha=0.15, color=color)
    ax.set_xlabel("training episode")
    ax.set_ylabel("packets delivered [%]")
    ax.set_ylim(-2, 102)
    ax.set_title(title)
    ax.legend(loc="lower right", fontsize=9)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    out_png = Path(out_png)
    out_png.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return out_png


def render_eval_boxplot(summaries: dict[str, EvalSummary],
                        out_png: str | Path) -> Path:
    """Boxplot from precomputed stats so the figure honors the exact
    quantile and whisker rules used in the CSV outputs."""
    stats = []
    for label, s in summaries.items():
        stats.append({
            "label": label,
            "med": s.median,
            "q1": s.q1,
            "q3": s.q3,
            "whislo": s.whisker_low,
            "whishi": s.whisker_high,
            "fliers": list(s.outliers),
        })
    fig, ax = plt.subplots(figsize=(1.8 + 1.4 * len(stats), 4.2))
    ax.bxp(stats, showfliers=True)
    ax.set_ylabel("packets delivered [%]")
    ax.set_ylim(-2, 102)
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    out_png = Path(out_png)
    out_png.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return out_png


def render_report(run_dirs: Sequence[str | Path], out_dir: str | Path,
                  eval_summaries: dict[str, EvalSummary] | None = None,
                  window: int = SMOOTHING_WINDOW) -> Path:
    """Write curves.csv plus the rendered figures into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    export_curves(run_dirs, out_dir / "curves.csv", window)
    curves = collect_curves(run_dirs, window)
    render_convergence(curves, out_dir / "convergence.png")
    if eval_summaries:
        render_eval_boxplot(eval_summaries, out_dir / "eval_boxplot.png")
    return out_dir
