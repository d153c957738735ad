"""Plot-ready exports: per-mode smoothed convergence curves and the
convergence-episode metric.

Curves aggregate every seed found in the given campaign directories (which
must all target the same packet count): per-episode across-seed mean and
standard deviation, then a trailing moving average whose window is declared
in the output file header.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .campaign import read_metrics, read_run_config
from .errors import ConfigError

SMOOTHING_WINDOW = 100
PLATEAU_WINDOW = 500
PLATEAU_FRACTION = 0.95
HOLD_EPISODES = 500


def moving_average(series: Sequence[float], window: int) -> np.ndarray:
    """Trailing mean over up to ``window`` samples (shorter at warm-up)."""
    if window < 1:
        raise ConfigError("smoothing window must be >= 1")
    arr = np.asarray(series, dtype=np.float64)
    if window == 1:
        return arr.copy()
    csum = np.concatenate([[0.0], np.cumsum(arr)])
    idx = np.arange(1, arr.size + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


@dataclass
class ModeCurve:
    mode: str
    n_seeds: int
    mean: np.ndarray
    std: np.ndarray
    smoothed: np.ndarray


def collect_curves(run_dirs: Sequence[str | Path],
                   window: int = SMOOTHING_WINDOW) -> list[ModeCurve]:
    """Merge campaigns into one curve per mode; refuses mixed packet counts."""
    if not run_dirs:
        raise ConfigError("need at least one campaign directory")
    buffer_size = None
    per_mode: dict[str, list[list[float]]] = {}
    for run_dir in run_dirs:
        cfg = read_run_config(run_dir)
        if buffer_size is None:
            buffer_size = cfg.buffer_size
        elif cfg.buffer_size != buffer_size:
            raise ConfigError(
                f"{run_dir}: packet count {cfg.buffer_size} differs from "
                f"{buffer_size}; refusing to merge campaigns")
        series: dict[tuple[str, int], list[float]] = {}
        for row in read_metrics(run_dir):
            series.setdefault((row["mode"], row["seed"]),
                              []).append(row["pct_delivered"])
        for (mode, _seed), pcts in sorted(series.items()):
            per_mode.setdefault(mode, []).append(pcts)
    curves = []
    for mode in sorted(per_mode):
        runs = per_mode[mode]
        length = min(len(r) for r in runs)
        stack = np.asarray([r[:length] for r in runs])
        mean = stack.mean(axis=0)
        std = stack.std(axis=0)
        curves.append(ModeCurve(mode, len(runs), mean, std,
                                moving_average(mean, window)))
    return curves


def export_curves(run_dirs: Sequence[str | Path], out_path: str | Path,
                  window: int = SMOOTHING_WINDOW) -> Path:
    """Write the merged per-mode curves as a long-format CSV."""
    curves = collect_curves(run_dirs, window)
    lines = [f"# smoothing_window={window}",
             "mode,episode,mean_pct,std_pct,smoothed_mean_pct"]
    for curve in curves:
        for episode in range(curve.mean.size):
            lines.append(",".join([
                curve.mode, str(episode),
                repr(float(curve.mean[episode])),
                repr(float(curve.std[episode])),
                repr(float(curve.smoothed[episode])),
            ]))
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(lines) + "\n")
    return out_path


def convergence_episode(smoothed: Sequence[float],
                        plateau_window: int = PLATEAU_WINDOW,
                        fraction: float = PLATEAU_FRACTION,
                        hold: int = HOLD_EPISODES) -> Optional[int]:
    """First episode where the smoothed curve reaches ``fraction`` of its
    final plateau (mean of the last ``plateau_window`` points) and stays at
    or above it for ``hold`` consecutive episodes. None if it never does."""
    arr = np.asarray(smoothed, dtype=np.float64)
    if arr.size == 0:
        return None
    plateau = float(arr[-min(plateau_window, arr.size):].mean())
    threshold = fraction * plateau
    ok = arr >= threshold
    if arr.size < hold:
        return None
    run = 0
    for idx in range(arr.size):
        run = run + 1 if ok[idx] else 0
        if run >= hold:
            return idx - hold + 1
    return None
