"""Campaign orchestration: seeded multi-run training, checkpointing,
best-instance selection, and test-episode evaluation.

A campaign directory holds the resolved config, per-episode and
per-lifetime metric CSVs covering every seed, per-lifetime policy
checkpoints, and a manifest. All delimited outputs are reproducible
bit-for-bit from (config, seeds); only the manifest carries wall-clock
information.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .agents import AgentBundle, ObsEncoder, policy_layout_for
from .checkpoint import load_metadata, load_params, save_params
from .config import ExperimentConfig, RunMode, parse_config_text, save_config
from .env import MacEnv
from .errors import ConfigError, ShapeError
from .nets import mlp_forward, sample_categorical
from .training import (NS_EVAL_ACT, NS_EVAL_ENV, EpisodeStats, LifetimeStats,
                       derive_seed, train)

TRAIN_METRICS = "train_metrics.csv"
LIFETIME_METRICS = "lifetime_metrics.csv"
SELECT_WINDOW = 50  # training episodes averaged when ranking checkpoints


def _fmt(value: float) -> str:
    return repr(float(value))


def _episode_header(n_agents: int) -> str:
    cols = ["mode", "seed", "lifetime", "episode_global", "pct_delivered",
            "G_ep_ext"]
    cols += [f"G_ep_ov_agent{i}" for i in range(n_agents)]
    cols += [f"mean_abs_rin_agent{i}" for i in range(n_agents)]
    return ",".join(cols)


def _episode_row(s: EpisodeStats) -> str:
    parts = [s.mode, str(s.seed), str(s.lifetime), str(s.episode_global),
             _fmt(s.pct_delivered), _fmt(s.g_ext)]
    parts += [_fmt(v) for v in s.g_overall]
    parts += [_fmt(v) for v in s.mean_abs_rin]
    return ",".join(parts)


def _lifetime_header(n_agents: int) -> str:
    cols = ["mode", "seed", "lifetime", "G_life_ext"]
    cols += [f"meta_grad_norm_agent{i}" for i in range(n_agents)]
    return ",".join(cols)


def _lifetime_row(s: LifetimeStats) -> str:
    parts = [s.mode, str(s.seed), str(s.lifetime), _fmt(s.g_life_ext)]
    parts += [_fmt(v) for v in s.meta_grad_norms]
    return ",".join(parts)


def checkpoint_dir(run_dir: Path, seed: int, lifetime: int) -> Path:
    return Path(run_dir) / "checkpoints" / f"seed{seed}" / f"lifetime{lifetime:04d}"


def _save_policy_checkpoint(directory: Path, cfg: ExperimentConfig,
                            seed: int, lifetime: int, episode_count: int,
                            window_mean: float,
                            bundles: list[AgentBundle]) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    metadata = {
        "seed": seed,
        "lifetime": lifetime,
        "episode_count": episode_count,
        "config_hash": cfg.config_hash(),
        "config_text": cfg.to_text(),
        "window_mean_pct": window_mean,
        "window_episodes": SELECT_WINDOW,
    }
    if cfg.mode is RunMode.EXTRINSIC_PS:
        bundle = bundles[0]
        save_params(directory / "shared_policy.params",
                    bundle.policy_layout.name, bundle.policy_layout.dims,
                    bundle.policy, metadata)
    else:
        for bundle in bundles:
            save_params(directory / f"agent{bundle.agent_id}_policy.params",
                        bundle.policy_layout.name, bundle.policy_layout.dims,
                        bundle.policy, metadata)


def _run_one_seed(cfg: ExperimentConfig, seed: int, run_dir: str
                  ) -> tuple[list[EpisodeStats], list[LifetimeStats], dict]:
    """Worker body for one seed; writes its own checkpoints."""
    run_dir = Path(run_dir)
    pct_history: list[float] = []

    def on_episode(stats: EpisodeStats) -> None:
        pct_history.append(stats.pct_delivered)

    def on_lifetime(stats: LifetimeStats, bundles: list[AgentBundle]) -> None:
        if cfg.mode is RunMode.RANDOM_UNIFORM:
            return
        window = pct_history[-SELECT_WINDOW:]
        _save_policy_checkpoint(
            checkpoint_dir(run_dir, seed, stats.lifetime), cfg, seed,
            stats.lifetime, episode_count=len(pct_history),
            window_mean=float(np.mean(window)), bundles=bundles)

    result = train(cfg, seed, on_episode=on_episode, on_lifetime=on_lifetime)

    if cfg.mode is RunMode.PROPOSED:
        final_dir = Path(run_dir) / "checkpoints" / f"seed{seed}" / "final"
        final_dir.mkdir(parents=True, exist_ok=True)
        for bundle in result.bundles:
            save_params(
                final_dir / f"agent{bundle.agent_id}_intrinsic.params",
                bundle.intrinsic_layout.name, bundle.intrinsic_layout.dims,
                bundle.intrinsic,
                {"seed": seed, "episode_count": len(result.episodes),
                 "config_hash": cfg.config_hash()})
    status = {"status": "ok", "n_lifetimes": len(result.lifetimes),
              "converged": result.converged}
    return result.episodes, result.lifetimes, status


def run_campaign(cfg: ExperimentConfig, out_dir: str | Path) -> Path:
    """Train every configured seed and persist metrics and checkpoints."""
    if not cfg.seeds:
        raise ConfigError("campaign needs at least one seed")
    cfg.require_buffer_size()
    run_dir = Path(out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, run_dir / "config.txt")

    started = time.time()
    results: dict[int, tuple] = {}
    statuses: dict[str, dict] = {}
    if cfg.workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = {
                seed: pool.submit(_run_one_seed, cfg, seed, str(run_dir))
                for seed in cfg.seeds
            }
            for seed, future in futures.items():
                try:
                    results[seed] = future.result()
                except Exception as exc:  # seed failure is isolated
                    statuses[str(seed)] = {"status": "error",
                                           "error": repr(exc)}
    else:
        for seed in cfg.seeds:
            try:
                results[seed] = _run_one_seed(cfg, seed, str(run_dir))
            except Exception as exc:
                statuses[str(seed)] = {"status": "error", "error": repr(exc)}

    episode_lines = [_episode_header(cfg.n_agents)]
    lifetime_lines = [_lifetime_header(cfg.n_agents)]
    for seed in cfg.seeds:
        if seed not in results:
            continue
        episodes, lifetimes, status = results[seed]
        statuses[str(seed)] = status
        episode_lines.extend(_episode_row(s) for s in episodes)
        lifetime_lines.extend(_lifetime_row(s) for s in lifetimes)
    (run_dir / TRAIN_METRICS).write_text("\n".join(episode_lines) + "\n")
    (run_dir / LIFETIME_METRICS).write_text("\n".join(lifetime_lines) + "\n")

    manifest = {
        "config_hash": cfg.config_hash(),
        "code_version": __version__,
        "mode": cfg.mode.value,
        "seeds": list(cfg.seeds),
        "wall_time_s": time.time() - started,
        "per_seed": statuses,
    }
    (run_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return run_dir


# -- metrics access ----------------------------------------------------------

def read_metrics(run_dir: str | Path) -> list[dict]:
    """Parse train_metrics.csv into one dict per row."""
    path = Path(run_dir) / TRAIN_METRICS
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        row: dict = dict(zip(header, parts))
        row["seed"] = int(row["seed"])
        row["lifetime"] = int(row["lifetime"])
        row["episode_global"] = int(row["episode_global"])
        row["pct_delivered"] = float(row["pct_delivered"])
        row["G_ep_ext"] = float(row["G_ep_ext"])
        rows.append(row)
    return rows


def read_run_config(run_dir: str | Path) -> ExperimentConfig:
    return parse_config_text((Path(run_dir) / "config.txt").read_text())


# -- best-instance selection -------------------------------------------------

@dataclass(frozen=True)
class BestInstance:
    seed: int
    lifetime: int
    directory: Path
    window_mean_pct: float


def select_best(run_dir: str | Path) -> BestInstance:
    """Checkpoint with the highest mean delivery over its trailing window.

    Ties break toward the lower seed, then the earlier lifetime.
    """
    run_dir = Path(run_dir)
    cfg = read_run_config(run_dir)
    rows = read_metrics(run_dir)
    if not rows:
        raise ConfigError(f"{run_dir}: campaign has no metrics")
    best: BestInstance | None = None
    by_seed: dict[int, list[dict]] = {}
    for row in rows:
        by_seed.setdefault(row["seed"], []).append(row)
    for seed in sorted(by_seed):
        seed_rows = sorted(by_seed[seed], key=lambda r: r["episode_global"])
        pcts = [r["pct_delivered"] for r in seed_rows]
        n_lifetimes = seed_rows[-1]["lifetime"] + 1
        for lifetime in range(n_lifetimes):
            directory = checkpoint_dir(run_dir, seed, lifetime)
            if not directory.is_dir():
                continue
            end = (lifetime + 1) * cfg.episodes_per_lifetime
            window = pcts[max(0, end - SELECT_WINDOW):end]
            mean = float(np.mean(window))
            if best is None or mean > best.window_mean_pct:
                best = BestInstance(seed, lifetime, directory, mean)
    if best is None:
        raise ConfigError(f"{run_dir}: no checkpoints found")
    return best


# -- evaluation --------------------------------------------------------------

@dataclass(frozen=True)
class EvalSummary:
    """Boxplot statistics over per-episode delivery percentages."""

    n_episodes: int
    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: tuple[float, ...]

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1


def summarize_samples(samples: Sequence[float]) -> EvalSummary:
    """Quartiles by linear interpolation; whiskers clamp 1.5*IQR fences to
    the observed extremes; points beyond the whiskers are outliers."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.size == 0:
        raise ConfigError("cannot summarize an empty sample set")
    q1, med, q3 = (float(v) for v in
                   np.quantile(arr, [0.25, 0.5, 0.75], method="linear"))
    iqr = q3 - q1
    low_fence = q1 - 1.5 * iqr
    high_fence = q3 + 1.5 * iqr
    whisker_low = max(float(arr.min()), low_fence)
    whisker_high = min(float(arr.max()), high_fence)
    outliers = tuple(float(v) for v in
                     arr[(arr < whisker_low) | (arr > whisker_high)])
    return EvalSummary(int(arr.size), med, q1, q3, whisker_low,
                       whisker_high, outliers)


def _load_checkpoint_policies(ckpt_dir: Path
                              ) -> tuple[ExperimentConfig, list[np.ndarray]]:
    ckpt_dir = Path(ckpt_dir)
    shared = ckpt_dir / "shared_policy.params"
    files = ([shared] if shared.exists() else
             sorted(ckpt_dir.glob("agent*_policy.params")))
    if not files:
        raise ConfigError(f"{ckpt_dir}: no policy checkpoint files")
    cfg = parse_config_text(load_metadata(files[0])["config_text"])
    encoder = ObsEncoder(cfg.require_buffer_size(), cfg.memory_len)
    layout = policy_layout_for(encoder, cfg.policy_hidden)
    policies = []
    for path in files:
        _, dims, flat = load_params(path)
        if tuple(dims) != layout.dims or flat.size != layout.n_params:
            raise ShapeError(
                f"{path}: checkpoint dims {dims} do not match the config's "
                f"policy layout {list(layout.dims)}")
        policies.append(flat)
    if shared.exists():
        policies = [policies[0]] * cfg.n_agents
    if len(policies) != cfg.n_agents:
        raise ShapeError(f"{ckpt_dir}: found {len(policies)} policies for "
                         f"{cfg.n_agents} agents")
    return cfg, policies


def evaluate_policies(cfg: ExperimentConfig, policies: list[np.ndarray],
                      n_episodes: int, eval_seed: int) -> list[float]:
    """Delivery percentage per test episode, actions sampled from the
    learned policies. The evaluation streams are namespaced apart from
    every training stream, so test episodes never reuse training draws."""
    encoder = ObsEncoder(cfg.require_buffer_size(), cfg.memory_len)
    layout = policy_layout_for(encoder, cfg.policy_hidden)
    env = MacEnv(cfg.n_agents, cfg.require_buffer_size(), cfg.memory_len,
                 cfg.episode_len, reward_duplicates=cfg.reward_duplicates,
                 strict_obs_indexing=cfg.strict_obs_indexing)
    rngs = [np.random.default_rng(derive_seed(eval_seed, NS_EVAL_ACT, i))
            for i in range(cfg.n_agents)]
    pcts = []
    for episode in range(n_episodes):
        observations = env.reset(derive_seed(eval_seed, NS_EVAL_ENV, episode))
        for _ in range(cfg.episode_len):
            actions = []
            for i in range(cfg.n_agents):
                probs, _ = mlp_forward(layout, policies[i],
                                       encoder.encode(observations[i]))
                actions.append(sample_categorical(rngs[i], probs))
            observations = env.step(actions).observations
        pcts.append(env.pct_delivered())
    return pcts


def evaluate(ckpt_dir: str | Path, n_episodes: int = 1000,
             out_dir: str | Path | None = None,
             eval_seed: int | None = None) -> EvalSummary:
    """Test a checkpoint over fresh episodes and summarize the boxplot."""
    cfg, policies = _load_checkpoint_policies(Path(ckpt_dir))
    seed = cfg.eval_seed if eval_seed is None else eval_seed
    samples = evaluate_policies(cfg, policies, n_episodes, seed)
    summary = summarize_samples(samples)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        lines = ["episode,pct_delivered"]
        lines += [f"{i},{_fmt(v)}" for i, v in enumerate(samples)]
        (out_dir / "eval_metrics.csv").write_text("\n".join(lines) + "\n")
        header = ("n_episodes,eval_seed,median,q1,q3,iqr,whisker_low,"
                  "whisker_high,n_outliers,outliers")
        row = ",".join([
            str(summary.n_episodes), str(seed), _fmt(summary.median),
            _fmt(summary.q1), _fmt(summary.q3), _fmt(summary.iqr),
            _fmt(summary.whisker_low), _fmt(summary.whisker_high),
            str(len(summary.outliers)),
            ";".join(_fmt(v) for v in summary.outliers),
        ])
        (out_dir / "eval_summary.csv").write_text(
            header + "\n" + row + "\n")
    return summary
