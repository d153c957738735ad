"""Two-timescale training loop.

Policies update once per episode by plain policy gradient on the overall
(extrinsic + weighted intrinsic) episodic return. The intrinsic-reward
network updates once per lifetime (a fixed number of episodes), ascending
the lifetime extrinsic return through a factorized first-order
meta-gradient: the lifetime objective's policy-space gradient is estimated
with importance-sampled likelihood ratios against the stored behavior
probabilities, contracted against each episode's cached score sum, and the
resulting per-episode scalars drive backpropagation through time into the
LSTM parameters.

Besides the proposed method, three reference modes run under the same
loop: independent extrinsic-only learners, a parameter-shared extrinsic
learner, and a uniform-random actor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .agents import (AgentBundle, ObsEncoder, intrinsic_layout_for,
                     policy_layout_for)
from .config import ExperimentConfig, RunMode
from .env import MacEnv
from .errors import ProtocolError
from .nets import apply_ascent, lstm_bptt, mlp_forward, mlp_logprob_grad

# fixed namespaces for deriving independent random streams from a run seed
NS_ENV = 0xE17
NS_ACT = 0xAC7
NS_POLICY_INIT = 0x121
NS_INTRINSIC_INIT = 0x122
NS_EVAL_ENV = 0xEA1
NS_EVAL_ACT = 0xEA2


def derive_seed(run_seed: int, namespace: int, *indices: int):
    """Stable child seed for one named stream of a run."""
    return np.random.SeedSequence((run_seed, namespace, *indices))


@dataclass
class EpisodeRollout:
    """Per-agent record of one episode, kept for the two update rules."""

    episode_index: int
    encodings: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    behavior_probs: list = field(default_factory=list)
    rewards_ext: list = field(default_factory=list)
    rewards_in: list = field(default_factory=list)
    policy_caches: list = field(default_factory=list)
    lstm_caches: list = field(default_factory=list)
    lstm_start: Optional[tuple[np.ndarray, np.ndarray]] = None
    score_sum: Optional[np.ndarray] = None
    g_ext: float = 0.0
    g_overall: float = 0.0


@dataclass(frozen=True)
class EpisodeStats:
    mode: str
    seed: int
    lifetime: int
    episode_global: int
    pct_delivered: float
    g_ext: float
    g_overall: tuple[float, ...]
    mean_abs_rin: tuple[float, ...]


@dataclass(frozen=True)
class LifetimeStats:
    mode: str
    seed: int
    lifetime: int
    g_life_ext: float
    meta_grad_norms: tuple[float, ...]


@dataclass
class TrainResult:
    config: ExperimentConfig
    run_seed: int
    bundles: list[AgentBundle]
    encoder: ObsEncoder
    episodes: list[EpisodeStats]
    lifetimes: list[LifetimeStats]
    converged: bool


# -- returns -----------------------------------------------------------------

def discount_powers(gamma: float, length: int) -> np.ndarray:
    return gamma ** np.arange(length, dtype=np.float64)


def episodic_overall_return(rewards_ext: Sequence[float],
                            rewards_in: Sequence[float],
                            intrinsic_weight: float, gamma: float) -> float:
    """Discounted sum of extrinsic plus weighted intrinsic rewards."""
    powers = discount_powers(gamma, len(rewards_ext))
    combined = np.asarray(rewards_ext) \
        + intrinsic_weight * np.asarray(rewards_in)
    return float(powers @ combined)


def episodic_extrinsic_return(rewards_ext: Sequence[float],
                              gamma: float) -> float:
    powers = discount_powers(gamma, len(rewards_ext))
    return float(powers @ np.asarray(rewards_ext))


def lifetime_extrinsic_return(rewards_ext: Sequence[float],
                              gamma: float) -> float:
    """Discounted sum over the whole lifetime; the discount keeps
    compounding across episode boundaries."""
    powers = discount_powers(gamma, len(rewards_ext))
    return float(powers @ np.asarray(rewards_ext))


# -- episode rollout ---------------------------------------------------------

def run_episode(env: MacEnv, bundles: list[AgentBundle], encoder: ObsEncoder,
                cfg: ExperimentConfig, mode: RunMode, episode_index: int,
                episode_seed, last_rext: float = 0.0
                ) -> tuple[list[EpisodeRollout], float, float]:
    """One synchronized episode; returns (per-agent rollouts, pct, last R)."""
    use_intrinsic = mode is RunMode.PROPOSED
    observations = env.reset(episode_seed)
    rollouts = [EpisodeRollout(episode_index) for _ in bundles]
    if use_intrinsic:
        for bundle, rollout in zip(bundles, rollouts):
            rollout.lstm_start = bundle.lstm_state()

    for _ in range(cfg.episode_len):
        actions = []
        for bundle, rollout in zip(bundles, rollouts):
            encoding = encoder.encode(observations[bundle.agent_id])
            if mode is RunMode.RANDOM_UNIFORM:
                action, prob = bundle.act_uniform()
                cache = None
            else:
                action, prob, cache = bundle.act_cached(encoding)
            actions.append(action)
            rollout.encodings.append(encoding)
            rollout.actions.append(action)
            rollout.behavior_probs.append(prob)
            rollout.policy_caches.append(cache)
        outcome = env.step(actions)
        for bundle, rollout in zip(bundles, rollouts):
            rollout.rewards_ext.append(outcome.reward)
            if use_intrinsic:
                lstm_in = bundle.intrinsic_input(
                    rollout.encodings[-1], rollout.actions[-1],
                    last_rext, cfg.intrinsic_sees_rext)
                r_in, lstm_cache = bundle.intrinsic_reward(lstm_in)
                rollout.rewards_in.append(r_in)
                rollout.lstm_caches.append(lstm_cache)
            else:
                rollout.rewards_in.append(0.0)
        last_rext = outcome.reward
        observations = outcome.observations
    return rollouts, env.pct_delivered(), last_rext


# -- policy update -----------------------------------------------------------

def _policy_gradient(bundle: AgentBundle, rollout: EpisodeRollout,
                     cfg: ExperimentConfig,
                     intrinsic_weight: float) -> np.ndarray:
    """Episode gradient for the policy; caches the plain score sum."""
    layout = bundle.policy_layout
    scores = [
        mlp_logprob_grad(layout, bundle.policy, cache, action)
        for cache, action in zip(rollout.policy_caches, rollout.actions)
    ]
    score_sum = scores[0].copy()
    for s in scores[1:]:
        score_sum += s
    rollout.score_sum = score_sum
    rollout.g_ext = episodic_extrinsic_return(rollout.rewards_ext,
                                              cfg.discount)
    rollout.g_overall = episodic_overall_return(
        rollout.rewards_ext, rollout.rewards_in, intrinsic_weight,
        cfg.discount)
    if cfg.credit == "whole_episode":
        return rollout.g_overall * score_sum
    # reward-to-go: each step's score is weighted by the remaining
    # discounted overall reward (discounting anchored at the episode start)
    powers = discount_powers(cfg.discount, len(rollout.rewards_ext))
    per_step = powers * (np.asarray(rollout.rewards_ext)
                         + intrinsic_weight * np.asarray(rollout.rewards_in))
    to_go = np.cumsum(per_step[::-1])[::-1]
    grad = to_go[0] * scores[0]
    for w, s in zip(to_go[1:], scores[1:]):
        grad += w * s
    return grad


def policy_update(bundle: AgentBundle, rollout: EpisodeRollout,
                  cfg: ExperimentConfig, intrinsic_weight: float) -> None:
    grad = _policy_gradient(bundle, rollout, cfg, intrinsic_weight)
    if bundle.policy_opt is not None:
        step = bundle.policy_opt.ascent_step(grad, cfg.policy_lr)
        bundle.policy = apply_ascent(bundle.policy, step, 1.0,
                                     cfg.policy_clip)
    else:
        bundle.policy = apply_ascent(bundle.policy, grad, cfg.policy_lr,
                                     cfg.policy_clip)
    rollout.policy_caches = []  # stale once the parameters move


def shared_policy_update(bundles: list[AgentBundle],
                         rollouts: list[EpisodeRollout],
                         cfg: ExperimentConfig) -> None:
    """Parameter-sharing mode: one update from the mean of agent gradients."""
    grads = [_policy_gradient(b, r, cfg, 0.0)
             for b, r in zip(bundles, rollouts)]
    mean_grad = grads[0]
    for g in grads[1:]:
        mean_grad += g
    mean_grad /= len(grads)
    lead = bundles[0]
    if lead.policy_opt is not None:
        step = lead.policy_opt.ascent_step(mean_grad, cfg.policy_lr)
        new = apply_ascent(lead.policy, step, 1.0, cfg.policy_clip)
    else:
        new = apply_ascent(lead.policy, mean_grad, cfg.policy_lr,
                           cfg.policy_clip)
    for bundle in bundles:
        bundle.policy = new
    for rollout in rollouts:
        rollout.policy_caches = []


# -- intrinsic meta-update ---------------------------------------------------

@dataclass
class MetaGradient:
    grad: np.ndarray                 # w.r.t. the intrinsic parameters
    g_theta: np.ndarray              # lifetime objective w.r.t. final policy
    episode_scalars: tuple[float, ...]


def meta_gradient(bundle: AgentBundle, lifetime: list[EpisodeRollout],
                  g_life_ext: float, cfg: ExperimentConfig) -> MetaGradient:
    """Factorized first-order meta-gradient of the lifetime extrinsic
    return with respect to the intrinsic parameters.

    Likelihood-ratio numerators are evaluated under the final policy by
    replaying the stored encodings; denominators are the probabilities
    recorded when the actions were sampled. The per-episode contraction
    scalars then weight a reverse pass through the stored LSTM caches,
    truncated at episode boundaries unless the lifetime-length window is
    configured.
    """
    layout = bundle.policy_layout
    theta = bundle.policy
    g_theta = np.zeros(layout.n_params)
    for rollout in lifetime:
        if rollout.score_sum is None:
            raise ProtocolError("lifetime rollout missing cached score sums; "
                                "run policy updates before the meta-update")
        for encoding, action, behavior_prob in zip(
                rollout.encodings, rollout.actions, rollout.behavior_probs):
            probs, cache = mlp_forward(layout, theta, encoding)
            score = mlp_logprob_grad(layout, theta, cache, action)
            g_theta += (probs[action] / behavior_prob) * score
    g_theta *= g_life_ext

    scale = cfg.policy_lr * cfg.intrinsic_weight
    scalars = tuple(float(scale * (g_theta @ r.score_sum)) for r in lifetime)

    grad = np.zeros(bundle.intrinsic_layout.n_params)
    if cfg.bptt_window == "lifetime":
        caches, upstream = [], []
        for rollout, s_k in zip(lifetime, scalars):
            powers = discount_powers(cfg.discount, len(rollout.lstm_caches))
            caches.extend(rollout.lstm_caches)
            upstream.extend(s_k * powers)
        if caches:
            grad, _ = lstm_bptt(bundle.intrinsic_layout, bundle.intrinsic,
                                caches, upstream)
    else:
        for rollout, s_k in zip(lifetime, scalars):
            if s_k == 0.0 or not rollout.lstm_caches:
                continue
            powers = discount_powers(cfg.discount, len(rollout.lstm_caches))
            episode_grad, _ = lstm_bptt(
                bundle.intrinsic_layout, bundle.intrinsic,
                rollout.lstm_caches, s_k * powers)
            grad += episode_grad
    return MetaGradient(grad, g_theta, scalars)


def intrinsic_update(bundle: AgentBundle, lifetime: list[EpisodeRollout],
                     g_life_ext: float, cfg: ExperimentConfig) -> float:
    """Apply the lifetime meta-update; returns the raw gradient norm."""
    mg = meta_gradient(bundle, lifetime, g_life_ext, cfg)
    norm = float(np.sqrt(mg.grad @ mg.grad))
    if bundle.intrinsic_opt is not None:
        step = bundle.intrinsic_opt.ascent_step(mg.grad, cfg.intrinsic_lr)
        bundle.intrinsic = apply_ascent(bundle.intrinsic, step, 1.0,
                                        cfg.intrinsic_clip)
    else:
        bundle.intrinsic = apply_ascent(bundle.intrinsic, mg.grad,
                                        cfg.intrinsic_lr,
                                        cfg.intrinsic_clip)
    return norm


# -- lifetime and run loops --------------------------------------------------

def build_bundles(cfg: ExperimentConfig, run_seed: int,
                  mode: RunMode) -> tuple[list[AgentBundle], ObsEncoder]:
    encoder = ObsEncoder(cfg.require_buffer_size(), cfg.memory_len)
    policy_layout = policy_layout_for(encoder, cfg.policy_hidden)
    intrinsic_layout = None
    if mode is RunMode.PROPOSED:
        intrinsic_layout = intrinsic_layout_for(
            encoder, cfg.intrinsic_hidden, cfg.intrinsic_sees_rext,
            cfg.intrinsic_head_activation)
    bundles = []
    for i in range(cfg.n_agents):
        init_agent = 0 if mode is RunMode.EXTRINSIC_PS else i
        bundles.append(AgentBundle(
            i, policy_layout,
            policy_seed=derive_seed(run_seed, NS_POLICY_INIT, init_agent),
            act_seed=derive_seed(run_seed, NS_ACT, i),
            intrinsic_layout=intrinsic_layout,
            intrinsic_seed=derive_seed(run_seed, NS_INTRINSIC_INIT, i),
            optimizer=cfg.optimizer,
            init_scale=cfg.init_scale,
        ))
    if mode is RunMode.EXTRINSIC_PS:
        shared = bundles[0].policy
        for bundle in bundles[1:]:
            bundle.policy = shared
    return bundles, encoder


def run_lifetime(env: MacEnv, bundles: list[AgentBundle],
                 encoder: ObsEncoder, cfg: ExperimentConfig, mode: RunMode,
                 run_seed: int, lifetime_index: int,
                 on_episode: Optional[Callable[[EpisodeStats], None]] = None,
                 ) -> LifetimeStats:
    """Run one lifetime: per-episode policy updates, then (in the proposed
    mode) one intrinsic meta-update per agent. Policy parameters carry over
    to the next lifetime; the LSTM state does not."""
    for bundle in bundles:
        bundle.reset_lifetime_state()
    intrinsic_weight = (cfg.intrinsic_weight if mode is RunMode.PROPOSED
                        else 0.0)
    keep_lifetime = mode is RunMode.PROPOSED
    lifetime: list[list[EpisodeRollout]] = [[] for _ in bundles]
    all_rext: list[float] = []
    last_rext = 0.0
    episode_base = lifetime_index * cfg.episodes_per_lifetime

    for k in range(cfg.episodes_per_lifetime):
        episode_seed = derive_seed(run_seed, NS_ENV, lifetime_index, k)
        rollouts, pct, last_rext = run_episode(
            env, bundles, encoder, cfg, mode, k, episode_seed, last_rext)
        if mode is RunMode.RANDOM_UNIFORM:
            for rollout in rollouts:
                rollout.g_ext = episodic_extrinsic_return(
                    rollout.rewards_ext, cfg.discount)
                rollout.g_overall = rollout.g_ext
        elif mode is RunMode.EXTRINSIC_PS:
            shared_policy_update(bundles, rollouts, cfg)
        else:
            for bundle, rollout in zip(bundles, rollouts):
                policy_update(bundle, rollout, cfg, intrinsic_weight)
        all_rext.extend(rollouts[0].rewards_ext)
        if keep_lifetime:
            for i, rollout in enumerate(rollouts):
                lifetime[i].append(rollout)
        if on_episode is not None:
            on_episode(EpisodeStats(
                mode=mode.value, seed=run_seed, lifetime=lifetime_index,
                episode_global=episode_base + k, pct_delivered=pct,
                g_ext=rollouts[0].g_ext,
                g_overall=tuple(r.g_overall for r in rollouts),
                mean_abs_rin=tuple(
                    float(np.mean(np.abs(r.rewards_in))) for r in rollouts),
            ))

    g_life = lifetime_extrinsic_return(all_rext, cfg.discount)
    meta_norms = tuple(
        intrinsic_update(bundle, lifetime[i], g_life, cfg)
        for i, bundle in enumerate(bundles)
    ) if keep_lifetime else tuple(0.0 for _ in bundles)
    return LifetimeStats(mode=mode.value, seed=run_seed,
                         lifetime=lifetime_index, g_life_ext=g_life,
                         meta_grad_norms=meta_norms)


def _made_little_progress(history: list[float], window: int,
                          threshold: float) -> bool:
    if len(history) < 2 * window:
        return False
    current = float(np.mean(history[-window:]))
    previous = float(np.mean(history[-2 * window:-window]))
    improvement = (current - previous) / max(abs(previous), 1e-12)
    return improvement < threshold


def train(cfg: ExperimentConfig, run_seed: int,
          on_episode: Optional[Callable[[EpisodeStats], None]] = None,
          on_lifetime: Optional[
              Callable[[LifetimeStats, list[AgentBundle]], None]] = None,
          ) -> TrainResult:
    """Full training run for one seed under the configured mode.

    ``on_episode`` / ``on_lifetime`` stream stats records to the caller as
    they are produced; ``on_lifetime`` also receives the live bundles so a
    harness can checkpoint parameters at lifetime boundaries.
    """
    mode = cfg.mode
    bundles, encoder = build_bundles(cfg, run_seed, mode)
    env = MacEnv(cfg.n_agents, cfg.require_buffer_size(), cfg.memory_len,
                 cfg.episode_len, reward_duplicates=cfg.reward_duplicates,
                 strict_obs_indexing=cfg.strict_obs_indexing)

    episode_log: list[EpisodeStats] = []
    lifetime_log: list[LifetimeStats] = []

    def record_episode(stats: EpisodeStats) -> None:
        episode_log.append(stats)
        if on_episode is not None:
            on_episode(stats)

    g_life_history: list[float] = []
    converged = False
    for lifetime_index in range(cfg.max_lifetimes):
        stats = run_lifetime(env, bundles, encoder, cfg, mode, run_seed,
                             lifetime_index, record_episode)
        lifetime_log.append(stats)
        if on_lifetime is not None:
            on_lifetime(stats, bundles)
        g_life_history.append(stats.g_life_ext)
        if cfg.convergence_stop and _made_little_progress(
                g_life_history, cfg.convergence_window,
                cfg.convergence_threshold):
            converged = True
            break
    return TrainResult(cfg, run_seed, bundles, encoder, episode_log,
                       lifetime_log, converged)
