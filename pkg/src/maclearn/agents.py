"""Per-agent composition: observation encoding, the policy, and the
stateful intrinsic-reward network.

The encoding one-hots every discrete observation field: the current buffer
level over {0..P}, then for each of the M history steps the buffer level,
the joint action over the 6 choices, and the base-station message over the
3 message kinds. History slots from before the episode start keep the
buffer/message one-hots at index 0 but zero the whole action block, so a
padded step is distinguishable from a genuine all-zero step.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .env import N_ACTIONS, Observation
from .errors import ShapeError
from .nets import (AdamState, LstmLayout, MlpLayout, init_params, lstm_step,
                   mlp_forward, mlp_logprob_grad, sample_categorical)

N_MESSAGES = 3


class ObsEncoder:
    """Fixed-length 0/1 encoding of an agent observation."""

    def __init__(self, buffer_size: int, memory_len: int) -> None:
        self.buffer_size = buffer_size
        self.memory_len = memory_len
        self.levels = buffer_size + 1
        self.stride = self.levels + N_ACTIONS + N_MESSAGES
        self.width = self.levels + memory_len * self.stride

    def encode(self, obs: Observation) -> np.ndarray:
        if len(obs.history) != self.memory_len:
            raise ShapeError(f"observation has {len(obs.history)} history "
                             f"entries, encoder expects {self.memory_len}")
        vec = np.zeros(self.width)
        if not 0 <= obs.buffer_level <= self.buffer_size:
            raise ShapeError(f"buffer level {obs.buffer_level} out of range")
        vec[obs.buffer_level] = 1.0
        base = self.levels
        for k, (level, action, msg) in enumerate(obs.history):
            if not (0 <= level <= self.buffer_size and 0 <= action < N_ACTIONS
                    and 0 <= msg < N_MESSAGES):
                raise ShapeError(f"history entry {k} out of range: "
                                 f"{(level, action, msg)}")
            vec[base + level] = 1.0
            if k < obs.n_real:
                vec[base + self.levels + action] = 1.0
            vec[base + self.levels + N_ACTIONS + msg] = 1.0
            base += self.stride
        return vec


class AgentBundle:
    """One agent's networks, recurrent state, and private sampling stream.

    The intrinsic LSTM state persists across episode boundaries and resets
    only at lifetime boundaries.
    """

    def __init__(self, agent_id: int, policy_layout: MlpLayout,
                 policy_seed, act_seed,
                 intrinsic_layout: Optional[LstmLayout] = None,
                 intrinsic_seed=None, optimizer: str = "sgd",
                 init_scale: float = 1.0) -> None:
        self.agent_id = agent_id
        self.policy_layout = policy_layout
        self.policy = init_params(policy_layout, policy_seed, init_scale)
        self.rng = np.random.default_rng(act_seed)
        self.intrinsic_layout = intrinsic_layout
        self.intrinsic = None
        self.lstm_h = None
        self.lstm_c = None
        if intrinsic_layout is not None:
            self.intrinsic = init_params(intrinsic_layout, intrinsic_seed,
                                         init_scale)
            self.reset_lifetime_state()
        self.policy_opt = (AdamState(policy_layout.n_params)
                           if optimizer == "adam" else None)
        self.intrinsic_opt = (AdamState(intrinsic_layout.n_params)
                              if optimizer == "adam"
                              and intrinsic_layout is not None else None)

    def reset_lifetime_state(self) -> None:
        if self.intrinsic_layout is not None:
            self.lstm_h = np.zeros(self.intrinsic_layout.hidden)
            self.lstm_c = np.zeros(self.intrinsic_layout.hidden)

    def lstm_state(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lstm_h, self.lstm_c

    def act(self, encoding: np.ndarray) -> tuple[int, float]:
        """Sample a joint action; returns (action, its probability)."""
        probs, _ = mlp_forward(self.policy_layout, self.policy, encoding)
        action = sample_categorical(self.rng, probs)
        return action, float(probs[action])

    def act_cached(self, encoding: np.ndarray):
        """As :meth:`act` but also returns the forward cache for reuse."""
        probs, cache = mlp_forward(self.policy_layout, self.policy, encoding)
        action = sample_categorical(self.rng, probs)
        return action, float(probs[action]), cache

    def act_uniform(self) -> tuple[int, float]:
        probs = np.full(N_ACTIONS, 1.0 / N_ACTIONS)
        return sample_categorical(self.rng, probs), 1.0 / N_ACTIONS

    def grad_logprob(self, encoding: np.ndarray, action: int) -> np.ndarray:
        _, cache = mlp_forward(self.policy_layout, self.policy, encoding)
        return mlp_logprob_grad(self.policy_layout, self.policy, cache, action)

    def intrinsic_input(self, encoding: np.ndarray, action: int,
                        last_rext: float = 0.0,
                        sees_rext: bool = False) -> np.ndarray:
        onehot = np.zeros(N_ACTIONS)
        onehot[action] = 1.0
        parts = [encoding, onehot]
        if sees_rext:
            parts.append(np.array([last_rext]))
        return np.concatenate(parts)

    def intrinsic_reward(self, lstm_input: np.ndarray):
        """Advance the lifetime LSTM state; returns (scalar, step cache)."""
        r, self.lstm_h, self.lstm_c, cache = lstm_step(
            self.intrinsic_layout, self.intrinsic, lstm_input,
            self.lstm_h, self.lstm_c)
        return r, cache


def policy_layout_for(encoder: ObsEncoder,
                      hidden=(64, 64)) -> MlpLayout:
    return MlpLayout(encoder.width, hidden, N_ACTIONS)


def intrinsic_layout_for(encoder: ObsEncoder, hidden: int = 128,
                         sees_rext: bool = False,
                         head_activation: str = "identity") -> LstmLayout:
    extra = 1 if sees_rext else 0
    return LstmLayout(encoder.width + N_ACTIONS + extra, hidden,
                      head_activation)
