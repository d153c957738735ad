"""Single-cell uplink contention game.

N agents each hold a FIFO buffer of packets and share one TDMA data channel;
a transmission is received only when exactly one non-empty-buffer agent
transmits in the slot. Dedicated error-free control channels carry one
message per agent per step from a fixed-behavior base station: it ACKs a
successful reception and grants at most one of the remaining access
requesters, chosen uniformly at random.

The shared reward is 0 on a step that delivers a new unique packet (or once
every packet has already been delivered) and -1 otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConfigError, ProtocolError

# control messages from the base station
MSG_NONE = 0
MSG_GRANT = 1
MSG_ACK = 2

# data-plane action components
DATA_NOOP = 0
DATA_TRANSMIT = 1
DATA_DELETE = 2

N_ACTIONS = 6  # 3 data choices x 2 signal choices


class Action(NamedTuple):
    """Joint per-step choice: data-plane move plus access-request bit."""

    data: int    # 0 noop, 1 transmit buffer head, 2 delete buffer head
    signal: int  # 0 silent, 1 access request

    @property
    def joint_index(self) -> int:
        return 2 * self.data + self.signal

    @classmethod
    def from_joint(cls, joint: int) -> "Action":
        if not 0 <= joint < N_ACTIONS:
            raise ValueError(f"joint action index out of range: {joint}")
        return cls(joint // 2, joint % 2)


def _joint_index(action) -> int:
    if isinstance(action, Action):
        return action.joint_index
    return int(action)


@dataclass(frozen=True)
class Observation:
    """Agent-local view: current buffer level plus the last M steps.

    ``history`` holds (buffer level, joint action, bs message) triples,
    newest first, zero-filled before the episode start; ``n_real`` counts
    how many leading triples are genuine steps rather than padding.
    """

    buffer_level: int
    history: tuple[tuple[int, int, int], ...]
    n_real: int

    def as_tuple(self) -> tuple[int, ...]:
        flat: list[int] = [self.buffer_level]
        for triple in self.history:
            flat.extend(triple)
        return tuple(flat)


@dataclass(frozen=True)
class StepOutcome:
    observations: tuple[Observation, ...]
    reward: float                               # shared, in {-1, 0}
    delivered: Optional[tuple[int, int]]        # new (agent, packet) if any
    received: Optional[tuple[int, int]]         # collision-free reception
    messages: tuple[int, ...]
    all_delivered: bool


def bs_respond(receiver: Optional[int], requesters: Sequence[int],
               n_agents: int, rng: np.random.Generator) -> tuple[int, ...]:
    """Base-station reply for one step.

    The agent whose packet was received gets an ACK and its concurrent
    request (if any) is dropped; one of the remaining requesters, picked
    uniformly, gets the single grant. Everyone else gets no message.
    """
    messages = [MSG_NONE] * n_agents
    pool = [i for i in requesters if i != receiver]
    if receiver is not None:
        messages[receiver] = MSG_ACK
    if pool:
        chosen = pool[int(rng.integers(len(pool)))] if len(pool) > 1 else pool[0]
        messages[chosen] = MSG_GRANT
    return tuple(messages)


class _UeState:
    __slots__ = ("buffer", "last_msg", "history")

    def __init__(self, buffer: list[int], memory_len: int) -> None:
        self.buffer = buffer            # packet sequence numbers, head first
        self.last_msg = MSG_NONE        # message available at this decision
        self.history: list[tuple[int, int, int]] = [(0, 0, 0)] * memory_len


class MacEnv:
    """Deterministic, seedable simulator of the contention game.

    One instance is single-threaded; all agents' actions for a step are
    supplied together to :meth:`step`. The grant lottery is the only
    consumer of the per-episode random stream.
    """

    def __init__(self, n_agents: int, buffer_size: int, memory_len: int,
                 episode_len: int, *, reward_duplicates: bool = False,
                 strict_obs_indexing: bool = False,
                 trace: Callable[[str], None] | None = None) -> None:
        if n_agents < 1 or buffer_size < 1 or memory_len < 1 or episode_len < 1:
            raise ConfigError("n_agents, buffer_size, memory_len and "
                              "episode_len must all be >= 1")
        self.n_agents = n_agents
        self.buffer_size = buffer_size
        self.memory_len = memory_len
        self.episode_len = episode_len
        self.reward_duplicates = reward_duplicates
        self.strict_obs_indexing = strict_obs_indexing
        self.trace = trace
        self._ues: list[_UeState] = []
        self._delivered: set[tuple[int, int]] = set()
        self._t = 0
        self._rng = np.random.default_rng(0)

    # -- episode control ----------------------------------------------------

    def reset(self, episode_seed) -> tuple[Observation, ...]:
        """Refill every buffer, clear the ledger, and zero the histories."""
        self._rng = np.random.default_rng(episode_seed)
        self._ues = [
            _UeState(list(range(self.buffer_size)), self.memory_len)
            for _ in range(self.n_agents)
        ]
        self._delivered = set()
        self._t = 0
        return self.observations()

    def step(self, actions: Sequence) -> StepOutcome:
        """Resolve one synchronized slot for all agents."""
        if not self._ues:
            raise ProtocolError("step() before reset()")
        if self._t >= self.episode_len:
            raise ProtocolError(
                f"episode exhausted after {self.episode_len} steps")
        if len(actions) != self.n_agents:
            raise ProtocolError(
                f"need {self.n_agents} actions, got {len(actions)}")

        joints = [_joint_index(a) for a in actions]
        all_delivered_before = len(self._delivered) == self.n_agents * self.buffer_size

        # data channel: a reception requires exactly one loaded transmitter
        transmitters = [i for i, j in enumerate(joints)
                        if j // 2 == DATA_TRANSMIT and self._ues[i].buffer]
        received = None
        delivered = None
        if len(transmitters) == 1:
            ue = transmitters[0]
            received = (ue, self._ues[ue].buffer[0])
            if received not in self._delivered:
                self._delivered.add(received)
                delivered = received

        if delivered is not None or all_delivered_before:
            reward = 0.0
        elif received is not None and self.reward_duplicates:
            reward = 0.0
        else:
            reward = -1.0

        # control channel
        requesters = [i for i, j in enumerate(joints) if j % 2 == 1]
        receiver = received[0] if received is not None else None
        messages = bs_respond(receiver, requesters, self.n_agents, self._rng)

        # history shift; buffer level recorded is the one the agent acted on
        for i, ue in enumerate(self._ues):
            level_at_decision = len(ue.buffer)
            if joints[i] // 2 == DATA_DELETE and ue.buffer:
                ue.buffer.pop(0)
            msg_in_history = ue.last_msg if self.strict_obs_indexing else messages[i]
            ue.history.insert(0, (level_at_decision, joints[i], msg_in_history))
            ue.history.pop()
            ue.last_msg = messages[i]

        self._t += 1
        outcome = StepOutcome(
            observations=self.observations(),
            reward=reward,
            delivered=delivered,
            received=received,
            messages=messages,
            all_delivered=len(self._delivered) == self.n_agents * self.buffer_size,
        )
        if self.trace is not None:
            self.trace(
                f"{self._t - 1},"
                + ",".join(str(j) for j in joints) + ","
                + ",".join(str(m) for m in messages)
                + f",{int(reward)},{len(self._delivered)}"
            )
        return outcome

    # -- views --------------------------------------------------------------

    def observe(self, agent_id: int) -> Observation:
        if not 0 <= agent_id < self.n_agents:
            raise IndexError(f"agent_id {agent_id} out of range")
        ue = self._ues[agent_id]
        return Observation(
            buffer_level=len(ue.buffer),
            history=tuple(ue.history),
            n_real=min(self._t, self.memory_len),
        )

    def observations(self) -> tuple[Observation, ...]:
        return tuple(self.observe(i) for i in range(self.n_agents))

    def pct_delivered(self) -> float:
        return 100.0 * len(self._delivered) / (self.n_agents * self.buffer_size)

    @property
    def step_count(self) -> int:
        return self._t

    @property
    def ledger(self) -> frozenset[tuple[int, int]]:
        return frozenset(self._delivered)

    @property
    def done(self) -> bool:
        return self._t >= self.episode_len
