"""Shared experience replay.

A fixed-capacity ring buffer over preallocated numpy columns. Every
individual's evaluation rollouts are appended here and every learner samples
uniform minibatches (with replacement) from it. Each stored transition
carries an integer ``tag`` naming the population slot that produced it, which
is how cross-individual sharing is audited.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .serialization import FORMAT_VERSION, check_header, decode_array, encode_array, read_json, write_json


class EmptyReplayError(LookupError):
    """Sampling was requested from a buffer holding no transitions."""


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray | int
    reward: float
    next_state: np.ndarray
    done: bool
    truncated: bool = False


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    truncated: np.ndarray
    tags: np.ndarray

    def __len__(self):
        return self.rewards.shape[0]

    @property
    def terminal(self) -> np.ndarray:
        """1.0 where the episode really ended; time-limit cutoffs still bootstrap."""
        return (self.dones & ~self.truncated).astype(np.float64)


class SharedReplay:
    """Ring buffer of transitions.

    ``action_dim`` of ``None`` stores discrete integer actions; otherwise
    actions are float vectors of that length.
    """

    def __init__(self, capacity: int, state_dim: int, action_dim: int | None = None):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.state_dim = int(state_dim)
        self.action_dim = action_dim
        self.discrete = action_dim is None
        self._states = np.zeros((capacity, state_dim))
        self._next_states = np.zeros((capacity, state_dim))
        if self.discrete:
            self._actions = np.zeros(capacity, dtype=np.int64)
        else:
            self._actions = np.zeros((capacity, action_dim))
        self._rewards = np.zeros(capacity)
        self._dones = np.zeros(capacity, dtype=bool)
        self._truncated = np.zeros(capacity, dtype=bool)
        self._tags = np.full(capacity, -1, dtype=np.int64)
        self.write_cursor = 0
        self.size = 0
        self.total_appends = 0
        self._lock = threading.Lock()

    def __len__(self):
        return self.size

    def __repr__(self):
        return f"SharedReplay(size={self.size}, capacity={self.capacity})"

    def _check(self, t: Transition):
        s, s2 = np.shape(t.state), np.shape(t.next_state)
        if s != (self.state_dim,) or s2 != (self.state_dim,):
            raise ValueError(f"state shapes {s}/{s2} do not match state_dim {self.state_dim}")
        if self.discrete:
            if np.ndim(t.action) != 0:
                raise ValueError("discrete replay expects scalar integer actions")
        elif np.shape(t.action) != (self.action_dim,):
            raise ValueError(f"action shape {np.shape(t.action)} != ({self.action_dim},)")

    def append(self, t: Transition, tag: int = -1) -> None:
        self._check(t)
        with self._lock:
            i = self.write_cursor
            self._states[i] = t.state
            self._actions[i] = t.action
            self._rewards[i] = t.reward
            self._next_states[i] = t.next_state
            self._dones[i] = t.done
            self._truncated[i] = t.truncated
            self._tags[i] = tag
            self.write_cursor = (i + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)
            self.total_appends += 1

    def extend(self, transitions: Sequence[Transition], tag: int = -1) -> None:
        for t in transitions:
            self.append(t, tag)

    def _indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        size = self.size
        if size == 0:
            raise EmptyReplayError("cannot sample from an empty replay buffer")
        return rng.integers(0, size, size=batch_size)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        """Uniform draw with replacement, as Transition objects."""
        return [self._get(i) for i in self._indices(batch_size, rng)]

    def sample_batch(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform draw with replacement, as stacked arrays (the training path)."""
        idx = self._indices(batch_size, rng)
        return Batch(
            self._states[idx], self._actions[idx], self._rewards[idx], self._next_states[idx],
            self._dones[idx], self._truncated[idx], self._tags[idx],
        )

    def _get(self, i) -> Transition:
        action = int(self._actions[i]) if self.discrete else self._actions[i].copy()
        return Transition(
            self._states[i].copy(), action, float(self._rewards[i]), self._next_states[i].copy(),
            bool(self._dones[i]), bool(self._truncated[i]),
        )

    def _order(self) -> np.ndarray:
        # storage positions from oldest to newest
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self.write_cursor) % self.capacity

    def contents(self) -> list[Transition]:
        """All stored transitions, oldest first."""
        return [self._get(i) for i in self._order()]

    def tags(self) -> np.ndarray:
        return self._tags[self._order()].copy()

    def copy(self) -> SharedReplay:
        """Independent buffer with the same contents and cursor."""
        new = SharedReplay(self.capacity, self.state_dim, self.action_dim)
        for name in ("states", "actions", "rewards", "next_states", "dones", "truncated", "tags"):
            getattr(new, "_" + name)[...] = getattr(self, "_" + name)
        new.write_cursor, new.size, new.total_appends = self.write_cursor, self.size, self.total_appends
        return new

    def to_dict(self) -> dict:
        order = self._order()
        return {
            "format": "autorl.replay",
            "version": FORMAT_VERSION,
            "capacity": self.capacity,
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "total_appends": self.total_appends,
            "columns": {
                name: encode_array(getattr(self, "_" + name)[order])
                for name in ("states", "actions", "rewards", "next_states", "dones", "truncated", "tags")
            },
        }

    @classmethod
    def from_dict(cls, blob: dict) -> SharedReplay:
        check_header(blob, "autorl.replay")
        rb = cls(blob["capacity"], blob["state_dim"], blob["action_dim"])
        cols = {k: decode_array(v) for k, v in blob["columns"].items()}
        n = cols["rewards"].shape[0]
        for name, arr in cols.items():
            getattr(rb, "_" + name)[:n] = arr
        rb.size = n
        rb.write_cursor = n % rb.capacity
        rb.total_appends = blob["total_appends"]
        return rb

    def dump(self, path):
        return write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> SharedReplay:
        return cls.from_dict(read_json(path))
