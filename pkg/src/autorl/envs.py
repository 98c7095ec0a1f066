"""Small deterministic environments with exact oracles.

All environments share one episodic interface::

    state = env.reset(rng)
    next_state, reward, done, truncated = env.step(action)

``done`` is raised exactly once per episode, either on a terminal state or at
the step limit; in the latter case ``truncated`` is also set so learners can
keep bootstrapping through time-limit cutoffs.

Dynamics
--------
pendulum
    theta'' = 3g/(2l) sin(theta) + 3/(m l^2) u with g=10, m=l=1, dt=0.05,
    |theta_dot| <= 8, |u| <= 2. Observation (cos theta, sin theta, theta_dot),
    reward -(theta^2 + 0.1 theta_dot^2 + 0.001 u^2) with theta wrapped to
    [-pi, pi). Start theta ~ U[-pi, pi], theta_dot ~ U[-1, 1]. 200 steps.
pointmass1d
    x' = x + v dt + a dt^2 / 2, v' = v + a dt, dt=0.05, |a| <= 1.
    Reward -(x^2 + 0.01 a^2) on the pre-step state. Start x ~ U[-1, 1],
    v ~ U[-0.5, 0.5]. 100 steps.
chain
    States 0..n-1 (one-hot observation), start 0. Action 1 moves right,
    action 0 moves left (floored at 0). Entering n-1 pays 1 and ends the
    episode; every other step pays 0.
slipchain
    As chain, but each action is flipped with probability 0.1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .replay import Transition


@dataclass(frozen=True)
class EnvSignature:
    state_dim: int
    action_kind: str  # "continuous" | "discrete"
    max_episode_steps: int
    action_dim: int = 1
    action_bound: float = 1.0
    n_actions: int = 0

    def __post_init__(self):
        if self.action_kind == "continuous":
            if not self.action_bound > 0:
                raise ValueError("continuous action bound must be positive")
        elif self.action_kind == "discrete":
            if self.n_actions < 2:
                raise ValueError("discrete action spaces need n >= 2")
        else:
            raise ValueError(f"unknown action kind {self.action_kind!r}")

    @property
    def continuous(self) -> bool:
        return self.action_kind == "continuous"

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class EpisodeResult:
    cumulative_reward: float
    steps: int
    transitions: list[Transition] = field(default_factory=list)


class Env:
    name = "env"
    signature: EnvSignature

    def __init__(self):
        self._t = 0
        self._done = True

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._t = 0
        self._done = False
        return self._reset(rng)

    def step(self, action):
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset() first")
        action = self._check_action(action)
        next_state, reward, terminal = self._step(action)
        self._t += 1
        truncated = not terminal and self._t >= self.signature.max_episode_steps
        self._done = terminal or truncated
        return next_state, float(reward), self._done, truncated

    def _check_action(self, action):
        sig = self.signature
        if sig.continuous:
            a = np.asarray(action, dtype=np.float64).reshape(-1)
            if a.shape != (sig.action_dim,):
                raise ValueError(f"action must have shape ({sig.action_dim},), got {a.shape}")
            if np.isnan(a).any():
                raise ValueError("NaN action")
            return np.clip(a, -sig.action_bound, sig.action_bound)
        if np.ndim(action) != 0 or int(action) != action:
            raise ValueError(f"discrete action must be an integer scalar, got {action!r}")
        a = int(action)
        if not 0 <= a < sig.n_actions:
            raise ValueError(f"discrete action {a} outside [0, {sig.n_actions})")
        return a

    def _reset(self, rng):
        raise NotImplementedError

    def _step(self, action):
        raise NotImplementedError


def angle_normalize(x: float) -> float:
    return ((x + math.pi) % (2 * math.pi)) - math.pi


class Pendulum(Env):
    name = "pendulum"
    max_speed = 8.0
    max_torque = 2.0
    dt = 0.05
    g = 10.0
    m = 1.0
    l = 1.0

    def __init__(self, max_episode_steps: int = 200):
        super().__init__()
        self.signature = EnvSignature(3, "continuous", max_episode_steps, 1, self.max_torque)
        self.theta = 0.0
        self.theta_dot = 0.0

    def set_state(self, theta: float, theta_dot: float) -> np.ndarray:
        self.theta, self.theta_dot = float(theta), float(theta_dot)
        return self._obs()

    def _obs(self):
        return np.array([math.cos(self.theta), math.sin(self.theta), self.theta_dot])

    def _reset(self, rng):
        self.theta = rng.uniform(-math.pi, math.pi)
        self.theta_dot = rng.uniform(-1.0, 1.0)
        return self._obs()

    def _step(self, action):
        u = float(action[0])
        th, thdot = self.theta, self.theta_dot
        cost = angle_normalize(th) ** 2 + 0.1 * thdot**2 + 0.001 * u**2
        thdot = thdot + (3 * self.g / (2 * self.l) * math.sin(th) + 3.0 / (self.m * self.l**2) * u) * self.dt
        thdot = min(max(thdot, -self.max_speed), self.max_speed)
        self.theta = th + thdot * self.dt
        self.theta_dot = thdot
        return self._obs(), -cost, False


class PointMass1D(Env):
    name = "pointmass1d"
    dt = 0.05
    action_cost = 0.01

    def __init__(self, max_episode_steps: int = 100, bound: float = 1.0):
        super().__init__()
        self.signature = EnvSignature(2, "continuous", max_episode_steps, 1, bound)
        self.x = 0.0
        self.v = 0.0

    def set_state(self, x: float, v: float) -> np.ndarray:
        self.x, self.v = float(x), float(v)
        return np.array([self.x, self.v])

    def _reset(self, rng):
        self.x = rng.uniform(-1.0, 1.0)
        self.v = rng.uniform(-0.5, 0.5)
        return np.array([self.x, self.v])

    def _step(self, action):
        a = float(action[0])
        reward = -(self.x**2 + self.action_cost * a**2)
        dt = self.dt
        self.x = self.x + self.v * dt + 0.5 * a * dt**2
        self.v = self.v + a * dt
        return np.array([self.x, self.v]), reward, False

    def lqr(self):
        """Finite-horizon LQR for the unconstrained problem.

        Returns ``(gains, P0)`` with ``a_t = -gains[t] @ s_t`` optimal and
        ``s0 @ P0 @ s0`` the minimal total cost from ``s0``. Because clipping
        only restricts the policy class, ``-s0 @ P0 @ s0`` upper-bounds the
        return of every policy on the bounded environment.
        """
        dt = self.dt
        A = np.array([[1.0, dt], [0.0, 1.0]])
        B = np.array([[0.5 * dt**2], [dt]])
        Q = np.diag([1.0, 0.0])
        R = np.array([[self.action_cost]])
        P = np.zeros((2, 2))
        gains = []
        for _ in range(self.signature.max_episode_steps):
            K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
            P = Q + A.T @ P @ A - A.T @ P @ B @ K
            gains.append(K)
        return gains[::-1], P


class Chain(Env):
    name = "chain"
    slip = 0.0

    def __init__(self, n: int = 10, max_episode_steps: int = 50):
        super().__init__()
        if n < 2:
            raise ValueError("chain needs at least 2 states")
        self.n = n
        self.signature = EnvSignature(n, "discrete", max_episode_steps, 1, 1.0, 2)
        self.position = 0
        self._rng = None

    def _obs(self):
        s = np.zeros(self.n)
        s[self.position] = 1.0
        return s

    def _reset(self, rng):
        self.position = 0
        self._rng = rng
        return self._obs()

    def _move(self, s: int, a: int) -> int:
        return min(s + 1, self.n - 1) if a == 1 else max(s - 1, 0)

    def _step(self, action):
        a = action
        if self.slip > 0 and self._rng.random() < self.slip:
            a = 1 - a
        self.position = self._move(self.position, a)
        terminal = self.position == self.n - 1
        return self._obs(), 1.0 if terminal else 0.0, terminal

    def transition_model(self):
        """``(P, R, terminal)``: P[s, a, s'] probabilities, R[s, a, s'] rewards."""
        n = self.n
        P = np.zeros((n, 2, n))
        R = np.zeros((n, 2, n))
        for s in range(n - 1):
            for a in (0, 1):
                for taken, p in ((a, 1.0 - self.slip), (1 - a, self.slip)):
                    if p > 0:
                        s2 = self._move(s, taken)
                        P[s, a, s2] += p
                        R[s, a, s2] = 1.0 if s2 == n - 1 else 0.0
        terminal = np.zeros(n, dtype=bool)
        terminal[n - 1] = True
        return P, R, terminal


class SlipChain(Chain):
    name = "slipchain"
    slip = 0.1


def value_iteration(P, R, terminal, gamma: float, tol: float = 1e-12, max_iter: int = 100_000):
    """Exact Q* for a finite MDP by value iteration (terminal states have value 0)."""
    n_s, n_a, _ = P.shape
    Q = np.zeros((n_s, n_a))
    expected_r = (P * R).sum(axis=2)
    for _ in range(max_iter):
        V = np.where(terminal, 0.0, Q.max(axis=1))
        Q_new = expected_r + gamma * P @ V
        Q_new[terminal] = 0.0
        if np.max(np.abs(Q_new - Q)) < tol:
            return Q_new
        Q = Q_new
    return Q


ENVIRONMENTS: dict[str, Callable[..., Env]] = {
    "pendulum": Pendulum,
    "pointmass1d": PointMass1D,
    "chain": Chain,
    "slipchain": SlipChain,
}


def make_env(name: str, **kwargs) -> Env:
    try:
        return ENVIRONMENTS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None


def run_episode(env: Env, policy: Callable[[np.ndarray], object], rng: np.random.Generator,
                keep_transitions: bool = True) -> EpisodeResult:
    """Roll out one episode of ``policy``."""
    state = env.reset(rng)
    total, steps = 0.0, 0
    transitions = []
    done = False
    while not done:
        action = policy(state)
        next_state, reward, done, truncated = env.step(action)
        if keep_transitions:
            a = int(action) if not env.signature.continuous else np.asarray(action, dtype=np.float64).reshape(-1)
            transitions.append(Transition(state, a, reward, next_state, done, truncated))
        total += reward
        steps += 1
        state = next_state
    return EpisodeResult(total, steps, transitions)
