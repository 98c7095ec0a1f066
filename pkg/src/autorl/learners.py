"""Off-policy learners sharing one interface: act, train_batch, rebuild targets.

:class:`TD3Agent` implements clipped double-Q learning with delayed policy
updates and target policy smoothing. :class:`DQNAgent` is double DQN with
hard target syncs. Both keep their live networks as :class:`EvolvableNet` so
the evolutionary loop can grow or rewire them between training phases.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .envs import Env, EnvSignature, run_episode
from .evonet import AdamState, EvolvableNet, NetSpec, NumericError, adam_step
from .replay import Batch, SharedReplay, Transition
from .serialization import FORMAT_VERSION, check_header, read_json, write_json

LR_MIN, LR_MAX = 1e-6, 1e-1


@dataclass
class Hyperparams:
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    gamma: float = 0.99
    tau: float = 0.005
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    policy_update_frequency: int = 2
    batch_size: int = 100
    # exploration std as a fraction of the action bound (TD3 rollouts)
    exploration_noise: float = 0.1
    # epsilon-greedy rate for DQN rollouts
    epsilon: float = 0.05
    target_sync_period: int = 100

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.policy_noise < 0 or self.noise_clip < 0:
            raise ValueError("policy_noise and noise_clip must be non-negative")
        if self.policy_update_frequency < 1 or self.batch_size < 1 or self.target_sync_period < 1:
            raise ValueError("frequencies and batch size must be positive")
        self.clamp()

    def clamp(self) -> Hyperparams:
        self.actor_lr = float(min(max(self.actor_lr, LR_MIN), LR_MAX))
        self.critic_lr = float(min(max(self.critic_lr, LR_MIN), LR_MAX))
        return self

    def replace(self, **changes) -> Hyperparams:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> Hyperparams:
        return cls(**d)


def _finite_or_raise(x: np.ndarray, what: str):
    if not np.isfinite(x).all():
        raise NumericError(f"non-finite {what}")


class TD3Agent:
    kind = "td3"
    tunable_lrs = ("actor_lr", "critic_lr")

    def __init__(self, signature: EnvSignature, actor: EvolvableNet, critic1: EvolvableNet,
                 critic2: EvolvableNet, hp: Hyperparams):
        if not signature.continuous:
            raise ValueError("TD3 needs a continuous action space")
        self.signature = signature
        self.hp = hp
        self.actor, self.critic1, self.critic2 = actor, critic1, critic2
        self.actor_updates = 0
        self.rebuild_targets_and_optimizers()

    @classmethod
    def create(cls, signature: EnvSignature, hidden, hp: Hyperparams | None = None,
               rng: np.random.Generator | None = None, activation: str = "relu",
               critic_hidden=None) -> TD3Agent:
        rng = np.random.default_rng() if rng is None else rng
        hp = Hyperparams() if hp is None else hp
        sd, ad = signature.state_dim, signature.action_dim
        critic_hidden = hidden if critic_hidden is None else critic_hidden
        actor = EvolvableNet.initialize(NetSpec(sd, tuple(hidden), ad, activation, signature.action_bound), rng)
        c_spec = NetSpec(sd + ad, tuple(critic_hidden), 1, activation)
        return cls(signature, actor, EvolvableNet.initialize(c_spec, rng), EvolvableNet.initialize(c_spec, rng), hp)

    # networks the evolutionary operators may rewrite, grouped by role
    @property
    def policy_nets(self) -> dict[str, EvolvableNet]:
        return {"actor": self.actor}

    @property
    def value_nets(self) -> dict[str, EvolvableNet]:
        return {"critic1": self.critic1, "critic2": self.critic2}

    def replace_nets(self, **nets: EvolvableNet) -> None:
        """Swap in mutated networks and immediately re-create targets/optimisers."""
        for name, net in nets.items():
            if name not in ("actor", "critic1", "critic2"):
                raise KeyError(name)
            setattr(self, name, net)
        self.rebuild_targets_and_optimizers()

    def rebuild_targets_and_optimizers(self) -> None:
        self.target_actor = self.actor.clone()
        self.target_critic1 = self.critic1.clone()
        self.target_critic2 = self.critic2.clone()
        self.actor_opt = AdamState.for_net(self.actor, self.hp.actor_lr)
        self.critic1_opt = AdamState.for_net(self.critic1, self.hp.critic_lr)
        self.critic2_opt = AdamState.for_net(self.critic2, self.hp.critic_lr)

    def sync_learning_rates(self) -> None:
        self.actor_opt.learning_rate = self.hp.actor_lr
        self.critic1_opt.learning_rate = self.hp.critic_lr
        self.critic2_opt.learning_rate = self.hp.critic_lr

    @property
    def optimizers(self) -> list[AdamState]:
        return [self.actor_opt, self.critic1_opt, self.critic2_opt]

    def act(self, state, rng: np.random.Generator | None = None, noise: float | None = None) -> np.ndarray:
        """Deterministic policy action, plus N(0, (noise*bound)^2) when ``noise`` is given."""
        a = self.actor.forward(state)
        _finite_or_raise(a, "actor output")
        if noise:
            bound = self.signature.action_bound
            a = np.clip(a + rng.normal(0.0, noise * bound, size=a.shape), -bound, bound)
        return a

    def td3_targets(self, batch: Batch, rng: np.random.Generator) -> np.ndarray:
        hp, bound = self.hp, self.signature.action_bound
        a2 = self.target_actor.forward(batch.next_states)
        if hp.policy_noise > 0:
            eps = np.clip(rng.normal(0.0, hp.policy_noise, size=a2.shape), -hp.noise_clip, hp.noise_clip)
            a2 = np.clip(a2 + eps, -bound, bound)
        sa2 = np.concatenate([batch.next_states, a2], axis=1)
        q1 = self.target_critic1.forward(sa2)[:, 0]
        q2 = self.target_critic2.forward(sa2)[:, 0]
        return batch.rewards + hp.gamma * (1.0 - batch.terminal) * np.minimum(q1, q2)

    def critic_loss_and_grad(self, critic: EvolvableNet, sa: np.ndarray, y: np.ndarray):
        out, cache = critic.forward_cached(sa)
        diff = out[:, 0] - y
        n = diff.shape[0]
        loss = float(diff @ diff) / n
        if not np.isfinite(loss):
            raise NumericError("non-finite critic loss")
        grad, _ = critic.backward(cache, (2.0 / n) * diff[:, None])
        return loss, grad

    def train_batch(self, batch: Batch, step_index: int, rng: np.random.Generator) -> dict:
        """One TD3 update; the actor and targets move only on every
        ``policy_update_frequency``-th ``step_index``."""
        hp = self.hp
        y = self.td3_targets(batch, rng)
        sa = np.concatenate([batch.states, batch.actions], axis=1)
        losses = {}
        for name, critic, opt in (("critic1", self.critic1, self.critic1_opt),
                                  ("critic2", self.critic2, self.critic2_opt)):
            loss, grad = self.critic_loss_and_grad(critic, sa, y)
            adam_step(critic, opt, grad)
            losses[name] = loss
        if step_index % hp.policy_update_frequency == 0:
            n = batch.states.shape[0]
            pa, acache = self.actor.forward_cached(batch.states)
            q, ccache = self.critic1.forward_cached(np.concatenate([batch.states, pa], axis=1))
            losses["actor"] = -float(q.mean())
            if not np.isfinite(losses["actor"]):
                raise NumericError("non-finite actor loss")
            _, dsa = self.critic1.backward(ccache, np.full((n, 1), -1.0 / n), input_grad=True)
            agrad, _ = self.actor.backward(acache, dsa[:, self.signature.state_dim:])
            adam_step(self.actor, self.actor_opt, agrad)
            self.actor_updates += 1
            for live, target in ((self.actor, self.target_actor), (self.critic1, self.target_critic1),
                                 (self.critic2, self.target_critic2)):
                kernels.soft_update(target.params, live.params, hp.tau)
        return losses

    def clone(self) -> TD3Agent:
        new = object.__new__(TD3Agent)
        new.signature = self.signature
        new.hp = self.hp.replace()
        new.actor, new.critic1, new.critic2 = self.actor.clone(), self.critic1.clone(), self.critic2.clone()
        new.target_actor = self.target_actor.clone()
        new.target_critic1 = self.target_critic1.clone()
        new.target_critic2 = self.target_critic2.clone()
        new.actor_opt, new.critic1_opt, new.critic2_opt = (
            AdamState.from_dict(o.to_dict()) for o in self.optimizers
        )
        new.actor_updates = self.actor_updates
        return new

    def checksum(self) -> str:
        return "|".join(n.checksum() for n in (self.actor, self.critic1, self.critic2))

    _NETS = ("actor", "critic1", "critic2", "target_actor", "target_critic1", "target_critic2")

    def to_dict(self) -> dict:
        return {
            "format": "autorl.agent",
            "version": FORMAT_VERSION,
            "kind": self.kind,
            "signature": self.signature.to_dict(),
            "hyperparams": self.hp.to_dict(),
            "nets": {k: getattr(self, k).to_dict() for k in self._NETS},
            "optimizers": {k: getattr(self, k).to_dict() for k in ("actor_opt", "critic1_opt", "critic2_opt")},
            "actor_updates": self.actor_updates,
        }

    @classmethod
    def _from_dict(cls, blob: dict) -> TD3Agent:
        new = object.__new__(cls)
        new.signature = EnvSignature(**blob["signature"])
        new.hp = Hyperparams.from_dict(blob["hyperparams"])
        for k in cls._NETS:
            setattr(new, k, EvolvableNet.from_dict(blob["nets"][k]))
        for k, v in blob["optimizers"].items():
            setattr(new, k, AdamState.from_dict(v))
        new.actor_updates = blob["actor_updates"]
        return new


class DQNAgent:
    kind = "dqn"
    tunable_lrs = ("critic_lr",)

    def __init__(self, signature: EnvSignature, q_net: EvolvableNet, hp: Hyperparams):
        if signature.continuous:
            raise ValueError("DQN needs a discrete action space")
        if q_net.spec.output_dim != signature.n_actions:
            raise ValueError("q_net output_dim must equal the number of actions")
        self.signature = signature
        self.hp = hp
        self.q_net = q_net
        self.rebuild_targets_and_optimizers()

    @classmethod
    def create(cls, signature: EnvSignature, hidden, hp: Hyperparams | None = None,
               rng: np.random.Generator | None = None, activation: str = "relu") -> DQNAgent:
        rng = np.random.default_rng() if rng is None else rng
        hp = Hyperparams() if hp is None else hp
        spec = NetSpec(signature.state_dim, tuple(hidden), signature.n_actions, activation)
        return cls(signature, EvolvableNet.initialize(spec, rng), hp)

    @property
    def policy_nets(self) -> dict[str, EvolvableNet]:
        return {"q_net": self.q_net}

    @property
    def value_nets(self) -> dict[str, EvolvableNet]:
        return {}

    # DQN has a single network; learning rate is carried in ``critic_lr``
    @property
    def actor(self) -> EvolvableNet:
        return self.q_net

    def replace_nets(self, **nets: EvolvableNet) -> None:
        for name, net in nets.items():
            if name != "q_net":
                raise KeyError(name)
            self.q_net = net
        self.rebuild_targets_and_optimizers()

    def rebuild_targets_and_optimizers(self) -> None:
        self.target_q_net = self.q_net.clone()
        self.optimizer = AdamState.for_net(self.q_net, self.hp.critic_lr)

    def sync_learning_rates(self) -> None:
        self.optimizer.learning_rate = self.hp.critic_lr

    @property
    def optimizers(self) -> list[AdamState]:
        return [self.optimizer]

    def q_values(self, state) -> np.ndarray:
        q = self.q_net.forward(state)
        _finite_or_raise(q, "Q output")
        return q

    def act(self, state, rng: np.random.Generator | None = None, epsilon: float | None = None) -> int:
        if epsilon and rng.random() < epsilon:
            return int(rng.integers(self.signature.n_actions))
        return int(np.argmax(self.q_values(state)))

    def dqn_targets(self, batch: Batch) -> np.ndarray:
        idx = np.arange(len(batch))
        best = np.argmax(self.q_net.forward(batch.next_states), axis=1)
        q_next = self.target_q_net.forward(batch.next_states)[idx, best]
        return batch.rewards + self.hp.gamma * (1.0 - batch.terminal) * q_next

    def train_batch(self, batch: Batch, step_index: int, rng: np.random.Generator | None = None) -> dict:
        y = self.dqn_targets(batch)
        n = len(batch)
        idx = np.arange(n)
        actions = batch.actions.astype(np.int64)
        out, cache = self.q_net.forward_cached(batch.states)
        diff = out[idx, actions] - y
        loss = float(diff @ diff) / n
        if not np.isfinite(loss):
            raise NumericError("non-finite Q loss")
        dout = np.zeros_like(out)
        dout[idx, actions] = (2.0 / n) * diff
        grad, _ = self.q_net.backward(cache, dout)
        adam_step(self.q_net, self.optimizer, grad)
        if step_index % self.hp.target_sync_period == 0:
            self.target_q_net.copy_from(self.q_net)
        return {"q": loss}

    def greedy_policy(self, states: np.ndarray) -> np.ndarray:
        return np.argmax(self.q_net.forward(states), axis=1)

    def clone(self) -> DQNAgent:
        new = object.__new__(DQNAgent)
        new.signature = self.signature
        new.hp = self.hp.replace()
        new.q_net = self.q_net.clone()
        new.target_q_net = self.target_q_net.clone()
        new.optimizer = AdamState.from_dict(self.optimizer.to_dict())
        return new

    def checksum(self) -> str:
        return self.q_net.checksum()

    def to_dict(self) -> dict:
        return {
            "format": "autorl.agent",
            "version": FORMAT_VERSION,
            "kind": self.kind,
            "signature": self.signature.to_dict(),
            "hyperparams": self.hp.to_dict(),
            "nets": {"q_net": self.q_net.to_dict(), "target_q_net": self.target_q_net.to_dict()},
            "optimizers": {"optimizer": self.optimizer.to_dict()},
        }

    @classmethod
    def _from_dict(cls, blob: dict) -> DQNAgent:
        new = object.__new__(cls)
        new.signature = EnvSignature(**blob["signature"])
        new.hp = Hyperparams.from_dict(blob["hyperparams"])
        new.q_net = EvolvableNet.from_dict(blob["nets"]["q_net"])
        new.target_q_net = EvolvableNet.from_dict(blob["nets"]["target_q_net"])
        new.optimizer = AdamState.from_dict(blob["optimizers"]["optimizer"])
        return new


def create_agent(signature: EnvSignature, hidden, hp: Hyperparams | None = None,
                 rng: np.random.Generator | None = None, activation: str = "relu"):
    """TD3 for continuous action spaces, double DQN for discrete ones."""
    cls = TD3Agent if signature.continuous else DQNAgent
    return cls.create(signature, hidden, hp, rng, activation)


def agent_from_dict(blob: dict):
    check_header(blob, "autorl.agent")
    return {"td3": TD3Agent, "dqn": DQNAgent}[blob["kind"]]._from_dict(blob)


def save_agent(agent, path):
    return write_json(path, agent.to_dict())


def load_agent(path):
    return agent_from_dict(read_json(path))


def clone_individual(agent, hp: Hyperparams | None = None):
    """Fully independent deep copy, optionally with replaced hyperparameters."""
    new = agent.clone()
    if hp is not None:
        new.hp = hp.replace()
        new.sync_learning_rates()
    return new


def exploration_action(agent, state, rng, exploration: float | None):
    """Rollout action: Gaussian noise for TD3, epsilon-greedy for DQN."""
    if agent.kind == "td3":
        return agent.act(state, rng, noise=exploration)
    return agent.act(state, rng, epsilon=exploration)


def default_exploration(agent) -> float:
    return agent.hp.exploration_noise if agent.kind == "td3" else agent.hp.epsilon


def random_action(signature: EnvSignature, rng: np.random.Generator):
    if signature.continuous:
        b = signature.action_bound
        return rng.uniform(-b, b, size=signature.action_dim)
    return int(rng.integers(signature.n_actions))


def evaluate_policy(agent, env: Env, episodes: int, rng: np.random.Generator) -> float:
    """Mean greedy return over ``episodes`` fresh episodes (not interaction-counted)."""
    returns = [
        run_episode(env, lambda s: exploration_action(agent, s, rng, None), rng, keep_transitions=False)
        .cumulative_reward
        for _ in range(episodes)
    ]
    return float(np.mean(returns))


@dataclass
class Trainer:
    """Standard single-agent off-policy loop with a private replay.

    ``run(frames)`` advances exactly that many environment steps and can be
    called repeatedly; episodes continue across calls. One gradient step is
    taken per environment step once ``warmup_frames`` have been collected.
    Before that, actions are uniform random. DQN's epsilon decays linearly from
    1 to ``hp.epsilon`` over ``epsilon_decay_frames``.
    """

    agent: object
    env: Env
    rng: np.random.Generator
    replay_capacity: int = 1_000_000
    warmup_frames: int = 1000
    epsilon_decay_frames: int = 5000
    rebuild_every_episode: bool = False
    tag: int = -1
    frames: int = 0
    grad_steps: int = 0
    episodes: int = 0
    episode_returns: list = field(default_factory=list)  # (frames at episode end, return)

    def __post_init__(self):
        sig = self.env.signature
        self.replay = SharedReplay(self.replay_capacity, sig.state_dim, sig.action_dim if sig.continuous else None)
        self._state = None
        self._ret = 0.0

    def _action(self, state):
        agent, sig = self.agent, self.env.signature
        if self.frames < self.warmup_frames and sig.continuous:
            return random_action(sig, self.rng)
        if agent.kind == "dqn":
            frac = min(1.0, self.frames / max(1, self.epsilon_decay_frames))
            eps = 1.0 + frac * (agent.hp.epsilon - 1.0)
            return agent.act(state, self.rng, epsilon=eps)
        return agent.act(state, self.rng, noise=agent.hp.exploration_noise)

    def run(self, frames: int, on_episode=None) -> None:
        for _ in range(frames):
            if self._state is None:
                self._state = self.env.reset(self.rng)
                self._ret = 0.0
            action = self._action(self._state)
            next_state, reward, done, truncated = self.env.step(action)
            self.replay.append(Transition(self._state, action, reward, next_state, done, truncated), self.tag)
            self.frames += 1
            self._ret += reward
            self._state = next_state
            if self.frames >= self.warmup_frames and len(self.replay) >= self.agent.hp.batch_size:
                self.grad_steps += 1
                batch = self.replay.sample_batch(self.agent.hp.batch_size, self.rng)
                self.agent.train_batch(batch, self.grad_steps, self.rng)
            if done:
                self.episodes += 1
                self.episode_returns.append((self.frames, self._ret))
                self._state = None
                if self.rebuild_every_episode:
                    self.agent.rebuild_targets_and_optimizers()
                if on_episode is not None:
                    on_episode(self)

    def recent_return(self, last: int = 10) -> float:
        if not self.episode_returns:
            return float("-inf")
        return float(np.mean([r for _, r in self.episode_returns[-last:]]))
