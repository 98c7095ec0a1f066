"""Random search and population-based training (PBT) on the same learners.

Both report through :class:`InteractionLedger` so their curves share an axis
with the evolutionary loop. Random search trains each sampled configuration
independently; its curve is the best trial's, charged for every trial.
PBT members train on private replays and periodically copy better members
(exploit) before perturbing learning rates and architectures (explore).
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .envs import Env, make_env
from .evonet import ACTIVATIONS, NumericError
from .exp import Curve, InteractionLedger, fair_scale_offline
from .learners import Hyperparams, Trainer, create_agent, evaluate_policy
from .searl import RunRecord, mutate_activation, mutate_architecture, mutate_hyperparameters, _parallel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchSpace:
    lr_range: tuple[float, float]
    activations: tuple[str, ...]
    layer_counts: tuple[int, ...]
    unit_range: tuple[int, int]  # inclusive

    def __post_init__(self):
        lo, hi = self.lr_range
        if not 0 < lo <= hi:
            raise ValueError("lr_range needs 0 < low <= high")
        ulo, uhi = self.unit_range
        if not 1 <= ulo <= uhi:
            raise ValueError("unit_range needs 1 <= low <= high")
        if not self.activations or not self.layer_counts:
            raise ValueError("activation and layer-count sets must be non-empty")
        if any(a not in ACTIVATIONS for a in self.activations):
            raise ValueError(f"activations must come from {ACTIVATIONS}")
        if any(n < 1 for n in self.layer_counts):
            raise ValueError("layer counts must be positive")


RANDOM_SEARCH_SPACE = SearchSpace((1e-5, 5e-3), ACTIVATIONS, (1, 2, 3), (64, 500))
PBT_SPACE = SearchSpace((1e-5, 5e-3), ACTIVATIONS, (1, 2), (128, 384))


@dataclass(frozen=True)
class SampledConfig:
    lr: float
    activation: str
    hidden_widths: tuple[int, ...]

    def hyperparams(self, base: Hyperparams | None = None) -> Hyperparams:
        base = Hyperparams() if base is None else base
        return base.replace(actor_lr=self.lr, critic_lr=self.lr)


def sample_configuration(space: SearchSpace, rng: np.random.Generator) -> SampledConfig:
    """Log-uniform learning rate; uniform layer count, widths and activation."""
    lo, hi = space.lr_range
    lr = float(math.exp(rng.uniform(math.log(lo), math.log(hi)))) if hi > lo else float(lo)
    n_layers = int(space.layer_counts[rng.integers(len(space.layer_counts))])
    widths = tuple(int(w) for w in rng.integers(space.unit_range[0], space.unit_range[1] + 1, size=n_layers))
    act = space.activations[rng.integers(len(space.activations))]
    return SampledConfig(lr, act, widths)


def _env_factory(env) -> Callable[[], Env]:
    return (lambda: make_env(env)) if isinstance(env, str) else env


# -- random search ------------------------------------------------------------


@dataclass
class Trial:
    index: int
    config: SampledConfig
    curve: Curve
    performance: float
    frames: int
    checkpoint: dict | None = None


TrainFn = Callable[[SampledConfig, Callable[[], Env], int, np.random.Generator], tuple[Curve, float, int]]


def train_trial(config: SampledConfig, env_factory: Callable[[], Env], frames: int, rng: np.random.Generator,
                base_hp: Hyperparams | None = None, warmup_frames: int = 1000, last: int = 10):
    """Train one fixed configuration.

    Returns ``(curve, performance, frames, checkpoint)`` with one curve point
    per training episode and performance the mean of the last ``last``
    episode returns.
    """
    env = env_factory()
    agent = create_agent(env.signature, config.hidden_widths, config.hyperparams(base_hp), rng, config.activation)
    trainer = Trainer(agent, env, rng, replay_capacity=max(frames, 1), warmup_frames=warmup_frames)
    try:
        trainer.run(frames)
    except NumericError as e:
        log.warning("trial diverged after %d frames: %s", trainer.frames, e)
    curve = Curve(trainer.episode_returns)
    return curve, trainer.recent_return(last), trainer.frames, agent.to_dict()


def run_random_search(n_trials: int, frames_per_trial: int, env, seed: int = 0,
                      space: SearchSpace = RANDOM_SEARCH_SPACE, base_hp: Hyperparams | None = None,
                      trial_seeds: Sequence | None = None, train_fn: TrainFn | None = None,
                      workers: int = 1, ledger: InteractionLedger | None = None) -> RunRecord:
    """Train ``n_trials`` sampled configurations and keep the best.

    The returned curve is the best trial's episode curve with frames
    multiplied by ``n_trials``. ``train_fn`` replaces the default TD3/DQN
    trial for synthetic checks; it returns ``(curve, performance, frames)``
    and optionally a checkpoint dict as a fourth item.
    """
    if n_trials < 1 or frames_per_trial < 1:
        raise ValueError("n_trials and frames_per_trial must be positive")
    seeds = [[seed, i] for i in range(n_trials)] if trial_seeds is None else list(trial_seeds)
    if len(seeds) != n_trials:
        raise ValueError("need one trial seed per trial")
    factory = _env_factory(env)
    ledger = InteractionLedger() if ledger is None else ledger
    if train_fn is None:
        def train_fn(cfg, make, frames, rng):
            return train_trial(cfg, make, frames, rng, base_hp)

    def job(i):
        rng = np.random.default_rng(seeds[i])
        cfg = sample_configuration(space, rng)
        curve, perf, used, *checkpoint = train_fn(cfg, factory, frames_per_trial, rng)
        if used:
            ledger.record(used)
        return Trial(i, cfg, curve, perf, used, checkpoint[0] if checkpoint else None)

    trials = _parallel(job, range(n_trials), workers)
    best = min(trials, key=lambda t: (-t.performance, t.index))
    record = RunRecord("random_search", seed, {"n_trials": n_trials, "frames_per_trial": frames_per_trial},
                       ledger=ledger)
    record.curve = fair_scale_offline(best.curve, n_trials)
    record.best_fitness = best.performance
    record.best_checkpoint = best.checkpoint
    record.generations = 1
    record.total_frames = ledger.total_frames
    record.extras["trials"] = trials
    record.extras["best_trial"] = best
    cumulative = 0
    for t in trials:
        cumulative += t.frames
        record.rows.append({
            "method": "random_search", "seed": seed, "generation": 0, "individual": t.index,
            "fitness": t.performance, "eval_frames": t.frames, "cumulative_frames": cumulative,
            "actor_lr": t.config.lr, "critic_lr": t.config.lr, "activation": t.config.activation,
            "hidden_widths": list(t.config.hidden_widths), "mutation_op": "best" if t is best else "",
        })
    return record


# -- population-based training -----------------------------------------------


@dataclass
class PBTConfig:
    population_size: int = 20
    generations: int = 100
    frames_per_member: int = 10_000
    exploit_quantile: float = 0.2
    warmup_frames: int = 1000
    replay_memory_size: int = 1_000_000
    # explore: learning rates always perturbed, then one of these uniformly
    explore_ops: tuple = ("activation", "architecture", "none")
    new_layer_probability: float = 0.2
    new_nodes_choices: tuple = (16, 32, 64)
    max_layers: int = 4
    max_width: int = 1024
    workers: int = 1

    def __post_init__(self):
        if min(self.population_size, self.generations, self.frames_per_member) < 1:
            raise ValueError("population_size, generations and frames_per_member must be positive")
        if not 0 < self.exploit_quantile < 0.5:
            raise ValueError("exploit_quantile must lie in (0, 0.5)")
        unknown = set(self.explore_ops) - {"activation", "architecture", "none"}
        if unknown or not self.explore_ops:
            raise ValueError(f"bad explore ops {sorted(unknown)}")

    def replace(self, **changes) -> PBTConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def exploit_pairs(fitness: Sequence[float], quantile: float, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Truncation selection: every member strictly below the lower quantile
    copies a uniformly chosen member strictly above the upper quantile."""
    f = np.asarray(fitness, dtype=np.float64)
    finite = np.where(np.isfinite(f), f, np.finfo(np.float64).min)
    lo, hi = np.quantile(finite, quantile), np.quantile(finite, 1 - quantile)
    bottom = np.flatnonzero(finite < lo)
    top = np.flatnonzero(finite > hi)
    if len(top) == 0:
        return []
    return [(int(b), int(top[rng.integers(len(top))])) for b in bottom]


def explore(agent, config: PBTConfig, rng: np.random.Generator) -> str:
    mutate_hyperparameters(agent, rng)
    op = config.explore_ops[rng.integers(len(config.explore_ops))]
    if op == "activation":
        mutate_activation(agent, rng)
    elif op == "architecture":
        mutate_architecture(agent, config, rng)
    return op


def exploit_and_explore(agents: list, fitness: list[float], config: PBTConfig,
                        rng: np.random.Generator) -> list[tuple[int, int, str]]:
    """Replace bottom members in ``agents`` by perturbed copies of top members.

    Returns ``(destination, source, explore_op)`` per copy; ``fitness`` of a
    destination is set to its source's.
    """
    moves = []
    for dst, src in exploit_pairs(fitness, config.exploit_quantile, rng):
        agents[dst] = agents[src].clone()
        moves.append((dst, src, explore(agents[dst], config, rng)))
        fitness[dst] = fitness[src]
    return moves


def run_pbt(config: PBTConfig, env, seed: int = 0, space: SearchSpace = PBT_SPACE,
            base_hp: Hyperparams | None = None, ledger: InteractionLedger | None = None,
            on_generation: Callable[[RunRecord], None] | None = None) -> RunRecord:
    """Members train on their own env and replay; fitness is the mean return
    of the episodes finished during the generation's training frames."""
    factory = _env_factory(env)
    ledger = InteractionLedger() if ledger is None else ledger
    n = config.population_size
    trainers: list[Trainer] = []
    for m in range(n):
        rng = np.random.default_rng([seed, m])
        cfg = sample_configuration(space, rng)
        e = factory()
        agent = create_agent(e.signature, cfg.hidden_widths, cfg.hyperparams(base_hp), rng, cfg.activation)
        trainers.append(Trainer(agent, e, rng, replay_capacity=config.replay_memory_size,
                                warmup_frames=config.warmup_frames, tag=m))
    record = RunRecord("pbt", seed, config.to_dict(), ledger=ledger)
    record.extras["trainers"] = trainers
    last_fit = [float("-inf")] * n

    for g in range(config.generations):
        def job(m):
            tr = trainers[m]
            seen = len(tr.episode_returns)
            start = tr.frames
            try:
                tr.run(config.frames_per_member)
            except NumericError as e:
                log.warning("pbt member %d diverged: %s", m, e)
                last_fit[m] = float("-inf")
                return tr.frames - start
            new = [r for _, r in tr.episode_returns[seen:]]
            if new:
                last_fit[m] = float(np.mean(new))
            return tr.frames - start

        used = _parallel(job, range(n), config.workers)
        rows = []
        for m in range(n):
            if used[m]:
                ledger.record(used[m])
            agent = trainers[m].agent
            rows.append({
                "method": "pbt", "seed": seed, "generation": g, "individual": m, "fitness": last_fit[m],
                "eval_frames": used[m], "cumulative_frames": ledger.total_frames,
                "actor_lr": agent.hp.actor_lr, "critic_lr": agent.hp.critic_lr,
                "activation": agent.actor.spec.activation,
                "hidden_widths": list(agent.actor.spec.hidden_widths), "mutation_op": "",
            })
        best = int(np.argmax(last_fit))
        record.curve.append(ledger.total_frames, last_fit[best])
        if last_fit[best] > record.best_fitness or record.best_checkpoint is None:
            record.best_fitness = last_fit[best]
            record.best_checkpoint = trainers[best].agent.to_dict()
        if g < config.generations - 1:
            agents = [t.agent for t in trainers]
            for dst, src, op in exploit_and_explore(agents, last_fit, config, np.random.default_rng([seed, g, n])):
                trainers[dst].agent = agents[dst]
                rows[dst]["mutation_op"] = f"exploit:{src}+{op}"
        record.rows.extend(rows)
        record.generations = g + 1
        record.total_frames = ledger.total_frames
        if on_generation is not None:
            on_generation(record)
    return record


def best_policy_return(record: RunRecord, env, episodes: int = 10, seed: int = 0) -> float:
    """Greedy return of a record's best checkpoint (not interaction-counted)."""
    from .learners import agent_from_dict

    agent = agent_from_dict(record.best_checkpoint)
    return evaluate_policy(agent, _env_factory(env)(), episodes, np.random.default_rng(seed))
