"""Evolutionary off-policy training with a shared replay buffer.

One generation is::

    evaluate every individual (rollouts fill the replay, mean return = fitness)
    select   slot 0 keeps the best unchanged, other slots win k-way tournaments
    mutate   exactly one operator per non-elite slot
    train    each individual takes floor(tau * j) gradient steps on the replay

``tau`` is the number of frames the whole population collected in that
generation's evaluation. The loop stops once the interaction ledger reaches
``max_frames``.

Randomness for every (seed, generation, slot, phase) comes from its own
``numpy`` seed sequence, so results do not depend on thread scheduling.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .envs import Env, EnvSignature, make_env
from .evonet import ACTIVATIONS, grow_layer, grow_nodes, perturb_weights, swap_activation
from .exp import Curve, InteractionLedger
from .learners import Hyperparams, create_agent, default_exploration, exploration_action
from .replay import SharedReplay, Transition

log = logging.getLogger(__name__)

MUTATION_OPS = ("weights", "activation", "architecture", "hyperparameters", "none")
ELITE = "elite"
ABLATIONS = ("no_shared_replay", "no_architecture", "no_hyperparameters", "no_weight_noise")

# rng phase codes
_INIT, _EVAL, _SELECT, _MUTATE, _TRAIN = range(5)


def phase_rng(seed: int, generation: int, slot: int, phase: int) -> np.random.Generator:
    return np.random.default_rng([seed, generation, slot, phase])


@dataclass
class SearlConfig:
    max_frames: int = 2_000_000
    replay_memory_size: int = 1_000_000
    min_eval_frames: int = 250
    population_size: int = 20
    tournament_size: int = 3
    new_layer_probability: float = 0.2
    new_nodes_choices: tuple = (16, 32, 64)
    parameter_noise_std: float = 0.1
    parameter_noise_fraction: float = 0.1
    batch_size: int = 100
    train_frames_fraction: float = 0.5
    default_lr: float = 1e-3
    optimizer: str = "adam"
    td3_gamma: float = 0.99
    td3_tau: float = 0.005
    td3_policy_noise: float = 0.2
    td3_noise_clip: float = 0.5
    td3_update_frequency: int = 2
    default_activation: str = "relu"
    start_network_size: tuple = (128,)
    # exploration during fitness rollouts; None uses the learner default
    eval_exploration: float | None = None
    exploration_noise: float = 0.1
    dqn_epsilon: float = 0.05
    dqn_target_sync_period: int = 100
    mutate_weights: bool = True
    mutate_activation: bool = True
    mutate_architecture: bool = True
    mutate_hyperparameters: bool = True
    mutate_none: bool = True
    init_mode: str = "fixed_default"
    isolated_replay: bool = False
    max_layers: int = 4
    max_width: int = 1024
    workers: int = 1

    def __post_init__(self):
        self.start_network_size = tuple(int(w) for w in self.start_network_size)
        self.new_nodes_choices = tuple(int(c) for c in self.new_nodes_choices)
        n, k = self.population_size, self.tournament_size
        if n < 1:
            raise ValueError("population_size must be positive")
        if n >= 2 and not 2 <= k <= n:
            raise ValueError(f"tournament_size must satisfy 2 <= k <= N, got k={k}, N={n}")
        if not 0 < self.train_frames_fraction <= 1:
            raise ValueError("train_frames_fraction must lie in (0, 1]")
        if self.min_eval_frames < 1 or self.max_frames < 1 or self.replay_memory_size < 1:
            raise ValueError("frame counts and replay size must be positive")
        if self.init_mode not in ("fixed_default", "random_search_space"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")
        if self.optimizer.lower() != "adam":
            raise ValueError("only the adam optimizer is supported")
        if self.default_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.default_activation!r}")
        if not self.enabled_ops:
            raise ValueError("at least one mutation operator must be enabled")
        if not 0 <= self.new_layer_probability <= 1:
            raise ValueError("new_layer_probability must lie in [0, 1]")
        if len(self.start_network_size) > self.max_layers or max(self.start_network_size) > self.max_width:
            raise ValueError("start network exceeds the size guardrails")

    @property
    def enabled_ops(self) -> tuple[str, ...]:
        flags = (self.mutate_weights, self.mutate_activation, self.mutate_architecture,
                 self.mutate_hyperparameters, self.mutate_none)
        return tuple(op for op, on in zip(MUTATION_OPS, flags) if on)

    def hyperparams(self, lr: float | None = None) -> Hyperparams:
        lr = self.default_lr if lr is None else lr
        return Hyperparams(
            actor_lr=lr, critic_lr=lr, gamma=self.td3_gamma, tau=self.td3_tau,
            policy_noise=self.td3_policy_noise, noise_clip=self.td3_noise_clip,
            policy_update_frequency=self.td3_update_frequency, batch_size=self.batch_size,
            exploration_noise=self.exploration_noise, epsilon=self.dqn_epsilon,
            target_sync_period=self.dqn_target_sync_period,
        )

    def replace(self, **changes) -> SearlConfig:
        return dataclasses.replace(self, **changes)

    def ablation(self, name: str) -> SearlConfig:
        """Config for one ablation arm: a single component switched off."""
        if name == "no_shared_replay":
            return self.replace(isolated_replay=True)
        if name == "no_architecture":
            return self.replace(mutate_architecture=False, start_network_size=(400, 300))
        if name == "no_hyperparameters":
            return self.replace(mutate_hyperparameters=False)
        if name == "no_weight_noise":
            return self.replace(mutate_weights=False)
        raise ValueError(f"unknown ablation {name!r}; choose from {ABLATIONS}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["start_network_size"] = list(self.start_network_size)
        d["new_nodes_choices"] = list(self.new_nodes_choices)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SearlConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Individual:
    id: int
    agent: object
    lineage: list = field(default_factory=list)  # (generation, op, detail)
    ancestors: tuple = ()  # own id first, then parents back to the founder
    replay: SharedReplay | None = None  # private buffer under isolated replay
    quarantined: str | None = None

    def __post_init__(self):
        if not self.ancestors:
            self.ancestors = (self.id,)

    @property
    def hp(self) -> Hyperparams:
        return self.agent.hp

    @property
    def spec(self):
        return self.agent.actor.spec

    def offspring(self, new_id: int) -> Individual:
        return Individual(
            new_id, self.agent.clone(), list(self.lineage), (new_id, *self.ancestors),
            None if self.replay is None else self.replay.copy(),
        )

    def copy(self) -> Individual:
        return Individual(
            self.id, self.agent.clone(), list(self.lineage), self.ancestors,
            None if self.replay is None else self.replay.copy(),
        )


@dataclass
class Population:
    members: list[Individual]
    generation: int = 0
    next_id: int = 0

    def __len__(self):
        return len(self.members)

    def new_id(self) -> int:
        i = self.next_id
        self.next_id += 1
        return i


@dataclass
class Fitness:
    individual_id: int
    mean_episode_reward: float
    episodes: int
    frames: int
    transitions: list[Transition] = field(default_factory=list, repr=False)
    error: str | None = None


def _signature(env_or_sig) -> EnvSignature:
    return env_or_sig if isinstance(env_or_sig, EnvSignature) else env_or_sig.signature


def initialize_population(config: SearlConfig, env_signature, rng: np.random.Generator,
                          seed: int | None = None) -> Population:
    """Fresh population; with ``seed`` each slot draws from its own stream."""
    sig = _signature(env_signature)
    members = []
    for slot in range(config.population_size):
        r = rng if seed is None else phase_rng(seed, 0, slot, _INIT)
        if config.init_mode == "fixed_default":
            hidden, act, hp = config.start_network_size, config.default_activation, config.hyperparams()
        else:
            from .baselines import PBT_SPACE, sample_configuration

            sampled = sample_configuration(PBT_SPACE, r)
            hidden, act = sampled.hidden_widths, sampled.activation
            hp = config.hyperparams(sampled.lr)
        members.append(Individual(slot, create_agent(sig, hidden, hp, r, act)))
    return Population(members, 0, config.population_size)


def evaluate(individual: Individual, env: Env, rng: np.random.Generator, min_eval_frames: int = 250,
             exploration: float | None = None, replay: SharedReplay | None = None,
             ledger: InteractionLedger | None = None) -> Fitness:
    """Roll out whole episodes until at least one is done and
    ``min_eval_frames`` steps were taken; fitness is the mean episode return.

    Transitions are returned and, when ``replay`` is given, appended tagged
    with the individual's id. An environment or policy fault yields fitness
    ``-inf``; steps taken before the fault are still counted.
    """
    agent = individual.agent
    if individual.quarantined:
        log.warning("individual %d quarantined (%s); fitness -inf", individual.id, individual.quarantined)
        return Fitness(individual.id, float("-inf"), 0, 0, error=individual.quarantined)
    noise = default_exploration(agent) if exploration is None else exploration
    transitions: list[Transition] = []
    returns: list[float] = []
    frames = 0
    error = None
    try:
        while not returns or frames < min_eval_frames:
            state = env.reset(rng)
            total, done = 0.0, False
            while not done:
                action = exploration_action(agent, state, rng, noise)
                next_state, reward, done, truncated = env.step(action)
                frames += 1
                transitions.append(Transition(state, action, reward, next_state, done, truncated))
                total += reward
                state = next_state
            returns.append(total)
    except Exception as e:  # quarantine rather than abort the run
        error = f"{type(e).__name__}: {e}"
        log.warning("evaluation of individual %d failed: %s", individual.id, error)
        transitions = []
    fit = Fitness(individual.id, float(np.mean(returns)) if error is None else float("-inf"),
                  len(returns), frames, transitions, error)
    if replay is not None:
        replay.extend(transitions, individual.id)
    if ledger is not None and frames > 0:
        ledger.record(frames)
    return fit


def _rank_key(fitness: float, ident: int):
    # higher fitness first, ties to the lower id
    return (-fitness, ident)


def select(population: Population, fitnesses, k: int, rng: np.random.Generator) -> list[Individual]:
    """Elitism plus k-way tournaments drawn without replacement.

    Slot 0 is a copy of the best individual (same id, untouched weights);
    every other slot is a new-id offspring of a tournament winner.
    """
    members = population.members
    n = len(members)
    fit = [f.mean_episode_reward if isinstance(f, Fitness) else float(f) for f in fitnesses]
    if len(fit) != n:
        raise ValueError("need one fitness per member")
    if n >= 2 and not 1 <= k <= n:
        raise ValueError(f"tournament size {k} outside [1, {n}]")
    best = min(range(n), key=lambda i: _rank_key(fit[i], members[i].id))
    selected = [members[best].copy()]
    for _ in range(n - 1):
        draw = rng.choice(n, size=k, replace=False)
        winner = min(draw, key=lambda i: _rank_key(fit[i], members[i].id))
        selected.append(members[winner].offspring(population.new_id()))
    return selected


def _clip_count(width: int, count: int, max_width: int) -> int:
    return max(0, min(count, max_width - width))


def mutate_architecture(agent, config: SearlConfig, rng: np.random.Generator) -> str:
    """Grow every network of ``agent`` the same way; returns ``layer``,
    ``nodes`` or ``blocked`` (guardrails left no room)."""
    nets = {**agent.policy_nets, **agent.value_nets}
    widths = next(iter(nets.values())).spec.hidden_widths
    add_layer = rng.random() < config.new_layer_probability
    if add_layer and len(widths) < config.max_layers:
        agent.replace_nets(**{name: grow_layer(net, rng) for name, net in nets.items()})
        return "layer"
    layer = int(rng.integers(len(widths)))
    count = int(config.new_nodes_choices[rng.integers(len(config.new_nodes_choices))])
    count = _clip_count(widths[layer], count, config.max_width)
    if count == 0:
        return "blocked"
    agent.replace_nets(**{name: grow_nodes(net, layer, count, rng) for name, net in nets.items()})
    return "nodes" if not add_layer else "nodes_at_max_depth"


def mutate_activation(agent, rng: np.random.Generator) -> str:
    changes = {}
    for group in (agent.policy_nets, agent.value_nets):
        if not group:
            continue
        current = next(iter(group.values())).spec.activation
        choices = [a for a in ACTIVATIONS if a != current]
        act = choices[rng.integers(len(choices))]
        changes.update({name: swap_activation(net, activation=act) for name, net in group.items()})
    agent.replace_nets(**changes)
    return agent.actor.spec.activation


def mutate_hyperparameters(agent, rng: np.random.Generator) -> str:
    for name in agent.tunable_lrs:
        factor = (0.8, 1.2)[rng.integers(2)]
        setattr(agent.hp, name, getattr(agent.hp, name) * factor)
    agent.hp.clamp()
    agent.sync_learning_rates()
    return ",".join(f"{n}={getattr(agent.hp, n):.3g}" for n in agent.tunable_lrs)


def mutate_weights(agent, config: SearlConfig, rng: np.random.Generator) -> str:
    agent.replace_nets(**{
        name: perturb_weights(net, config.parameter_noise_std, config.parameter_noise_fraction, rng)
        for name, net in agent.policy_nets.items()
    })
    return f"std={config.parameter_noise_std}"


def apply_mutation(agent, op: str, config: SearlConfig, rng: np.random.Generator) -> str:
    if op == "weights":
        return mutate_weights(agent, config, rng)
    if op == "activation":
        return mutate_activation(agent, rng)
    if op == "architecture":
        return mutate_architecture(agent, config, rng)
    if op == "hyperparameters":
        return mutate_hyperparameters(agent, rng)
    if op == "none":
        return ""
    raise ValueError(f"unknown mutation op {op!r}")


def mutate(individual: Individual, config: SearlConfig, rng: np.random.Generator,
           generation: int = 0) -> tuple[Individual, str]:
    """Apply one operator drawn uniformly from the enabled set, in place."""
    ops = config.enabled_ops
    op = ops[rng.integers(len(ops))]
    detail = apply_mutation(individual.agent, op, config, rng)
    individual.lineage.append((generation, op, detail))
    return individual, op


def training_steps(tau_frames: int, j: float) -> int:
    # the epsilon guards products such as 0.29 * 100 against rounding down
    return int(math.floor(tau_frames * j + 1e-9))


def train_individual(individual: Individual, replay: SharedReplay, steps: int,
                     rng: np.random.Generator) -> dict:
    """Rebuild targets/optimisers, then ``steps`` updates on ``replay``.

    A learner error quarantines the individual instead of propagating.
    """
    agent = individual.agent
    agent.rebuild_targets_and_optimizers()
    losses: dict = {}
    if steps == 0:
        return losses
    try:
        for step in range(1, steps + 1):
            losses = agent.train_batch(replay.sample_batch(agent.hp.batch_size, rng), step, rng)
    except Exception as e:
        individual.quarantined = f"{type(e).__name__}: {e}"
        log.warning("training of individual %d stopped: %s", individual.id, individual.quarantined)
    return losses


def train_generation(population: Population, replay: SharedReplay | None, tau_frames: int, j: float,
                     rngs: list[np.random.Generator], workers: int = 1) -> Population:
    """Train every member for floor(tau * j) steps (private replays if set)."""
    steps = training_steps(tau_frames, j)

    def job(slot):
        ind = population.members[slot]
        buf = ind.replay if ind.replay is not None else replay
        if buf is None or (len(buf) == 0 and steps > 0):
            raise ValueError("training needs a non-empty replay buffer")
        train_individual(ind, buf, steps, rngs[slot])

    _parallel(job, range(len(population)), workers)
    return population


def _parallel(fn: Callable, items, workers: int) -> list:
    items = list(items)
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class RunRecord:
    method: str
    seed: int
    config: dict
    rows: list[dict] = field(default_factory=list)
    curve: Curve = field(default_factory=Curve)
    generations: int = 0
    total_frames: int = 0
    best_fitness: float = float("-inf")
    best_checkpoint: dict | None = None
    ledger: InteractionLedger | None = field(default=None, repr=False)
    population: Population | None = field(default=None, repr=False)
    replay: SharedReplay | None = field(default=None, repr=False)
    extras: dict = field(default_factory=dict, repr=False)


def _row(method, seed, generation, slot, ind: Individual, fit: Fitness, cumulative) -> dict:
    agent = ind.agent
    critic_lr = agent.hp.critic_lr
    actor_lr = agent.hp.actor_lr if "actor_lr" in agent.tunable_lrs else critic_lr
    return {
        "method": method, "seed": seed, "generation": generation, "individual": slot,
        "fitness": fit.mean_episode_reward, "eval_frames": fit.frames, "cumulative_frames": cumulative,
        "actor_lr": actor_lr, "critic_lr": critic_lr, "activation": agent.actor.spec.activation,
        "hidden_widths": list(agent.actor.spec.hidden_widths), "mutation_op": "",
    }


def run(config: SearlConfig, env: str | Callable[[], Env], seed: int = 0,
        on_generation: Callable[[RunRecord], None] | None = None) -> RunRecord:
    """Full loop until the ledger reaches ``config.max_frames``."""
    make = (lambda: make_env(env)) if isinstance(env, str) else env
    envs = [make() for _ in range(config.population_size)]
    sig = envs[0].signature
    ledger = InteractionLedger()
    pop = initialize_population(config, sig, None, seed=seed)
    action_dim = sig.action_dim if sig.continuous else None
    shared = None
    if config.isolated_replay:
        capacity = max(1, config.replay_memory_size // config.population_size)
        for ind in pop.members:
            ind.replay = SharedReplay(capacity, sig.state_dim, action_dim)
    else:
        shared = SharedReplay(config.replay_memory_size, sig.state_dim, action_dim)
    record = RunRecord("searl", seed, config.to_dict(), ledger=ledger, replay=shared)
    n = config.population_size

    while True:
        g = pop.generation
        fits = _parallel(
            lambda s: evaluate(pop.members[s], envs[s], phase_rng(seed, g, s, _EVAL),
                               config.min_eval_frames, config.eval_exploration),
            range(n), config.workers,
        )
        gen_frames = 0
        rows = []
        # barrier: append in slot order so the buffer is schedule-independent
        for slot, (ind, fit) in enumerate(zip(pop.members, fits)):
            (ind.replay if ind.replay is not None else shared).extend(fit.transitions, ind.id)
            fit.transitions = []
            if fit.frames:
                ledger.record(fit.frames)
            gen_frames += fit.frames
            rows.append(_row("searl", seed, g, slot, ind, fit, ledger.total_frames))
        best = min(range(n), key=lambda i: _rank_key(fits[i].mean_episode_reward, pop.members[i].id))
        best_fit = fits[best].mean_episode_reward
        if gen_frames:
            record.curve.append(ledger.total_frames, best_fit)
        if best_fit > record.best_fitness or record.best_checkpoint is None:
            record.best_fitness = best_fit
            record.best_checkpoint = pop.members[best].agent.to_dict()
        record.rows.extend(rows)
        record.generations = g + 1
        record.total_frames = ledger.total_frames

        if ledger.total_frames >= config.max_frames:
            if on_generation is not None:
                on_generation(record)
            break

        selected = select(pop, fits, config.tournament_size, phase_rng(seed, g, 0, _SELECT))
        selected[0].lineage.append((g, ELITE, ""))
        rows[0]["mutation_op"] = ELITE
        for slot in range(1, n):
            _, op = mutate(selected[slot], config, phase_rng(seed, g, slot, _MUTATE), g)
            rows[slot]["mutation_op"] = op
        pop = Population(selected, g + 1, pop.next_id)
        train_generation(pop, shared, gen_frames, config.train_frames_fraction,
                         [phase_rng(seed, g, s, _TRAIN) for s in range(n)], config.workers)
        if on_generation is not None:
            on_generation(record)

    record.population = pop
    return record
