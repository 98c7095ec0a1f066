import numpy as np
import pytest

from autorl.baselines import (
    PBT_SPACE, RANDOM_SEARCH_SPACE, PBTConfig, SearchSpace, exploit_pairs, run_pbt, run_random_search,
    sample_configuration,
)
from autorl.envs import PointMass1D
from autorl.exp import Curve, fair_scale_offline
from autorl.learners import Hyperparams


def small_env():
    return PointMass1D(max_episode_steps=20)


def test_space_validation():
    with pytest.raises(ValueError):
        SearchSpace((1e-3, 1e-4), ("relu",), (1,), (8, 16))
    with pytest.raises(ValueError):
        SearchSpace((1e-4, 1e-3), (), (1,), (8, 16))
    with pytest.raises(ValueError):
        SearchSpace((1e-4, 1e-3), ("swish",), (1,), (8, 16))


def test_random_search_space_samples():
    rng = np.random.default_rng(0)
    samples = [sample_configuration(RANDOM_SEARCH_SPACE, rng) for _ in range(10_000)]
    lrs = np.array([s.lr for s in samples])
    assert lrs.min() >= 1e-5 and lrs.max() <= 5e-3
    hist, _ = np.histogram(np.log10(lrs), bins=4, range=(np.log10(1e-5), np.log10(5e-3)))
    assert np.all((hist / 10_000 >= 0.22) & (hist / 10_000 <= 0.28))
    assert {len(s.hidden_widths) for s in samples} == {1, 2, 3}
    widths = np.concatenate([s.hidden_widths for s in samples])
    assert widths.min() >= 64 and widths.max() <= 500
    assert {s.activation for s in samples} == {"relu", "tanh", "elu"}


def test_pbt_space_samples():
    rng = np.random.default_rng(1)
    for _ in range(500):
        s = sample_configuration(PBT_SPACE, rng)
        assert len(s.hidden_widths) in (1, 2) and all(128 <= w <= 384 for w in s.hidden_widths)


def test_degenerate_space_is_constant():
    space = SearchSpace((1e-3, 1e-3), ("tanh",), (2,), (32, 32))
    rng = np.random.default_rng(0)
    outs = {sample_configuration(space, rng) for _ in range(20)}
    assert len(outs) == 1
    (s,) = outs
    assert (s.lr, s.activation, s.hidden_widths) == (1e-3, "tanh", (32, 32))


def synthetic_train(cfg, make_env, frames, rng):
    # learning rate alone determines the reward, monotonically
    curve = Curve([(f, np.log10(cfg.lr) * (1 + f / frames)) for f in range(100, frames + 1, 100)])
    return curve, float(np.log10(cfg.lr)), frames


def test_random_search_picks_planted_best():
    rec = run_random_search(12, 500, small_env, seed=4, train_fn=synthetic_train)
    trials = rec.extras["trials"]
    best = max(trials, key=lambda t: t.config.lr)
    assert rec.extras["best_trial"] is best
    assert rec.curve == fair_scale_offline(best.curve, 12)
    assert rec.ledger.total_frames == 12 * 500


def test_single_trial():
    rec = run_random_search(1, 300, small_env, seed=0, train_fn=synthetic_train)
    assert rec.extras["best_trial"].index == 0
    assert rec.curve == rec.extras["best_trial"].curve


def test_random_search_trials_are_independent():
    seeds = [[5, i] for i in range(4)]
    hp = Hyperparams(batch_size=16)
    a = run_random_search(4, 120, small_env, trial_seeds=seeds, base_hp=hp,
                          space=SearchSpace((1e-4, 1e-3), ("relu",), (1,), (8, 16)))
    b = run_random_search(4, 120, small_env, trial_seeds=seeds[::-1], base_hp=hp,
                          space=SearchSpace((1e-4, 1e-3), ("relu",), (1,), (8, 16)))
    curves_a = [t.curve.points for t in a.extras["trials"]]
    curves_b = [t.curve.points for t in b.extras["trials"]]
    assert curves_a == curves_b[::-1]
    assert a.ledger.total_frames == b.ledger.total_frames == 4 * 120
    assert len(a.rows) == 4 and sum(r["mutation_op"] == "best" for r in a.rows) == 1


def test_exploit_rule():
    rng = np.random.default_rng(0)
    assert exploit_pairs([1.0] * 10, 0.2, rng) == []
    pairs = exploit_pairs(list(range(20)), 0.2, rng)
    assert sorted(d for d, _ in pairs) == [0, 1, 2, 3]
    assert all(s in (16, 17, 18, 19) for _, s in pairs)
    pairs = exploit_pairs([float("-inf"), 0.0, 1.0, 2.0, 3.0], 0.2, rng)
    assert [d for d, _ in pairs] == [0] and pairs[0][1] == 4


def tiny_pbt(**kw):
    base = dict(population_size=5, generations=3, frames_per_member=40, warmup_frames=10, replay_memory_size=500)
    base.update(kw)
    return PBTConfig(**base)


SMALL_PBT_SPACE = SearchSpace((1e-4, 1e-3), ("relu", "tanh"), (1,), (8, 16))


def test_pbt_ledger_and_private_replays():
    cfg = tiny_pbt()
    rec = run_pbt(cfg, small_env, seed=0, space=SMALL_PBT_SPACE, base_hp=Hyperparams(batch_size=8))
    assert rec.ledger.total_frames == 5 * 3 * 40
    assert len(rec.rows) == 15 and len(rec.curve) == 3
    for m, trainer in enumerate(rec.extras["trainers"]):
        assert set(trainer.replay.tags()) == {m}


def test_pbt_one_generation_accounting():
    cfg = tiny_pbt(population_size=20, generations=1, frames_per_member=10)
    rec = run_pbt(cfg, small_env, seed=1, space=SMALL_PBT_SPACE, base_hp=Hyperparams(batch_size=8))
    assert rec.ledger.total_frames == 20 * 10


def test_pbt_exploit_copies_top_member(monkeypatch):
    import autorl.baselines as bl
    from autorl.envs import EnvSignature
    from autorl.learners import create_agent

    sig = EnvSignature(2, "continuous", 10, 1, 1.0)
    agents = [create_agent(sig, [8], rng=np.random.default_rng(i)) for i in range(10)]
    top = {agents[i].checksum() for i in (8, 9)}
    fitness = [float(i) for i in range(10)]
    pre_explore = []
    real_explore = bl.explore

    def spy(agent, config, rng):
        pre_explore.append(agent.checksum())
        return real_explore(agent, config, rng)

    monkeypatch.setattr(bl, "explore", spy)
    moves = bl.exploit_and_explore(agents, fitness, PBTConfig(), np.random.default_rng(0))
    assert sorted(d for d, _, _ in moves) == [0, 1]
    assert all(c in top for c in pre_explore)
    for dst, src, _ in moves:
        assert fitness[dst] == fitness[src]
        assert agents[dst] is not agents[src]
    # learning rates were perturbed on the copies only
    assert all(agents[d].hp.actor_lr in (0.0008, 0.0012) for d, _, _ in moves)
    assert agents[9].hp.actor_lr == 0.001


def test_pbt_exploit_rows():
    cfg = tiny_pbt(generations=2)
    rec = run_pbt(cfg, small_env, seed=3, space=SMALL_PBT_SPACE, base_hp=Hyperparams(batch_size=8))
    copies = [r for r in rec.rows if r["generation"] == 0 and r["mutation_op"].startswith("exploit:")]
    assert len(copies) == 1
