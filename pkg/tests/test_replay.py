import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from autorl.replay import EmptyReplayError, SharedReplay, Transition


def tr(i, dim=2, discrete=False):
    a = i % 3 if discrete else np.array([float(i)])
    return Transition(np.full(dim, float(i)), a, float(i), np.full(dim, i + 0.5), i % 7 == 0, i % 11 == 0)


def ids(buffer):
    return [t.reward for t in buffer.contents()]


def test_ring_eviction():
    rb = SharedReplay(3, 2, 1)
    for i, _ in enumerate("abcde"):
        rb.append(tr(i))
    assert ids(rb) == [2.0, 3.0, 4.0]
    assert len(rb) == 3 and rb.total_appends == 5


def test_append_to_empty():
    rb = SharedReplay(10, 2, 1)
    rb.append(tr(0))
    assert len(rb) == 1


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 20), st.integers(0, 60))
def test_fifo_property(capacity, n):
    rb = SharedReplay(capacity, 2, 1)
    for i in range(n):
        rb.append(tr(i))
    assert len(rb) == min(n, capacity)
    assert ids(rb) == [float(i) for i in range(max(0, n - capacity), n)]


def test_full_buffer_has_no_reallocation():
    cap = 1_000_000
    rb = SharedReplay(cap, 1, 1)
    states = rb._states
    t = Transition(np.zeros(1), np.zeros(1), 0.0, np.zeros(1), False)
    for _ in range(cap):
        rb.append(t)
    assert len(rb) == cap
    rb.append(t)
    assert len(rb) == cap and rb._states is states


def test_sample_single_item(rng):
    rb = SharedReplay(5, 2, 1)
    rb.append(tr(4))
    batch = rb.sample(8, rng)
    assert len(batch) == 8 and all(t.reward == 4.0 for t in batch)


def test_sample_with_replacement(rng):
    rb = SharedReplay(100, 2, 1)
    for i in range(50):
        rb.append(tr(i))
    batch = rb.sample(100, rng)
    assert len(batch) == 100
    assert {t.reward for t in batch} <= set(range(50))


def test_uniformity_chi_square(rng):
    rb = SharedReplay(1000, 1, None)
    for i in range(1000):
        rb.append(Transition(np.array([float(i)]), 0, float(i), np.array([0.0]), False))
    draws = rb.sample_batch(100_000, rng).rewards.astype(int)
    counts = np.bincount(draws, minlength=1000)
    assert stats.chisquare(counts).pvalue > 0.001
    expected, sigma = 100.0, np.sqrt(100_000 * 1e-3 * (1 - 1e-3))
    assert np.all(np.abs(counts - expected) <= 5 * sigma)


def test_samples_only_current_contents(rng):
    rb = SharedReplay(10, 2, 1)
    for i in range(35):
        rb.append(tr(i))
    assert set(rb.sample_batch(500, rng).rewards) <= set(range(25, 35))


def test_empty_sample_raises(rng):
    with pytest.raises(EmptyReplayError):
        SharedReplay(4, 2, 1).sample(1, rng)


def test_shape_validation():
    rb = SharedReplay(4, 2, 1)
    with pytest.raises(ValueError):
        rb.append(Transition(np.zeros(3), np.zeros(1), 0.0, np.zeros(3), False))
    with pytest.raises(ValueError):
        rb.append(Transition(np.zeros(2), np.zeros(2), 0.0, np.zeros(2), False))
    with pytest.raises(ValueError):
        SharedReplay(4, 2, None).append(Transition(np.zeros(2), np.zeros(1), 0.0, np.zeros(2), False))


def test_batch_terminal_mask():
    rb = SharedReplay(4, 1, 1)
    rb.append(Transition(np.zeros(1), np.zeros(1), 0.0, np.zeros(1), True, False))
    rb.append(Transition(np.zeros(1), np.zeros(1), 1.0, np.zeros(1), True, True))
    rb.append(Transition(np.zeros(1), np.zeros(1), 2.0, np.zeros(1), False, False))
    b = rb.sample_batch(200, np.random.default_rng(0))
    expected = np.where(b.rewards == 0.0, 1.0, 0.0)
    assert np.array_equal(b.terminal, expected)


def test_cross_individual_sharing(rng):
    # transitions written under one tag are drawn by any learner sampling the buffer
    rb = SharedReplay(100, 2, 1)
    for tag in range(4):
        for i in range(10):
            rb.append(tr(10 * tag + i), tag)
    tags_seen = set(rb.sample_batch(400, rng).tags)
    assert tags_seen == {0, 1, 2, 3}
    assert list(rb.tags()) == [t for t in range(4) for _ in range(10)]


def test_concurrent_appends():
    rb = SharedReplay(10_000, 2, 1)

    def worker(k):
        for i in range(500):
            rb.append(tr(i), k)

    threads = [threading.Thread(target=worker, args=(k,)) for k in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(rb) == 4000 and rb.total_appends == 4000
    assert np.bincount(rb.tags()).tolist() == [500] * 8


def test_copy_is_independent():
    rb = SharedReplay(5, 2, 1)
    for i in range(7):
        rb.append(tr(i))
    cp = rb.copy()
    cp.append(tr(99))
    assert ids(rb) == [2.0, 3.0, 4.0, 5.0, 6.0]
    assert ids(cp) == [3.0, 4.0, 5.0, 6.0, 99.0]


@pytest.mark.parametrize("discrete", [False, True])
def test_dump_load_roundtrip(tmp_path, discrete):
    rb = SharedReplay(6, 2, None if discrete else 1)
    for i in range(9):
        rb.append(tr(i, discrete=discrete), i % 2)
    loaded = SharedReplay.load(rb.dump(tmp_path / "rb.json"))
    assert len(loaded) == len(rb) and loaded.total_appends == 9
    for a, b in zip(rb.contents(), loaded.contents()):
        assert np.array_equal(a.state, b.state) and np.array_equal(a.action, b.action)
        assert (a.reward, a.done, a.truncated) == (b.reward, b.done, b.truncated)
    assert np.array_equal(rb.tags(), loaded.tags())
    loaded.append(tr(100, discrete=discrete))
    assert ids(loaded)[-1] == 100.0
