import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asyncsnn.core import LifParams, event_update
from asyncsnn.scheduler import (MOMENTUM, RANDOM, SchedulingPolicy, SpikeQueue, SyncConfig,
                                apply_sync_threshold, enqueue, route_input, select_spikes)


def queue_with(spikes, momentum=None):
    q = SpikeQueue.empty(len(spikes))
    q.spikes[:] = spikes
    if momentum is not None:
        q.momentum[:] = momentum
    return q


def test_enqueue_sets_counts():
    q = SpikeQueue.empty(6)
    new = np.zeros(6, dtype=int)
    new[[2, 5]] = 1
    enqueue(q, new, np.full(6, 0.4))
    assert list(q.spikes) == [0, 0, 1, 0, 0, 1]


def test_enqueue_count_semantics():
    q = queue_with([0, 0, 1])
    enqueue(q, np.array([0, 0, 1]), np.array([0, 0, 0.5]))
    assert q.spikes[2] == 2


def test_enqueue_momentum_is_pre_reset_potential():
    p = LifParams(tau_m=10.0, u_thr=0.3)
    u_new, spiked, u_plus = event_update(0.25, 0.2, 1.0, p)
    q = SpikeQueue.empty(3)
    enqueue(q, np.array([0, spiked, 0]), np.array([0, u_plus, 0]))
    assert q.momentum[1] == u_plus and u_new == 0.0


def test_select_all_when_fewer_than_f():
    q = queue_with([1, 0, 1, 1])
    sel, bar = select_spikes(q, 8, SchedulingPolicy(RANDOM), np.random.default_rng(0))
    assert list(sel) == [1, 0, 1, 1] and bar.sum() == 0


def test_momentum_top_two():
    q = queue_with([1, 1, 1], momentum=[0.9, 0.5, 0.7])
    sel, _ = select_spikes(q, 2, SchedulingPolicy(MOMENTUM), np.random.default_rng(0))
    assert list(sel) == [1, 0, 1]


def test_momentum_ties_ascending_index():
    q = queue_with([1, 1, 1, 1], momentum=[0.5, 0.5, 0.5, 0.5])
    sel, _ = select_spikes(q, 2, SchedulingPolicy(MOMENTUM), np.random.default_rng(0))
    assert list(sel) == [1, 1, 0, 0]


def test_random_selection_frequency():
    # each of 10 pending spikes is picked with probability 8/10
    q = queue_with([1] * 10)
    rng = np.random.default_rng(1234)
    hits = np.zeros(10)
    trials = 10_000
    for _ in range(trials):
        sel, _ = select_spikes(q, 8, SchedulingPolicy(RANDOM), rng)
        assert sel.sum() == 8
        hits += sel
    freq = hits / trials
    assert np.all(np.abs(freq - 0.8) <= 0.02)


def test_empty_queue_selects_nothing():
    sel, bar = select_spikes(SpikeQueue.empty(4), 3, SchedulingPolicy(), np.random.default_rng(0))
    assert sel.sum() == 0 and bar.sum() == 0


def test_group_size_must_be_positive():
    with pytest.raises(ValueError):
        select_spikes(queue_with([1]), 0, SchedulingPolicy(), np.random.default_rng(0))


def test_policy_validation():
    with pytest.raises(ValueError):
        SchedulingPolicy("XX")
    with pytest.raises(ValueError):
        SchedulingPolicy(MOMENTUM, momentum_noise=-1)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=12), st.integers(1, 10),
       st.sampled_from([RANDOM, MOMENTUM]), st.integers(0, 2**31))
def test_selection_bounds(counts, f, kind, seed):
    rng = np.random.default_rng(seed)
    q = queue_with(counts, momentum=rng.random(len(counts)))
    sel, _ = select_spikes(q, f, SchedulingPolicy(kind, 0.1), rng)
    assert sel.sum() == min(f, sum(counts))
    assert np.all(sel <= q.spikes) and np.all(sel >= 0)


@given(st.lists(st.integers(0, 2), min_size=1, max_size=10), st.integers(1, 5))
def test_momentum_without_noise_is_deterministic(counts, f):
    m = np.linspace(0, 1, len(counts))[::-1]
    a, _ = select_spikes(queue_with(counts, m), f, SchedulingPolicy(MOMENTUM), np.random.default_rng(1))
    b, _ = select_spikes(queue_with(counts, m), f, SchedulingPolicy(MOMENTUM), np.random.default_rng(2))
    assert np.array_equal(a, b)


def test_random_selection_same_seed_same_sequence():
    def run(seed):
        rng = np.random.default_rng(seed)
        return [select_spikes(queue_with([1] * 9), 4, SchedulingPolicy(), rng)[0].tolist()
                for _ in range(20)]
    assert run(5) == run(5)


def test_groups_select_independently():
    q = queue_with([1, 1, 1, 1, 1, 1])
    groups = [(np.array([0, 1, 2]), 1), (np.array([3, 4, 5]), 2)]
    sel, _ = select_spikes(q, 8, SchedulingPolicy(), np.random.default_rng(0), groups)
    assert sel[:3].sum() == 1 and sel[3:].sum() == 2


def test_sync_threshold_one_always_allows():
    received = np.zeros(4, dtype=int)
    allowed, bar = apply_sync_threshold(received, np.array([1, 2, 1, 3]), np.ones(4, int), False)
    assert allowed.all() and not bar.any()


def test_sync_threshold_waits():
    received = np.zeros(1, dtype=int)
    allowed, _ = apply_sync_threshold(received, np.array([2]), np.array([3]), True,
                                      above_threshold=np.array([True]))
    assert not allowed[0] and received[0] == 2
    allowed, bar = apply_sync_threshold(received, np.array([1]), np.array([3]), True,
                                        above_threshold=np.array([False]))
    assert allowed[0] and bar[0]


def test_barrier_not_emitted_when_firing():
    received = np.zeros(2, dtype=int)
    allowed, bar = apply_sync_threshold(received, np.array([2, 2]), np.array([2, 2]), True,
                                        above_threshold=np.array([True, False]))
    assert allowed.all() and list(bar) == [False, True]


def test_sync_config_broadcast():
    assert list(SyncConfig(3).thresholds(4)) == [3, 3, 3, 3]
    assert SyncConfig().trivial and not SyncConfig(2, True).trivial


def test_route_input_prioritized():
    q = SpikeQueue.empty(10)
    s_in = np.array([1, 1, 0, 1, 1, 1])
    out = route_input(s_in, True, q, 0.3)
    assert out is s_in or np.array_equal(out, s_in)
    assert q.pending == 0


def test_route_input_queued_drains_one_per_step():
    q = SpikeQueue.empty(8)
    assert route_input(np.array([1, 1, 1, 1, 1]), False, q, 0.3) is None
    assert q.pending == 5 and np.all(q.momentum[:5] == 0.3)
    rng = np.random.default_rng(0)
    steps = 0
    while q.pending:
        sel, _ = select_spikes(q, 1, SchedulingPolicy(), rng)
        assert sel.sum() == 1
        q.spikes -= sel
        steps += 1
    assert steps == 5
