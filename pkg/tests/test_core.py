import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asyncsnn.core import (ConfigurationError, LifParams, NetworkTopology, decay, event_update,
                           format_architecture, init_topology, parse_architecture,
                           synaptic_current, threshold)


def naive_matvec(W, s):
    out = []
    for i in range(W.shape[0]):
        acc = 0.0
        for j in range(W.shape[1]):
            acc += W[i, j] * s[j]
        out.append(acc)
    return np.array(out)


def test_synaptic_current_row():
    W = np.array([[0.5, -0.2]])
    assert synaptic_current(W, np.array([1, 1]))[0] == pytest.approx(0.3)


def test_synaptic_current_zero_input():
    W = np.random.default_rng(0).normal(size=(4, 5))
    assert np.array_equal(synaptic_current(W, np.zeros(5)), np.zeros(4))


@pytest.mark.parametrize("seed", range(5))
def test_synaptic_current_matches_double_loop(seed):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(3, 4))
    s = rng.integers(0, 2, size=4)
    # same ascending summation order -> bit equality
    assert np.array_equal(synaptic_current(W, s), naive_matvec(W, s))


def test_synaptic_current_shape_error():
    with pytest.raises(ConfigurationError):
        synaptic_current(np.zeros((2, 3)), np.zeros(2))


def test_decay_examples():
    assert decay(0.3, 0.0, 1.0) == 0.3
    assert decay(1.0, 1.0, 1.0) == pytest.approx(math.exp(-1))
    assert decay(0.5, 10, 100) + 0.2 == pytest.approx(0.652419, abs=1e-6)


def test_threshold_is_strict():
    assert threshold(0.3, 0.3) == 0
    assert threshold(0.31, 0.3) == 1
    assert threshold(-1.0, 0.3) == 0
    assert list(threshold(np.array([0.3, 0.31]), 0.3)) == [0, 1]


def test_event_update_examples():
    p = LifParams(tau_m=1.0, u_thr=0.3)
    assert event_update(0.0, 0.4, 5.0, p) == (0.0, 1, 0.4)
    u, s, up = event_update(0.2, 0.05, 0.0, p)
    assert (s, u, up) == (0, pytest.approx(0.25), pytest.approx(0.25))
    u, s, up = event_update(0.29, 0.05, 100.0, LifParams(tau_m=100.0, u_thr=0.3))
    assert s == 0 and u == up
    # 0.29 * e^-1 + 0.05, evaluated independently
    assert u == pytest.approx(0.156685038, abs=1e-9)


def test_lif_params_validation():
    with pytest.raises(ConfigurationError):
        LifParams(tau_m=0.0)
    with pytest.raises(ConfigurationError):
        LifParams(u_thr=-0.1)


@settings(max_examples=200, deadline=None)
@given(st.floats(-10, 10), st.floats(0, 50), st.floats(0, 50), st.floats(0.1, 100))
def test_decay_composes(u, a, b, tau):
    assert decay(decay(u, a, tau), b, tau) == pytest.approx(decay(u, a + b, tau), rel=1e-12, abs=1e-300)


@given(st.floats(-5, 5))
def test_event_update_identity(u):
    p = LifParams()
    u_new, s, _ = event_update(u, 0.0, 0.0, p)
    if u <= p.u_thr:
        assert u_new == u and s == 0


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0, 10))
def test_hard_reset(u, x, dt):
    u_new, s, up = event_update(u, x, dt, LifParams(tau_m=3.0))
    if s:
        assert u_new == 0.0 and up > 0.3
    else:
        assert u_new == up


@settings(deadline=None)
@given(st.lists(st.floats(-0.05, 0.05), min_size=1, max_size=8), st.randoms())
def test_subthreshold_order_independent(xs, rnd):
    # all currents sub-threshold in total: order of integration does not matter
    u1 = 0.0
    for x in xs:
        u1 += x
    ys = list(xs)
    rnd.shuffle(ys)
    u2 = 0.0
    for y in ys:
        u2 += y
    assert u1 == pytest.approx(u2, abs=1e-12)


def test_topology_shapes_and_slices():
    topo = init_topology(5, [4, 3, 2], seed=1)
    assert topo.n_neurons == 9 and topo.n_hidden == 7 and topo.n_output == 2
    assert [w.shape for w in topo.weights] == [(4, 5), (3, 4), (2, 3)]
    assert topo.layer_slice(1) == slice(4, 7)
    assert topo.output_slice == slice(7, 9)
    assert list(topo.layer_index()) == [0] * 4 + [1] * 3 + [2] * 2
    with pytest.raises(ConfigurationError):
        NetworkTopology(5, [4, 2], [np.zeros((4, 5)), np.zeros((3, 4))])


def test_init_bounds():
    topo = init_topology(16, [9], seed=3, gain=1.0)
    assert np.abs(topo.weights[0]).max() <= 0.25


def test_architecture_strings():
    assert parse_architecture("2312-[64x3]-10") == (2312, [64, 64, 64, 10])
    assert parse_architecture("350-[128×3]-20") == (350, [128, 128, 128, 20])
    assert parse_architecture("4-3-2") == (4, [3, 2])
    assert format_architecture(2312, [64, 64, 64, 10]) == "2312-[64x3]-10"
    with pytest.raises(ConfigurationError):
        parse_architecture("abc")
