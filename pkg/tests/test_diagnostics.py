import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from indrnn.architectures import Dropouts, NetworkSpec, build_network, network_forward
from indrnn.baseline import scaled_orthogonal
from indrnn.diagnostics import (
    LONG,
    SHORT,
    LinearRnn,
    classify_memory,
    linear_rnn_states,
    memory_report,
    record_gradient_flow,
    rnn_to_indrnn,
    verify_equivalence,
    weight_histogram,
)
from indrnn.errors import ConfigError, NotRepresentableError, ShapeError
from indrnn.experiments import random_diagonalizable
from indrnn.layer import IndRnnLayer
from indrnn.numerics import seed_rng
from indrnn.training import mse_loss

EPS = np.finfo(float).eps


def one_neuron_net(u, T):
    spec = NetworkSpec(kind="stacked", layers=1, hidden=1, input_dim=1, output_dim=1,
                       dropout=Dropouts.none(), batch_norm=False, seq_len_hint=T, gamma=np.inf)
    net = build_network(spec, seed_rng(0))
    layer = net.recurrent_nodes()[0].layer
    layer.W[:] = 1.0
    layer.u[:] = u
    layer.b[:] = 0.0
    return net


def trace_for(net, T, B=3, seed=0):
    r = seed_rng(seed)
    X = r.uniform(0.5, 1.0, size=(T, B, net.spec.input_dim))
    return record_gradient_flow(net, [(X, r.normal((B, 1)))], mse_loss)


def test_gradient_flow_u_one_is_constant():
    tr = trace_for(one_neuron_net(1.0, 12), 12)
    assert np.allclose(tr.over_time, tr.over_time[0], rtol=1e-14, atol=0)
    assert tr.over_time[0] > 0 and tr.over_depth.shape == (1,)


def test_gradient_flow_u_half_is_geometric():
    T = 12
    tr = trace_for(one_neuron_net(0.5, T), T)
    expected = tr.over_time[-1] * 0.5 ** (T - 1 - np.arange(T))
    assert np.allclose(tr.over_time, expected, rtol=1e-13, atol=0)


def test_gradient_flow_does_not_mutate(rng):
    spec = NetworkSpec(kind="stacked", layers=2, hidden=4, input_dim=2, output_dim=1,
                       batch_norm=True, seq_len_hint=6)
    net = build_network(spec, rng)
    before = {k: v.copy() for k, v in {**net.parameters(), **net.buffers()}.items()}
    X = rng.normal((6, 5, 2))
    record_gradient_flow(net, [(X, rng.normal((5, 1)))] * 3, mse_loss)
    after = {**net.parameters(), **net.buffers()}
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_gradient_flow_needs_a_batch():
    with pytest.raises(ConfigError):
        record_gradient_flow(one_neuron_net(1.0, 3), [], mse_loss)


def test_gradient_flow_averages_and_limits_batches(rng):
    net = one_neuron_net(0.8, 5)
    b1 = (rng.uniform(0.5, 1, size=(5, 2, 1)), rng.normal((2, 1)))
    b2 = (rng.uniform(0.5, 1, size=(5, 2, 1)), rng.normal((2, 1)))
    t1 = record_gradient_flow(net, [b1], mse_loss)
    t2 = record_gradient_flow(net, [b2], mse_loss)
    both = record_gradient_flow(net, [b1, b2, b1], mse_loss, max_batches=2)
    assert both.batches == 2
    assert np.allclose(both.over_time, (t1.over_time + t2.over_time) / 2)


def test_vanilla_radius_half_decays_faster_than_indrnn():
    T, N = 20, 8
    common = dict(kind="stacked", layers=1, hidden=N, input_dim=2, output_dim=1,
                  dropout=Dropouts.none(), batch_norm=False, seq_len_hint=T, gamma=np.inf)
    ind = build_network(NetworkSpec(**common), seed_rng(1))
    layer = ind.recurrent_nodes()[0].layer
    layer.u[:] = 0.9
    layer.W[:] = np.abs(layer.W)
    layer.b[:] = 0.5  # keep every ReLU active so sigma' = 1
    van = build_network(NetworkSpec(cell="vanilla", activation="tanh", **common), seed_rng(1))
    van.recurrent_nodes()[0].layer.U[:] = scaled_orthogonal(seed_rng(2), N, 0.5)
    ti, tv = trace_for(ind, T), trace_for(van, T)
    ni, nv = ti.over_time / ti.over_time[-1], tv.over_time / tv.over_time[-1]
    assert np.all(nv[:-1] < ni[:-1])
    assert np.allclose(ni, 0.9 ** (T - 1 - np.arange(T)), rtol=1e-12)


# histograms and memory -------------------------------------------------------

def test_histogram_single_bin():
    counts, edges = weight_histogram(np.ones(37), 10, (-1.1, 1.1))
    assert counts.sum() == 37 and counts.max() == 37
    assert len(edges) == 11


def test_histogram_edge_rule():
    counts, _ = weight_histogram(np.array([-1.0, 0.0, 1.0]), 2, (-1.0, 1.0))
    assert counts.tolist() == [1, 2]


def test_histogram_accepts_layer_and_clamps_outliers():
    layer = IndRnnLayer(W=np.zeros((4, 1)), u=np.array([-5.0, 0.1, 0.2, 9.0]), b=np.zeros(4))
    counts, _ = weight_histogram(layer, 4, (-1.0, 1.0))
    assert counts.tolist() == [1, 0, 2, 1]


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=50), st.integers(1, 20))
def test_histogram_conserves_count(values, bins):
    counts, _ = weight_histogram(np.array(values), bins, (-2.0, 2.0))
    assert counts.sum() == len(values)


def test_histogram_errors():
    with pytest.raises(ConfigError):
        weight_histogram(np.ones(3), 0, (0, 1))
    with pytest.raises(ConfigError):
        weight_histogram(np.ones(3), 3, (1, 1))


@pytest.mark.parametrize("horizon", [1, 10, 1000, 5000])
def test_classify_unit_weight_is_long(horizon):
    assert classify_memory(1.0, horizon, 0.01) == LONG
    assert classify_memory(-1.0, horizon, 0.5) == LONG


def test_classify_examples():
    assert classify_memory(0.9, 100, 0.01) == SHORT
    assert abs(0.9 ** 100 - 2.656e-5) < 1e-8
    assert classify_memory(0.0, 1, 0.01) == SHORT
    assert classify_memory(0.999, 100, 0.01) == LONG
    assert classify_memory(0.999, 100, 0.01, sigma_prime=0.5) == SHORT


def test_classify_boundary_is_short():
    assert classify_memory(0.5, 1, 0.5) == SHORT
    assert classify_memory(0.5, 2, 0.25) == SHORT
    assert classify_memory(np.nextafter(0.5, 1), 2, 0.25) == LONG


@pytest.mark.parametrize("bad", [dict(horizon=0), dict(epsilon=0.0), dict(epsilon=1.0),
                                 dict(sigma_prime=0.0), dict(sigma_prime=1.5)])
def test_classify_preconditions(bad):
    args = dict(u_n=0.5, horizon=3, epsilon=0.1, sigma_prime=1.0)
    args.update(bad)
    with pytest.raises(ConfigError):
        classify_memory(**args)


def test_memory_report_counts():
    rep = memory_report(np.array([-1.0, 0.0, 0.5, 1.0]), 10, 0.01)
    assert (rep.n_negative, rep.n_zero, rep.n_positive) == (1, 1, 2)
    assert rep.classes == [LONG, SHORT, SHORT, LONG] and rep.n_long == 2


@given(st.floats(-2, 2), st.integers(1, 200), st.floats(1e-6, 0.999), st.floats(0.01, 1.0))
def test_memory_report_consistent_with_rule(u, h, eps, sp):
    rep = memory_report(np.array([u]), h, eps, sp)
    assert rep.classes[0] == (LONG if (abs(u) * sp) ** h > eps else SHORT)


# linear RNN equivalence --------------------------------------------------------

def test_equivalence_diagonal(rng):
    rnn = LinearRnn(np.diag([0.5, -0.3, 0.9]), rng.normal((3, 2)))
    pair = rnn_to_indrnn(rnn)
    assert np.array_equal(pair.W_s, np.eye(3))
    assert np.array_equal(pair.rec.u, [0.5, -0.3, 0.9])
    assert np.array_equal(pair.rec.W, rnn.W)
    assert verify_equivalence(rnn, pair, rng.normal((10, 4, 2))) < 1e-12


def test_equivalence_swap_matrix(rng):
    rnn = LinearRnn(np.array([[0.0, 1.0], [1.0, 0.0]]), rng.normal((2, 1)))
    pair = rnn_to_indrnn(rnn)
    assert sorted(pair.rec.u.tolist()) == pytest.approx([-1.0, 1.0], abs=1e-15)
    assert verify_equivalence(rnn, pair, rng.normal((10, 3, 1)), steps=10) < 1e-12


def test_equivalence_rejects_nilpotent():
    with pytest.raises(NotRepresentableError):
        rnn_to_indrnn(LinearRnn(np.array([[0.0, 1.0], [0.0, 0.0]]), np.ones((2, 1))))


def test_equivalence_rejects_rotation():
    c, s = np.cos(0.3), np.sin(0.3)
    with pytest.raises(NotRepresentableError):
        rnn_to_indrnn(LinearRnn(np.array([[c, -s], [s, c]]), np.ones((2, 1))))


def test_equivalence_symmetric_3x3(rng):
    A = rng.normal((3, 3))
    U = (A + A.T) / 4
    rnn = LinearRnn(U, rng.normal((3, 2)))
    assert verify_equivalence(rnn, rnn_to_indrnn(rnn), rng.normal((10, 2, 2))) < 1e-10


def test_equivalence_scaling_linearity(rng):
    rnn = LinearRnn(random_diagonalizable(rng, 4), rng.normal((4, 2)))
    pair = rnn_to_indrnn(rnn)
    X = rng.normal((10, 3, 2))
    d1, d10 = verify_equivalence(rnn, pair, X), verify_equivalence(rnn, pair, 10 * X)
    assert d10 <= 10 * d1 * (1 + 1e-6) + 1e-13


@settings(max_examples=30)
@given(st.sampled_from([3, 5]), st.floats(2.0, 200.0), st.integers(0, 2**32 - 1))
def test_equivalence_error_scales_with_condition(N, cond_target, seed):
    r = seed_rng(seed)
    rnn = LinearRnn(random_diagonalizable(r, N, cond_target), r.normal((N, 2)))
    pair = rnn_to_indrnn(rnn)
    X = r.normal((10, 2, 2))
    mag = np.abs(linear_rnn_states(rnn, X)).max()
    assert verify_equivalence(rnn, pair, X) <= 100 * pair.condition * EPS * max(mag, 1.0)


def test_linear_rnn_shape_checks():
    with pytest.raises(ShapeError):
        LinearRnn(np.ones((2, 3)), np.ones((2, 1)))
    with pytest.raises(ShapeError):
        LinearRnn(np.eye(2), np.ones((3, 1)))
