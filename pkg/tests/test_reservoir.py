import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import run_loops, series_loops, step_loops
from vir.errors import ConfigError, ShapeError
from vir.numerics import RngStream
from vir.reservoir import (
    DeepConfig,
    backward_batch,
    build_stack,
    feature_dim,
    forward_batch,
    harvest,
    mean_combiner,
    pool_source,
    pooled_features,
    readout_sources,
    run_parallel,
    run_sequence,
    run_series,
    single_stack,
    step,
)
from vir.reservoir import _pool_weights
from vir.topology import ReservoirMatrices, ReservoirSpec, build_reservoir


def _raw(W, V):
    spec = ReservoirSpec(n=max(W.shape[0], 3), jump=2, input_dim=V.shape[1])
    return ReservoirMatrices(np.asarray(W, float), np.asarray(V, float), 0.0, (0, 1), spec)


def small(n=6, k=3, seed=0, alpha=0.9):
    return build_reservoir(ReservoirSpec(n=n, jump=2, input_dim=k, input_sparsity=1.0, alpha=alpha, seed=seed))


def test_step_zero_everything():
    m = _raw(np.zeros((3, 3)), np.eye(3))
    np.testing.assert_array_equal(step(m, [0.3, -2.0, 5.0], np.zeros(3)), np.zeros(3))


def test_step_scalar_tanh():
    m = _raw(np.zeros((1, 1)), np.eye(1))
    assert step(m, [0.0], [1.0])[0] == pytest.approx(0.76159, abs=1e-5)


def test_step_matches_loop_oracle():
    m = small()
    rng = np.random.default_rng(2)
    x, u = rng.uniform(-1, 1, 6), rng.normal(size=3)
    np.testing.assert_allclose(step(m, x, u), step_loops(m.W, m.V, x, u), atol=1e-12)


def test_step_shape_errors():
    m = small()
    with pytest.raises(ShapeError):
        step(m, np.zeros(5), np.zeros(3))
    with pytest.raises(ShapeError):
        step(m, np.zeros(6), np.zeros(2))


def test_step_noise_is_bounded_and_seeded():
    m = _raw(np.zeros((4, 4)), np.zeros((4, 1)))
    a = step(m, np.zeros(4), [0.0], noise_amp=0.1, stream=RngStream(0, "noise"))
    assert np.all(np.abs(a) <= math.tanh(0.1)) and np.any(a != 0)
    np.testing.assert_array_equal(a, step(m, np.zeros(4), [0.0], noise_amp=0.1, stream=RngStream(0, "noise")))


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 6), st.integers(1, 5), st.integers(1, 4), st.integers(0, 10**6))
def test_run_sequence_matches_loop_oracle(n, T, k, seed):
    m = small(n, k, seed)
    seq = np.random.default_rng(seed).normal(size=(T, k))
    tr = run_sequence(m, seq)
    np.testing.assert_allclose(tr.states, run_loops(m.W, m.V, seq), atol=1e-12)
    assert np.all(np.abs(tr.states) < 1)


def test_run_sequence_basics():
    m = small()
    tr = run_sequence(m, np.ones((1, 3)))
    assert tr.steps == 1 and harvest(tr).shape[0] == 1
    zero = run_sequence(m, np.zeros((7, 3)))
    assert not zero.states.any()
    seq = np.random.default_rng(0).normal(size=(5, 3))
    np.testing.assert_array_equal(run_sequence(m, seq).states, run_sequence(m, seq).states)
    with pytest.raises(ValueError):
        run_sequence(m, np.zeros((0, 3)))
    with pytest.raises(ValueError):
        run_sequence(m, seq, washout=5)


def test_harvest_layout():
    assert feature_dim(2, 3) == 10 and feature_dim(1, 1, 1) == 6
    m = small(3, 2)
    tr = run_sequence(m, np.array([[-2.0, 1.0], [0.5, 0.5], [1.0, 1.0]]), washout=1)
    f = harvest(tr)
    assert f.shape == (2, 10)
    np.testing.assert_array_equal(f[:, :2], tr.inputs[1:])
    np.testing.assert_array_equal(f[:, 2:5], tr.states[1:])
    np.testing.assert_array_equal(f[:, 5:], f[:, :5] ** 2)
    full = harvest(run_sequence(m, np.array([[-2.0, 1.0]])))
    assert full[0, 5] == 4.0


def test_harvest_with_feedback():
    m = _raw(np.zeros((1, 1)), np.eye(1))
    tr = run_sequence(m, [[0.5]])
    f = harvest(tr, feedback=[[3.0]])
    assert f.shape == (1, 6)
    assert f[0, 2] == 3.0 and f[0, 5] == 9.0


def test_trace_csv(tmp_path):
    tr = run_sequence(small(3, 1), np.ones((4, 1)), washout=2)
    tr.to_csv(tmp_path / "t.csv")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0][:3] == ["t", "harvested", "u0"] and len(rows) == 5
    assert [r[1] for r in rows[1:]] == ["0", "0", "1", "1"]
    assert float(rows[3][3]) == tr.states[2, 0]


def test_echo_state_fading_memory():
    m = build_reservoir(ReservoirSpec(n=200, jump=27, input_dim=1))
    rng = np.random.default_rng(0)
    zeros = np.zeros((200, 1))
    a = run_sequence(m, zeros, x0=rng.uniform(-1, 1, 200)).states[-1]
    b = run_sequence(m, zeros, x0=rng.uniform(-1, 1, 200)).states[-1]
    assert np.linalg.norm(a - b) < 1e-6


def _series(L=2, n=5, k=3, seed=0):
    spec = ReservoirSpec(n=n, jump=2, input_dim=k, input_sparsity=1.0, seed=seed)
    return build_stack(DeepConfig.uniform("series", L, spec))


def test_series_one_layer_is_plain_sequence():
    stack = _series(L=1)
    seq = np.random.default_rng(0).normal(size=(4, 3))
    np.testing.assert_array_equal(harvest(run_series(stack, seq)), harvest(run_sequence(stack.layers[0], seq)))


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 3), st.integers(3, 6), st.integers(1, 5), st.integers(0, 1000))
def test_series_matches_loop_oracle(L, n, T, seed):
    stack = _series(L, n, 2, seed)
    seq = np.random.default_rng(seed).normal(size=(T, 2))
    tr = run_series(stack, seq)
    inputs, states = series_loops([(m.W, m.V) for m in stack.layers], stack.inter, seq)
    np.testing.assert_allclose(tr.states, states, atol=1e-12)
    np.testing.assert_allclose(tr.inputs, inputs, atol=1e-12)


def test_series_zero_fixed_point():
    stack = _series(L=3)
    tr = run_series(stack, np.zeros((6, 3)))
    assert not tr.states.any() and not tr.inputs.any()


def test_series_dimension_mismatch():
    stack = _series(L=2)
    with pytest.raises(ConfigError):
        run_series(stack, np.zeros((3, 3)), inter=[np.zeros((4, 2 * (4 + 5)))])


def test_parallel_combiner():
    spec = ReservoirSpec(n=5, jump=2, input_dim=2, input_sparsity=1.0)
    seq = np.random.default_rng(1).normal(size=(4, 2))
    one = build_stack(DeepConfig.uniform("parallel", 1, spec))
    (tr,) = run_parallel(one, seq)
    np.testing.assert_array_equal(mean_combiner([tr.states]), tr.states)
    same = build_stack(DeepConfig("parallel", (spec, spec, spec)))
    traces = run_parallel(same, seq)
    np.testing.assert_allclose(mean_combiner([t.states for t in traces]), traces[0].states, atol=1e-15)
    two = build_stack(DeepConfig.uniform("parallel", 2, spec))
    a, b = (t.states for t in run_parallel(two, seq))
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(mean_combiner([a, b]), (a + b) / 2)
    np.testing.assert_array_equal(mean_combiner([b, a]), mean_combiner([a, b]))


def test_parallel_branches_need_same_input_width():
    with pytest.raises(ConfigError):
        DeepConfig("parallel", (ReservoirSpec(n=5, jump=2, input_dim=2), ReservoirSpec(n=5, jump=2, input_dim=3)))


@pytest.mark.parametrize("mode,L", [("parallel", 1), ("parallel", 3), ("series", 3)])
def test_batch_path_agrees_with_sequence_path(mode, L):
    spec = ReservoirSpec(n=7, jump=3, input_dim=3, input_sparsity=0.6)
    stack = build_stack(DeepConfig.uniform(mode, L, spec))
    u = np.random.default_rng(5).normal(size=(4, 6, 3))
    cache = forward_batch(stack, u)
    sources = readout_sources(stack, cache)
    w = _pool_weights(6, 1, "mean_over_steps")
    pooled = np.stack([pool_source(i, x, w) for i, x in sources])
    np.testing.assert_allclose(pooled_features(stack, u, 1), pooled, atol=1e-12)
    for b in range(4):
        traces = [run_series(stack, u[b], washout=1)] if mode == "series" else run_parallel(stack, u[b], washout=1)
        for r, tr in enumerate(traces):
            np.testing.assert_allclose(pooled[r, b], harvest(tr).mean(axis=0), atol=1e-12)
    last = pooled_features(stack, u, 0, "last_step")
    ref = [run_series(stack, u[0])] if mode == "series" else run_parallel(stack, u[0])
    np.testing.assert_allclose(last[:, 0], [harvest(t)[-1] for t in ref], atol=1e-12)


@pytest.mark.parametrize("mode,L,activation", [("parallel", 2, "tanh"), ("series", 2, "tanh"), ("series", 3, "identity")])
def test_backward_batch_matches_finite_differences(mode, L, activation):
    spec = ReservoirSpec(n=5, jump=2, input_dim=2, input_sparsity=1.0, alpha=0.5)
    stack = build_stack(DeepConfig.uniform(mode, L, spec), activation)
    rng = np.random.default_rng(0)
    u = rng.normal(size=(2, 4, 2))
    probe = rng.normal(size=(stack.readouts, 2, stack.feature_dim))
    w = _pool_weights(4, 0, "mean_over_steps")

    def objective(v):
        c = forward_batch(stack, v)
        return sum(float((pool_source(i, x, w) * probe[r]).sum()) for r, (i, x) in enumerate(readout_sources(stack, c)))

    from vir.reservoir import pool_source_backward

    cache = forward_batch(stack, u)
    grads = [pool_source_backward(i, x, w, probe[r]) for r, (i, x) in enumerate(readout_sources(stack, cache))]
    g = backward_batch(stack, cache, grads)
    num = np.zeros_like(u)
    eps = 1e-6
    for idx in np.ndindex(u.shape):
        up, dn = u.copy(), u.copy()
        up[idx] += eps
        dn[idx] -= eps
        num[idx] = (objective(up) - objective(dn)) / (2 * eps)
    np.testing.assert_allclose(g, num, rtol=1e-6, atol=1e-8)


def test_single_stack_wraps_matrices():
    m = small()
    s = single_stack(m)
    assert s.readouts == 1 and s.layers[0] is m and s.feature_dim == 2 * (3 + 6)


def test_unknown_activation():
    with pytest.raises(ValueError):
        step(small(), np.zeros(6), np.zeros(3), activation="relu")
