import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mlah.approximator import (
    ContractError,
    OptState,
    ParamSet,
    adam_step,
    forward,
    grad,
    init_params,
    load_params,
    sample_categorical,
    sample_gaussian,
    save_params,
    softmax,
    zero_params,
)


def scalar_forward(params, x):
    """Straight-line re-implementation with Python floats."""
    h = [float(v) for v in x]
    wo = bo = 0
    n_layers = len(params.layer_shapes)
    for k, (i, o) in enumerate(params.layer_shapes):
        out = []
        for j in range(o):
            s = float(params.biases[bo + j])
            for r in range(i):
                s += h[r] * float(params.weights[wo + r * o + j])
            out.append(math.tanh(s) if k < n_layers - 1 else s)
        wo += i * o
        bo += o
        h = out
    return np.array(h)


def test_zero_network_outputs_zero():
    p = zero_params([(3, 5), (5, 2)], "gaussian")
    assert np.all(forward(p, [1.0, -2.0, 3.0]) == 0.0)


def test_single_linear_layer():
    p = ParamSet([(1, 1)], [2.0], [1.0], "scalar")
    assert forward(p, [3.0]).tolist() == [7.0]


def test_forward_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    p = init_params(4, 3, "categorical", rng, hidden=(5, 6))
    for _ in range(5):
        x = rng.normal(size=4)
        np.testing.assert_allclose(forward(p, x), scalar_forward(p, x), rtol=0, atol=1e-12)


def test_forward_dimension_mismatch():
    p = zero_params([(3, 2)], "gaussian")
    with pytest.raises(ContractError):
        forward(p, [1.0, 2.0])


def test_paramset_invariants():
    with pytest.raises(ContractError):
        ParamSet([(2, 2)], np.zeros(3), np.zeros(2), "gaussian", np.zeros(2))
    with pytest.raises(ContractError):
        ParamSet([(2, 1)], np.zeros(2), np.zeros(1), "categorical")
    with pytest.raises(FloatingPointError):
        ParamSet([(1, 1)], [np.inf], [0.0], "scalar")


def test_gaussian_degenerate_and_density():
    p = zero_params([(2, 1)], "gaussian")
    p = ParamSet(p.layer_shapes, [0.5, -1.0], [0.25], "gaussian", [-20.0])
    x = np.array([1.0, 2.0])
    a, _ = sample_gaussian(p, x, np.random.default_rng(1))
    assert abs(a[0] - forward(p, x)[0]) < 1e-8

    q = zero_params([(3, 2)], "gaussian")
    _, lp = sample_gaussian(q, np.zeros(3), None, deterministic=True)
    assert lp == pytest.approx(-0.5 * math.log(2 * math.pi) * 2, abs=1e-15)


def test_gaussian_sampling_deterministic_under_seed():
    p = init_params(4, 2, "gaussian", np.random.default_rng(3))
    x = np.ones(4)
    a1 = sample_gaussian(p, x, np.random.default_rng(9))
    a2 = sample_gaussian(p, x, np.random.default_rng(9))
    assert np.array_equal(a1[0], a2[0]) and a1[1] == a2[1]


def test_categorical_examples():
    tie = ParamSet([(1, 2)], [0.0, 0.0], [0.0, 0.0], "categorical")
    assert sample_categorical(tie, [1.0], None, True)[0] == 0
    p = ParamSet([(1, 2)], [0.0, 0.0], [0.0, 10.0], "categorical")
    idx, lp = sample_categorical(p, [1.0], None, True)
    assert idx == 1
    assert lp == pytest.approx(math.log(1.0 / (1.0 + math.exp(-10.0))), abs=1e-12)


def test_categorical_frequencies():
    p = ParamSet([(1, 2)], [0.0, 0.0], [math.log(3.0), 0.0], "categorical")
    rng = np.random.default_rng(0)
    draws = [sample_categorical(p, [1.0], rng)[0] for _ in range(100_000)]
    assert abs(np.mean(np.array(draws) == 0) - 0.75) < 0.01


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=6))
def test_softmax_sums_to_one(logits):
    assert abs(softmax(np.array(logits)).sum() - 1.0) < 1e-12


def _half_sq(out, p):
    return 0.5 * float(np.sum(out * out)), out, None


def test_constant_loss_zero_gradient():
    p = init_params(3, 2, "categorical", np.random.default_rng(0))
    _, g = grad(p, np.ones((4, 3)), lambda out, q: (1.0, np.zeros_like(out), None))
    assert np.all(g == 0.0)


def test_linear_net_outer_product_gradient():
    rng = np.random.default_rng(2)
    W = rng.normal(size=(3, 2))
    b = rng.normal(size=2)
    p = ParamSet([(3, 2)], W.reshape(-1), b, "categorical")
    x = rng.normal(size=(5, 3))
    _, g = grad(p, x, _half_sq)
    y = x @ W + b
    np.testing.assert_allclose(g[:6], (x.T @ y).reshape(-1), atol=1e-12)
    np.testing.assert_allclose(g[6:], y.sum(axis=0), atol=1e-12)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    for _ in range(5):
        p = init_params(3, 2, "gaussian", rng, hidden=(4, 4))
        x = rng.normal(size=(6, 3))
        target = rng.normal(size=(6, 2))

        def loss_fn(out, q):
            d = out - target
            s = np.exp(q.log_std)
            return (0.5 * float(np.sum(d * d)) + float(np.sum(s * s)), d, 2 * s * s)

        _, g = grad(p, x, loss_fn)
        flat = p.flat()
        h = 1e-5
        for k in range(flat.size):
            e = np.zeros_like(flat)
            e[k] = h
            lp, _ = grad(p.with_flat(flat + e), x, loss_fn)
            lm, _ = grad(p.with_flat(flat - e), x, loss_fn)
            fd = (lp - lm) / (2 * h)
            assert abs(fd - g[k]) <= 1e-4 * max(1.0, abs(fd))


def test_nonfinite_loss_raises():
    p = zero_params([(1, 1)], "scalar")
    with pytest.raises(FloatingPointError):
        grad(p, [1.0], lambda out, q: (float("nan"), out, None))


def test_adam_zero_gradient_and_first_step():
    p = init_params(2, 1, "scalar", np.random.default_rng(0), hidden=(3,))
    opt = OptState.for_params(p, 0.1)
    opt.first_moment[:] = 1.0
    opt.second_moment[:] = 1.0
    _, o2 = adam_step(p, np.zeros(p.size), opt)
    assert np.allclose(o2.first_moment, 0.9) and np.allclose(o2.second_moment, 0.999)
    assert o2.step_count == 1

    fresh = OptState.for_params(p, 0.1)
    p3, _ = adam_step(p, np.ones(p.size), fresh)
    np.testing.assert_allclose(p.flat() - p3.flat(), 0.1, rtol=1e-6)


def test_adam_zero_gradient_from_fresh_state_leaves_params():
    p = init_params(2, 1, "scalar", np.random.default_rng(0), hidden=(3,))
    p2, _ = adam_step(p, np.zeros(p.size), OptState.for_params(p))
    assert np.array_equal(p2.flat(), p.flat())


def test_adam_matches_scalar_reference():
    p = ParamSet([(1, 1)], [0.3], [-0.2], "scalar")
    g = np.array([0.7, -1.3])
    opt = OptState.for_params(p, 0.01)
    for _ in range(2):
        p, opt = adam_step(p, g, opt)
    ref = []
    for x0, gi in zip([0.3, -0.2], g):
        m = v = 0.0
        x = x0
        for t in (1, 2):
            m = 0.9 * m + 0.1 * gi
            v = 0.999 * v + 0.001 * gi * gi
            x -= 0.01 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        ref.append(x)
    np.testing.assert_allclose(p.flat(), ref, rtol=0, atol=1e-12)


def test_adam_deterministic_trajectory():
    def run():
        rng = np.random.default_rng(11)
        p = init_params(3, 1, "scalar", rng, hidden=(8,))
        opt = OptState.for_params(p)
        x = rng.normal(size=(10, 3))
        for _ in range(10):
            _, g = grad(p, x, _half_sq)
            p, opt = adam_step(p, g, opt)
        return p.flat()

    assert np.array_equal(run(), run())


def test_checkpoint_round_trip(tmp_path):
    p = init_params(4, 2, "gaussian", np.random.default_rng(5), log_std_init=-0.3)
    path = tmp_path / "p.npz"
    save_params(path, p, seed=17)
    q, seed = load_params(path)
    assert seed == 17
    assert q.layer_shapes == p.layer_shapes and q.head_kind == p.head_kind
    assert np.array_equal(q.flat(), p.flat())
