import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlah.rlcore import (
    Trajectory,
    advantage_coordinate,
    discounted_return,
    dump_csv,
    fold_segments,
    gae,
    gae_discounted,
    normalize,
    td_residuals,
)
from oracles import gae_double_sum, lambda_one_advantage


def _random_instance(rng, T, p_done=0.1):
    return rng.normal(size=T), rng.normal(size=T + 1), rng.random(T) < p_done


def test_discounted_return_examples():
    assert discounted_return([0, 0, 0], 0.9) == 0.0
    assert discounted_return([], 0.9) == 0.0
    assert discounted_return([1, 1, 1], 0.5) == 1.75
    assert discounted_return([1] * 1000, 0.99) == pytest.approx((1 - 0.99 ** 1000) / 0.01, rel=1e-12)
    assert discounted_return([1] * 1000, 0.99) == pytest.approx(99.9957, abs=1e-4)


def test_gae_hand_example():
    np.testing.assert_allclose(gae([1, 1], [0, 0, 0], [False, False], 1.0, 1.0), [2, 1])


def test_gae_lambda_zero_is_td_residual():
    rng = np.random.default_rng(0)
    r, v, d = _random_instance(rng, 40)
    assert np.array_equal(gae(r, v, d, 0.97, 0.0), td_residuals(r, v, d, 0.97))


def test_gae_matches_double_sum():
    rng = np.random.default_rng(1)
    for _ in range(50):
        r, v, d = _random_instance(rng, 50)
        np.testing.assert_allclose(gae(r, v, d, 0.99, 0.95), gae_double_sum(r, v, d, 0.99, 0.95),
                                   rtol=0, atol=1e-10)


def test_gae_lambda_one_is_return_minus_baseline():
    rng = np.random.default_rng(2)
    for _ in range(20):
        r, v, d = _random_instance(rng, 30)
        np.testing.assert_allclose(gae(r, v, d, 0.95, 1.0), lambda_one_advantage(r, v, d, 0.95),
                                   rtol=0, atol=1e-8)


@settings(max_examples=50)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=20), st.data())
def test_gae_linear_in_rewards(r1, data):
    r2 = data.draw(st.lists(st.floats(-5, 5), min_size=len(r1), max_size=len(r1)))
    z = np.zeros(len(r1) + 1)
    d = np.zeros(len(r1), dtype=bool)
    lhs = gae(np.add(r1, r2), z, d, 0.9, 0.8)
    np.testing.assert_allclose(lhs, gae(r1, z, d, 0.9, 0.8) + gae(r2, z, d, 0.9, 0.8), atol=1e-9)


def test_gae_length_mismatch():
    with pytest.raises(ValueError):
        gae([1, 2], [0, 0], [False, False], 0.9, 0.9)


def test_gae_cut_keeps_bootstrap():
    r = np.array([1.0, 1.0, 1.0])
    v = np.array([0.0, 5.0, 0.0, 0.0])
    cut = np.array([True, False, False])
    a = gae(r, v, np.zeros(3, bool), 0.9, 0.9, cuts=cut)
    assert a[0] == pytest.approx(1.0 + 0.9 * 5.0)


def test_folded_gae_reduces_to_plain_when_contiguous():
    rng = np.random.default_rng(3)
    r, v, d = _random_instance(rng, 60)
    steps = np.arange(60)
    fr, disc, fd, nxt = fold_segments(steps, r, d, 0.99, 60)
    np.testing.assert_allclose(gae_discounted(fr, v[:-1], v[nxt], disc, fd, 0.95),
                               gae(r, v, d, 0.99, 0.95), atol=1e-12)


def test_fold_segments_hand_example():
    # own steps 0 and 3; steps 1, 2 belong to the other controller
    r = np.array([1.0, 2.0, 4.0, 8.0])
    d = np.zeros(4, dtype=bool)
    fr, disc, fd, nxt = fold_segments(np.array([0, 3]), r, d, 0.5, 4)
    np.testing.assert_allclose(fr, [1 + 0.5 * 2 + 0.25 * 4, 8.0])
    np.testing.assert_allclose(disc, [0.125, 0.5])
    assert nxt.tolist() == [3, 4] and not fd.any()
    d[1] = True
    fr, disc, fd, nxt = fold_segments(np.array([0, 3]), r, d, 0.5, 4)
    assert fd.tolist() == [True, False] and fr[0] == 2.0


def test_advantage_coordinate_examples():
    c = advantage_coordinate([2.0], [1.0, 1.0], [1.0, 1.0], [False], 0.99, 0.95)
    assert c.a_nom == pytest.approx(1.99, abs=1e-15) and c.a_nom == c.a_adv

    rng = np.random.default_rng(4)
    r = rng.normal(size=5)
    vn, va = rng.normal(size=6), rng.normal(size=6)
    d = np.zeros(5, dtype=bool)
    c = advantage_coordinate(r, vn, va, d, 0.99, 0.9)
    assert c.a_nom == pytest.approx(gae_double_sum(r, vn, d, 0.99, 0.9)[0], abs=1e-10)
    assert c.a_adv == pytest.approx(gae_double_sum(r, va, d, 0.99, 0.9)[0], abs=1e-10)
    with pytest.raises(ValueError):
        advantage_coordinate([], [0.0], [0.0], [], 0.99, 0.9)


def test_normalize():
    a = normalize(np.array([1.0, 2.0, 3.0]))
    assert abs(a.mean()) < 1e-12 and abs(a.std() - 1) < 1e-6
    assert normalize(np.array([4.0])).tolist() == [4.0]


def _traj(T=6):
    rng = np.random.default_rng(0)
    ctrl = np.array([0, 0, 1, 1, 0, 1])[:T]
    z = np.zeros(T)
    return Trajectory(rng.normal(size=(T, 2)), rng.normal(size=(T, 2)), rng.normal(size=(T, 1)),
                      np.ones(T), z, z, z, np.array([0, 0, 0, 1, 0, 0], bool)[:T],
                      ctrl.astype(bool), ctrl, np.zeros((T, 2)), ctrl, z, np.ones(T, bool))


def test_trajectory_partition_and_episodes():
    t = _traj()
    assert sorted(np.concatenate([t.indices_for(0), t.indices_for(1)]).tolist()) == list(range(6))
    assert t.controller_switches().tolist() == [False, True, False, True, True, False]
    assert t.episode_returns() == [4.0]
    with pytest.raises(ValueError):
        Trajectory(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 1)), np.ones(3), *([np.zeros(2)] * 10))


def test_dump_csv_round_trip(tmp_path):
    t = _traj()
    path = tmp_path / "traj.csv"
    dump_csv(t, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "s0", "s1", "a0", "r", "logp", "v_nom", "v_adv", "done",
                       "attack_flag", "controller"]
    assert len(rows) == 7
    assert float(rows[3][1]) == t.obs[2, 0]
    assert [int(r[-1]) for r in rows[1:]] == t.controllers.tolist()
