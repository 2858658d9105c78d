import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from mixproj.core import GroupedVector, GroupPartition
from mixproj.norms import INF, dual_exponent, lq_norm
from mixproj.prox import (
    ProxTolerance, project_l1_ball, project_lq_ball, prox_grouped, prox_l1, prox_l2, prox_linf,
    prox_lq, prox_lq_general,
)

vectors = st.lists(st.floats(-100, 100), min_size=1, max_size=10).map(np.array)


def test_closed_form_examples():
    np.testing.assert_array_equal(prox_l1([3.0, -1.0, 0.5], 1.0), [2.0, 0.0, 0.0])
    np.testing.assert_allclose(prox_l2([3.0, 4.0], 2.5), [1.5, 2.0], rtol=1e-15)
    np.testing.assert_array_equal(prox_l2([3.0, 4.0], 5.0), [0.0, 0.0])
    np.testing.assert_array_equal(project_l1_ball([3.0, 1.0], 1.0), [1.0, 0.0])
    np.testing.assert_array_equal(project_l1_ball([2.0, 2.0], 2.0), [1.0, 1.0])
    np.testing.assert_array_equal(project_l1_ball([0.5, -0.25], 1.0), [0.5, -0.25])
    np.testing.assert_array_equal(prox_linf([3.0, 1.0], 1.0), [2.0, 1.0])
    np.testing.assert_array_equal(prox_linf([5.0], 2.0), [3.0])
    np.testing.assert_array_equal(prox_linf([1.0, -1.0], 2.0), [0.0, 0.0])


def test_zero_threshold_is_identity():
    v = np.array([1.0, -2.0, 3.0])
    for q in (1.0, 1.5, 2.0, 3.0, INF):
        np.testing.assert_array_equal(prox_lq(v, 0.0, q), v)


def test_negative_threshold_rejected():
    with pytest.raises(ValueError):
        prox_l1([1.0], -1.0)
    with pytest.raises(ValueError):
        prox_lq([1.0], -0.5, 3.0)


def test_tolerance_validation():
    with pytest.raises(ValueError):
        ProxTolerance(inner_tol=0.0)
    with pytest.raises(ValueError):
        ProxTolerance(outer_tol=0.5)


def test_l1_ball_matches_root_finding_oracle(rng):
    for _ in range(200):
        v = rng.standard_normal(int(rng.integers(1, 30))) * rng.uniform(0.1, 10)
        r = rng.uniform(0.05, 1.0) * np.abs(v).sum()
        np.testing.assert_allclose(project_l1_ball(v, r), oracles.l1_ball(v, r), atol=1e-12)


def test_lq_ball_example_matches_angle_oracle():
    x = project_lq_ball([3.0, 1.0], 1.0, 3.0)
    np.testing.assert_allclose(x, oracles.lq_ball_angle([3.0, 1.0], 1.0, 3.0), atol=1e-8)
    np.testing.assert_allclose(project_lq_ball([1.0, 1.0], 1.0, 2.0), [2 ** -0.5] * 2, rtol=1e-12)


@pytest.mark.parametrize("q", [1.5, 3.0])
def test_lq_ball_matches_closed_form_oracle_on_grid(q):
    for n in range(1, 5):
        for v in itertools.product(range(-2, 3), repeat=n):
            v = np.array(v, dtype=float)
            np.testing.assert_allclose(project_lq_ball(v, 1.0, q), oracles.lq_ball(v, 1.0, q), atol=1e-7)


@pytest.mark.parametrize("q", [1.0001, 1.5, 3.0, 10.0, 1e4])
def test_lq_ball_kkt(rng, q):
    for _ in range(30):
        v = 5 * rng.standard_normal(6)
        r = rng.uniform(0.1, 1.0) * lq_norm(v, q)
        x, lam = project_lq_ball(v, r, q, full_output=True)
        assert lq_norm(x, q) == pytest.approx(r, rel=1e-10)
        assert np.all(np.sign(x) * np.sign(v) >= 0)
        assert np.all(np.abs(x) <= np.abs(v) + 1e-15)
        # stationarity: v - x = lam * q * sign(x) |x|^(q-1)
        if q < 100:
            # coordinates whose exact value underflows carry no stationarity information
            nz = x != 0
            resid = v[nz] - x[nz] - lam * q * np.sign(x[nz]) * np.abs(x[nz]) ** (q - 1)
            assert np.max(np.abs(resid)) <= 1e-8 * np.max(np.abs(v))


def test_lq_ball_rejects_bad_arguments():
    with pytest.raises(ValueError):
        project_lq_ball([1.0], 0.0, 2.0)
    with pytest.raises(ValueError):
        project_lq_ball([1.0], 1.0, 1.0)


def test_general_path_matches_closed_form_at_q2(rng):
    for _ in range(200):
        v = rng.standard_normal(int(rng.integers(1, 12))) * rng.uniform(0.1, 10)
        theta = rng.uniform(0, 1.2) * np.linalg.norm(v)
        np.testing.assert_allclose(prox_lq_general(v, theta, 2.0), prox_l2(v, theta), atol=1e-9)


def test_near_boundary_exponents_approach_closed_forms():
    np.testing.assert_allclose(prox_lq([3.0, -1.0, 0.5], 1.0, 1.0001), [2.0, 0.0, 0.0], atol=1e-3)
    np.testing.assert_allclose(prox_lq([3.0, 1.0], 1.0, 50.0), [2.0, 1.0], atol=1e-2)


def test_gap_to_closed_forms_vanishes_near_boundary(rng):
    # the gap is O(theta) for fixed q and vanishes as q moves to the boundary
    for _ in range(50):
        v = rng.uniform(-1, 1, int(rng.integers(2, 7)))
        theta = rng.uniform(0.05, 1.0) * np.abs(v).sum()
        assert np.abs(prox_lq(v, theta, 1e5) - prox_linf(v, theta)).max() <= 1e-3 * theta
        assert np.abs(prox_lq(v, theta, 1.00001) - prox_l1(v, theta)).max() <= 1e-3 * theta


def test_exponents_snap_symmetrically():
    v = np.array([0.3, -0.8, 0.5])
    np.testing.assert_array_equal(prox_lq(v, 0.2, 1.0000001), prox_l1(v, 0.2))
    np.testing.assert_array_equal(prox_lq(v, 0.2, 2e6), prox_linf(v, 0.2))


@pytest.mark.parametrize("q", [1.5, 3.0])
def test_general_prox_matches_oracle(rng, q):
    for _ in range(100):
        v = rng.standard_normal(int(rng.integers(1, 8)))
        theta = rng.uniform(0, 1.5) * lq_norm(v, dual_exponent(q))
        np.testing.assert_allclose(prox_lq(v, theta, q), oracles.prox_group(v, theta, q), atol=1e-10)


@pytest.mark.parametrize("q", [1.0, 1.5, 2.0, 3.0, INF])
def test_moreau_identity(rng, q):
    qs = dual_exponent(q)
    for _ in range(100):
        v = rng.standard_normal(7) * rng.uniform(0.1, 10)
        theta = rng.uniform(0.01, 1.5) * lq_norm(v, qs)
        p = prox_lq(v, theta, q)
        if qs == INF:
            proj = np.clip(v, -theta, theta)
        elif qs == 1.0:
            proj = project_l1_ball(v, theta)
        elif qs == 2.0:
            proj = v * min(1.0, theta / np.linalg.norm(v))
        else:
            proj = project_lq_ball(v, theta, qs) if lq_norm(v, qs) > theta else v
        assert np.max(np.abs(p + proj - v)) <= 1e-9 * max(1.0, np.abs(v).max())


@pytest.mark.parametrize("q", [1.0, 1.5, 2.0, 3.0, INF])
def test_prox_nonexpansive_and_shrinking(rng, q):
    for _ in range(150):
        a = rng.standard_normal(6)
        b = a + rng.standard_normal(6) * rng.uniform(0.01, 2)
        theta = rng.uniform(0.01, 2.0)
        pa, pb = prox_lq(a, theta, q), prox_lq(b, theta, q)
        assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) * (1 + 1e-10)
        assert lq_norm(pa, q) <= lq_norm(a, q) * (1 + 1e-12)


@pytest.mark.parametrize("q", [1.0, 1.5, 2.0, 3.0, INF])
def test_prox_zero_beyond_dual_norm(rng, q):
    for _ in range(50):
        v = rng.standard_normal(5)
        theta = lq_norm(v, dual_exponent(q)) * rng.uniform(1.0, 3.0)
        np.testing.assert_array_equal(prox_lq(v, theta, q), np.zeros(5))


@settings(max_examples=60, deadline=None)
@given(vectors, st.floats(0.0, 50.0), st.sampled_from([1.0, 1.5, 2.0, 3.0, INF]))
def test_prox_optimality_by_perturbation(v, theta, q):
    # the prox minimises 0.5||x - v||^2 + theta ||x||_q; random nearby points never do better
    p = prox_lq(v, theta, q)

    def obj(x):
        return 0.5 * np.dot(x - v, x - v) + theta * lq_norm(x, q)

    best = obj(p)
    rng = np.random.default_rng(0)
    for _ in range(20):
        z = p + 1e-3 * rng.standard_normal(v.size) * (1 + np.abs(v).max())
        assert obj(z) >= best - 1e-9 * max(1.0, abs(best))


def test_prox_grouped_per_group():
    y = GroupedVector(np.array([3.0, 4.0, 0.5, 0.0]), GroupPartition.from_sizes([2, 2]))
    x = prox_grouped(y, 2.5, 2.0)
    np.testing.assert_allclose(x.data, [1.5, 2.0, 0.0, 0.0], rtol=1e-15)
    assert x.partition == y.partition


def test_extreme_exponents_stay_accurate(rng):
    v = rng.standard_normal(20)
    for q in (1.0001, 1.001, 1e3, 1e5):
        r = 0.3 * lq_norm(v, q)
        x = project_lq_ball(v, r, q)
        assert lq_norm(x, q) == pytest.approx(r, rel=1e-10)
