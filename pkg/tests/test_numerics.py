import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genbound.errors import InvalidArgument, NumericFailure
from genbound.numerics import (SeededStream, central_diff_gradient, check_dim, check_finite, gaussian_vector,
                               mean_and_stderr, rademacher_vector)


def test_same_seed_same_draws():
    a, b = SeededStream(11), SeededStream(11)
    assert np.array_equal(a.normal(50), b.normal(50))
    assert a.counter == b.counter == 50


def test_child_streams_are_independent_of_parent_position():
    s = SeededStream(5)
    before = s.child("x").normal(4)
    s.normal(100)
    assert np.array_equal(before, s.child("x").normal(4))
    assert not np.array_equal(s.child("x").normal(4), s.child("y").normal(4))


def test_negative_seed_rejected():
    with pytest.raises(InvalidArgument):
        SeededStream(-1)


def test_gaussian_vector_zero_std_still_advances():
    s = SeededStream(1)
    z = gaussian_vector(s, 7, 0.0)
    assert np.all(z == 0) and s.counter == 7


@pytest.mark.parametrize("std", [math.nan, math.inf, -1.0])
def test_gaussian_vector_rejects_bad_std(std):
    with pytest.raises(InvalidArgument):
        gaussian_vector(SeededStream(0), 3, std)


def test_gaussian_vector_moments():
    z = gaussian_vector(SeededStream(2), 200_000, 0.5)
    assert abs(z.mean()) < 0.005
    assert abs(z.std() - 0.5) < 0.005


def test_rademacher_values():
    v = rademacher_vector(SeededStream(3), 1000)
    assert set(np.unique(v)) == {-1.0, 1.0}


@given(st.integers(min_value=1, max_value=40), st.integers(min_value=0, max_value=2**63))
@settings(max_examples=50, deadline=None)
def test_permutation_is_a_permutation(n, seed):
    p = SeededStream(seed).permutation(n)
    assert sorted(p.tolist()) == list(range(n))


def test_permutation_uniform_on_three_elements():
    counts = {}
    s = SeededStream(9)
    for _ in range(6000):
        key = tuple(s.permutation(3))
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 6
    assert all(abs(c - 1000) < 150 for c in counts.values())


def test_central_diff_on_half_norm():
    g = central_diff_gradient(lambda w: 0.5 * float(w @ w), np.array([1.0, 2.0]))
    assert np.allclose(g, [1.0, 2.0], atol=1e-8)


@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.sampled_from([1e-5, 1e-4, 1e-3]))
@settings(max_examples=40, deadline=None)
def test_central_diff_exact_on_quadratics(w, eps):
    Q = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, -0.3], [0.0, -0.3, 3.0]])
    c = np.array([0.1, -0.2, 0.7])
    w = np.array(w)
    g = central_diff_gradient(lambda v: 0.5 * float(v @ Q @ v) + float(c @ v), w, eps)
    assert np.max(np.abs(g - (Q @ w + c))) < 1e-10


def test_central_diff_reports_coordinate():
    f = lambda w: math.inf if w[1] > 0.5 else float(w.sum())
    with pytest.raises(NumericFailure) as info:
        central_diff_gradient(f, np.array([0.0, 0.5]), eps=1e-3)
    assert info.value.coordinate == 1


def test_check_helpers():
    with pytest.raises(InvalidArgument):
        check_dim(np.zeros(3), 4)
    with pytest.raises(NumericFailure) as info:
        check_finite(np.array([0.0, np.nan]))
    assert info.value.coordinate == 1


def test_mean_and_stderr():
    m, se = mean_and_stderr([1.0, 2.0, 3.0, 4.0])
    assert m == 2.5 and abs(se - np.std([1, 2, 3, 4], ddof=1) / 2) < 1e-15
    assert math.isnan(mean_and_stderr([1.0])[1])
