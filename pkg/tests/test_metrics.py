import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import gm
from mosaic.gm import CardinalityDistribution, IIDClusterDensity
from mosaic.metrics import OspaParams, aggregate, extract_estimates, mc_standard_error, ospa
from oracles import ospa_bruteforce

points = st.lists(st.tuples(st.floats(-1000, 1000), st.floats(-1000, 1000)), max_size=6).map(
    lambda xs: np.array(xs, float).reshape(-1, 2)
)


def test_ospa_examples():
    e = np.zeros((0, 2))
    assert ospa(e, e) == 0.0
    assert ospa([[1.0, 2.0]], e) == 600.0
    assert ospa([[0.0, 0.0]], [[60.0, 80.0]]) == pytest.approx(100.0)


def test_ospa_cutoff_and_cardinality_penalty():
    assert ospa([[0.0, 0.0]], [[5000.0, 0.0]]) == 600.0
    assert ospa([[0.0, 0.0]], [[0.0, 0.0], [10.0, 0.0]]) == pytest.approx(300.0)
    assert ospa([[0.0, 0.0]], [[3.0, 4.0]], OspaParams(c=100.0, p=2.0)) == pytest.approx(5.0)


def test_ospa_params_validation():
    with pytest.raises(ValueError):
        OspaParams(c=0.0)
    with pytest.raises(ValueError):
        OspaParams(p=0.5)


@settings(max_examples=200, deadline=None)
@given(points, points, st.sampled_from([1.0, 2.0]))
def test_ospa_matches_permutation_search(X, Y, p):
    params = OspaParams(600.0, p)
    assert ospa(X, Y, params) == pytest.approx(ospa_bruteforce(X, Y, 600.0, p), rel=1e-9, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(points, points)
def test_ospa_symmetric_bounded_and_zero_on_diagonal(X, Y):
    assert ospa(X, Y) == pytest.approx(ospa(Y, X), abs=1e-12)
    assert 0.0 <= ospa(X, Y) <= 600.0 + 1e-9
    assert ospa(X, X) == pytest.approx(0.0, abs=1e-9)
    if (len(X) == 0) != (len(Y) == 0):
        assert ospa(X, Y) == 600.0


def test_ospa_triangle_inequality():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        X, Y, Z = (rng.uniform(-800, 800, (rng.integers(0, 5), 2)) for _ in range(3))
        assert ospa(X, Z) <= ospa(X, Y) + ospa(Y, Z) + 1e-9


def test_extract_examples():
    v = gm([0.9, 0.8, 0.1], [[0, 0, 1, 0], [5, 0, 6, 0], [9, 0, 9, 0]], 1.0)
    none = IIDClusterDensity(CardinalityDistribution.delta(0), v)
    assert extract_estimates(none).shape == (0, 2)
    one = IIDClusterDensity(CardinalityDistribution(np.r_[0.1, 0.9, np.zeros(19)]), v.subset([0]))
    np.testing.assert_array_equal(extract_estimates(one), [[0.0, 1.0]])
    two = IIDClusterDensity(CardinalityDistribution(np.r_[0.0, 0.2, 0.8, np.zeros(18)]), v)
    np.testing.assert_array_equal(extract_estimates(two), [[0.0, 1.0], [5.0, 6.0]])


def test_extract_eap_uses_rounded_mass():
    v = gm([0.9, 0.8, 0.1], [[0, 0, 1, 0], [5, 0, 6, 0], [9, 0, 9, 0]], 1.0)
    d = IIDClusterDensity(CardinalityDistribution.delta(0), v)
    assert len(extract_estimates(d, "eap")) == 2
    with pytest.raises(ValueError):
        extract_estimates(d, "median")


def test_extract_never_exceeds_component_count():
    v = gm([0.9], [[0, 0, 1, 0]], 1.0)
    d = IIDClusterDensity(CardinalityDistribution.delta(3), v)
    assert len(extract_estimates(d)) == 1


def test_aggregate_examples():
    one = aggregate(np.array([[1.0, 2.0, 3.0]]), np.array([[1, 1, 2]]))
    np.testing.assert_array_equal(one.mean_ospa, [1.0, 2.0, 3.0])
    const = aggregate(np.full((4, 5), 7.0), np.zeros((4, 5)))
    assert const.time_avg_ospa == 7.0
    two = aggregate(np.array([[100.0], [200.0]]), np.zeros((2, 1)))
    assert two.time_avg_ospa == 150.0
    nodes = aggregate(np.ones((2, 3, 4)), np.full((2, 3, 4), 2.0))
    np.testing.assert_array_equal(nodes.mean_card, [2.0, 2.0, 2.0])


def test_standard_error():
    assert mc_standard_error(np.array([1.0])) == 0.0
    assert mc_standard_error(np.array([1.0, 3.0])) == pytest.approx(1.0)
