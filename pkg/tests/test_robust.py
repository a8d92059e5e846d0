import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import gm, random_gm
from mosaic.filters import gm_reduce
from mosaic.fusion import aa_fuse, gci_fuse
from mosaic.gm import (
    CardinalityDistribution,
    GaussianComponent,
    GMIntensity,
    IIDClusterDensity,
    NumericalError,
    convolve_cardinality,
    expected_cardinality,
    gm_evaluate_grid,
    map_cardinality,
    mb_cardinality,
    poisson_pmf,
)
from mosaic.robust import (
    ClusterPartition,
    chi2_cdf,
    cluster_components,
    cluster_error_bound,
    cluster_labels,
    corrected_mahalanobis,
    fuse_cluster,
    pairwise_distances,
    robust_fuse,
    split_by_clusters,
)
from oracles import connected_components, mahalanobis_matrix


def comp(m, P=None):
    m = np.asarray(m, float)
    return GaussianComponent(1.0, m, np.eye(m.size) if P is None else P)


def density(v):
    """Density whose cardinality is the multi-Bernoulli law of its weights."""
    return IIDClusterDensity(mb_cardinality(np.minimum(v.weights, 1.0)), v)


# ---------------------------------------------------------------- distance


def test_corrected_mahalanobis_examples():
    assert corrected_mahalanobis(comp([1, 2]), comp([1, 2])) == 0.0
    assert corrected_mahalanobis(comp([0, 0]), comp([2, 0])) == pytest.approx(2.0)
    a, b = comp([0, 0], [[2.0, 0.3], [0.3, 1.0]]), comp([1, -3], [[1.0, 0.0], [0.0, 3.0]])
    a4, b4 = comp(a.mean, 4 * a.cov), comp(b.mean, 4 * b.cov)
    assert corrected_mahalanobis(a4, b4) == pytest.approx(corrected_mahalanobis(a, b) / 4)
    assert corrected_mahalanobis(a, b) == pytest.approx(corrected_mahalanobis(b, a), rel=1e-14)


def test_corrected_mahalanobis_singular():
    z = GaussianComponent.__new__(GaussianComponent)
    object.__setattr__(z, "mean", np.zeros(2))
    object.__setattr__(z, "cov", np.zeros((2, 2)))
    with pytest.raises(NumericalError):
        corrected_mahalanobis(z, z)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 8))
def test_gated_distances_are_exact_or_provably_far(seed, K):
    rng = np.random.default_rng(seed)
    v = random_gm(rng, K, 2, spread=6.0)
    D = pairwise_distances(v.means, v.covs, rho=4.0)
    ref = mahalanobis_matrix(v.means, v.covs)
    far = np.isinf(D)
    np.testing.assert_allclose(D[~far], ref[~far], rtol=1e-10, atol=1e-12)
    assert np.all(ref[far] > 4.0)


# ---------------------------------------------------------------- clustering


def _partition(nodes_means, rho, var=1.0):
    nodes = [gm(np.full(len(m), 0.5), m, var) if len(m) else GMIntensity.empty(2) for m in nodes_means]
    return nodes, cluster_components(nodes, rho)


def test_close_pair_clusters_together():
    # d = |dm|^2 / 2 with unit covariances
    _, part = _partition([[[0.0, 0.0]], [[np.sqrt(2.0), 0.0]]], rho=4.0)
    assert part.clusters == (((0, 0), (1, 0)),)


def test_far_pair_stays_apart():
    _, part = _partition([[[0.0, 0.0]], [[np.sqrt(20.0), 0.0]]], rho=4.0)
    assert part.clusters == (((0, 0),), ((1, 0),))


def test_chain_is_closed_transitively():
    # flat order a (0), b (2s), c (s): d(a,c) = d(b,c) = 3, d(a,b) = 12;
    # seed a collects c but not b, which joins only through c
    s = np.sqrt(6.0)
    _, part = _partition([[[0.0, 0.0], [2 * s, 0.0]], [[s, 0.0]]], rho=4.0)
    assert len(part) == 1 and len(part.clusters[0]) == 3


def test_chain_not_reached_by_greedy_pass():
    # seed a collects c (d < rho) but not b; b is within rho of c only
    r2, r6 = np.sqrt(2.0), np.sqrt(6.0)
    far = 4 + 2 * np.sqrt(3.0)
    D = np.array([[0.0, far, 1.0], [far, 0.0, 3.0], [1.0, 3.0, 0.0]])
    means = np.array([[0.0, 0.0], [r2 + r6, 0.0], [r2, 0.0]])
    covs = np.broadcast_to(np.eye(2), (3, 2, 2))
    np.testing.assert_allclose(mahalanobis_matrix(means, covs), D, atol=1e-12)
    np.testing.assert_array_equal(cluster_labels(means, covs, 4.0), [0, 0, 0])


def test_boundary_distance_equal_to_rho():
    # greedy gate is strict, the closure is not: d == rho ends in one cluster
    means = np.array([[0.0, 0.0], [2.0, 0.0]])
    covs = np.broadcast_to(np.eye(2), (2, 2, 2))
    np.testing.assert_array_equal(cluster_labels(means, covs, 2.0), [0, 0])


def test_clustering_rejects_nonpositive_gate():
    with pytest.raises(ValueError):
        cluster_components([gm([0.5], [[0, 0]])], 0.0)


def test_clustering_empty_input():
    assert cluster_components([GMIntensity.empty(2), GMIntensity.empty(2)], 4.0).clusters == ()


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 10), st.integers(0, 10), st.sampled_from([1.0, 4.0, 20.0]))
def test_labels_are_connected_components(seed, Ja, Jb, rho):
    rng = np.random.default_rng(seed)
    nodes = [random_gm(rng, Ja, 2, spread=8.0), random_gm(rng, Jb, 2, spread=8.0)]
    part = cluster_components(nodes, rho)
    if Ja + Jb == 0:
        assert part.clusters == ()
        return
    means = np.concatenate([v.means for v in nodes if len(v)])
    covs = np.concatenate([v.covs for v in nodes if len(v)])
    D = mahalanobis_matrix(means, covs)
    want = connected_components(D, rho)
    np.testing.assert_array_equal(cluster_labels(means, covs, rho), want)
    # every component appears exactly once
    flat = [idx for c in part.clusters for idx in c]
    assert sorted(flat) == [(i, p) for i, v in enumerate(nodes) for p in range(len(v))]


# ---------------------------------------------------------------- splitting


def test_split_single_component():
    v = gm([0.9], [[0, 0]])
    subs = split_by_clusters([v], ClusterPartition((((0, 0),),), 4.0))
    np.testing.assert_allclose(subs[0].cardinalities[0].probs[:2], [0.1, 0.9])


def test_split_participation():
    a, b = gm([0.9], [[0, 0]]), gm([0.8], [[100, 0]])
    part = cluster_components([a, b], 4.0)
    subs = split_by_clusters([a, b], part)
    assert [s.nodes for s in subs] == [frozenset({0}), frozenset({1})]
    assert len(subs[0].intensities[1]) == 0
    np.testing.assert_array_equal(subs[0].cardinalities[1].probs, CardinalityDistribution.delta(0).probs)


def test_split_two_halves():
    v = gm([0.5, 0.5], [[0, 0], [0.1, 0]])
    subs = split_by_clusters([v], cluster_components([v], 4.0))
    np.testing.assert_allclose(subs[0].cardinalities[0].probs[:3], [0.25, 0.5, 0.25])


def test_split_rejects_bad_index():
    with pytest.raises(IndexError):
        split_by_clusters([gm([0.5], [[0, 0]])], ClusterPartition((((0, 3),),), 4.0))


# ---------------------------------------------------------------- per-cluster fusion


def test_fuse_cluster_single_node_passthrough():
    a, b = gm([0.9], [[0, 0]]), gm([0.8], [[100, 0]])
    subs = split_by_clusters([a, b], cluster_components([a, b], 4.0))
    out = fuse_cluster(subs[1], "gci")
    assert out.intensity is subs[1].intensities[1]
    assert out.cardinality is subs[1].cardinalities[1]


def test_fuse_cluster_aa_two_nodes():
    a, b = gm([0.9], [[0, 0]]), gm([0.9], [[0, 0]])
    subs = split_by_clusters([a, b], cluster_components([a, b], 4.0))
    out = fuse_cluster(subs[0], "aa", 0.5)
    np.testing.assert_allclose(out.cardinality.probs[:2], [0.1, 0.9], atol=1e-15)


def test_fuse_cluster_gci_idempotent():
    a = gm([0.7], [[1, 2]], 3.0)
    subs = split_by_clusters([a, a], cluster_components([a, a], 4.0))
    out = fuse_cluster(subs[0], "gci", 0.5)
    np.testing.assert_allclose(out.location_density().means, a.means, atol=1e-12)
    np.testing.assert_allclose(out.location_density().covs, a.covs, atol=1e-12)


def test_fuse_cluster_rejects_empty_and_unknown_rule():
    from mosaic.robust import SubIIDCluster

    with pytest.raises(ValueError):
        fuse_cluster(SubIIDCluster(0, (), (), frozenset()), "gci")
    a = gm([0.7], [[1, 2]])
    subs = split_by_clusters([a, a], cluster_components([a, a], 4.0))
    with pytest.raises(ValueError):
        fuse_cluster(subs[0], "median")


# ---------------------------------------------------------------- robust fusion


def _reference_robust(a, b, rule, omega, rho, cardinalized=True):
    """Cluster, split, fuse each cluster separately, sum and convolve."""
    nodes = [a.intensity, b.intensity]
    part = cluster_components(nodes, rho)
    fused = [fuse_cluster(s, rule, omega, cardinalized) for s in split_by_clusters(nodes, part, cardinalized=cardinalized)]
    v = GMIntensity.concat([f.intensity for f in fused], dim=a.intensity.dim)
    p = convolve_cardinality([f.cardinality for f in fused])
    return IIDClusterDensity(p, v)


def _same_mixture(u, v, rtol=1e-9):
    assert len(u) == len(v)
    ou = np.lexsort(np.column_stack([u.means, u.weights]).T)
    ov = np.lexsort(np.column_stack([v.means, v.weights]).T)
    np.testing.assert_allclose(u.weights[ou], v.weights[ov], rtol=rtol, atol=1e-300)
    np.testing.assert_allclose(u.means[ou], v.means[ov], rtol=rtol, atol=1e-9)
    np.testing.assert_allclose(u.covs[ou], v.covs[ov], rtol=rtol, atol=1e-9)


@settings(max_examples=150, deadline=None)
@given(
    st.integers(0, 10**6),
    st.integers(0, 6),
    st.integers(0, 6),
    st.sampled_from(["gci", "aa"]),
    st.floats(0.2, 0.8),
)
def test_batched_pipeline_equals_per_cluster_reference(seed, Ja, Jb, rule, omega):
    rng = np.random.default_rng(seed)
    a = density(random_gm(rng, Ja, 2, spread=6.0))
    b = density(random_gm(rng, Jb, 2, spread=6.0))
    try:
        ref = _reference_robust(a, b, rule, omega, 4.0)
    except NumericalError:
        with pytest.raises(NumericalError):
            robust_fuse(a, b, rule, omega, 4.0, reduction=None)
        return
    out = robust_fuse(a, b, rule, omega, 4.0, reduction=None)
    np.testing.assert_allclose(out.cardinality.probs, ref.cardinality.probs, atol=1e-12)
    _same_mixture(out.intensity, ref.intensity)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 6), st.integers(1, 6), st.sampled_from(["gci", "aa"]))
def test_poisson_pipeline_equals_reference(seed, Ja, Jb, rule):
    rng = np.random.default_rng(seed)
    a = density(random_gm(rng, Ja, 2, spread=6.0))
    b = density(random_gm(rng, Jb, 2, spread=6.0))
    ref = _reference_robust(a, b, rule, 0.5, 4.0, cardinalized=False)
    out = robust_fuse(a, b, rule, 0.5, 4.0, reduction=None, cardinalized=False)
    _same_mixture(out.intensity, ref.intensity)
    np.testing.assert_allclose(out.cardinality.probs, poisson_pmf(out.intensity.mass), atol=1e-15)


def test_disjoint_exclusive_targets_are_kept():
    a = density(gm([0.9], [[0.0, 0.0]]))
    b = density(gm([0.9], [[500.0, 0.0]]))
    for rule in ("gci", "aa"):
        out = robust_fuse(a, b, rule, 0.5, 20.0)
        assert map_cardinality(out.cardinality) == 2
        np.testing.assert_allclose(out.cardinality.probs[:3], [0.01, 0.18, 0.81], atol=1e-12)
        np.testing.assert_allclose(np.sort(out.intensity.weights), [0.9, 0.9])
    assert map_cardinality(gci_fuse(a, b, 0.5).cardinality) == 0
    assert expected_cardinality(aa_fuse(a, b, 0.5).cardinality) == pytest.approx(0.9)


def test_single_shared_cluster_reduces_to_baseline():
    rng = np.random.default_rng(1)
    a = density(gm([0.8, 0.3], rng.normal(scale=0.3, size=(2, 2))))
    b = density(gm([0.7], rng.normal(scale=0.3, size=(1, 2))))
    assert len(cluster_components([a.intensity, b.intensity], 20.0)) == 1
    for rule, base in (("gci", gci_fuse), ("aa", aa_fuse)):
        out = robust_fuse(a, b, rule, 0.5, 20.0, reduction=None)
        want = base(a, b, 0.5)
        np.testing.assert_array_equal(out.intensity.weights, want.intensity.weights)
        np.testing.assert_array_equal(out.intensity.means, want.intensity.means)
        np.testing.assert_array_equal(out.intensity.covs, want.intensity.covs)
        np.testing.assert_allclose(out.cardinality.probs, want.cardinality.probs, atol=1e-15)


def test_empty_inputs():
    e = IIDClusterDensity.empty(2)
    out = robust_fuse(e, e, "gci")
    assert len(out.intensity) == 0
    np.testing.assert_array_equal(out.cardinality.probs, CardinalityDistribution.delta(0).probs)


def test_robust_fuse_argument_checks():
    e = IIDClusterDensity.empty(2)
    with pytest.raises(ValueError):
        robust_fuse(e, e, "max")
    with pytest.raises(ValueError):
        robust_fuse(e, e, "gci", omega=1.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 6), st.integers(0, 6), st.sampled_from(["gci", "aa"]))
def test_singletons_pass_through_unchanged(seed, Ja, Jb, rule):
    rng = np.random.default_rng(seed)
    va, vb = random_gm(rng, Ja, 2, spread=30.0), random_gm(rng, Jb, 2, spread=30.0)
    nodes = [va, vb]
    part = cluster_components(nodes, 4.0)
    try:
        out = robust_fuse(density(va), density(vb), rule, 0.5, 4.0, reduction=None)
    except NumericalError:
        return
    rows = {tuple(np.r_[w, m, P.ravel()]) for w, m, P in zip(out.intensity.weights, out.intensity.means, out.intensity.covs)}
    for cluster in part.clusters:
        if len(cluster) == 1:
            i, p = cluster[0]
            v = nodes[i]
            assert tuple(np.r_[v.weights[p], v.means[p], v.covs[p].ravel()]) in rows


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 6), st.integers(0, 6), st.sampled_from(["gci", "aa"]))
def test_fused_mean_is_sum_over_clusters(seed, Ja, Jb, rule):
    rng = np.random.default_rng(seed)
    a, b = density(random_gm(rng, Ja, 2, spread=15.0)), density(random_gm(rng, Jb, 2, spread=15.0))
    nodes = [a.intensity, b.intensity]
    try:
        fused = [fuse_cluster(s, rule) for s in split_by_clusters(nodes, cluster_components(nodes, 4.0))]
        out = robust_fuse(a, b, rule, 0.5, 4.0, reduction=None)
    except NumericalError:
        return
    total = sum(expected_cardinality(f.cardinality) for f in fused)
    assert expected_cardinality(out.cardinality) == pytest.approx(total, abs=1e-9)


def test_reduction_applied_after_fusion():
    a = density(gm([0.9, 0.9], [[0.0, 0.0], [0.01, 0.0]]))
    b = density(gm([0.9], [[500.0, 0.0]]))
    out = robust_fuse(a, b, "gci", 0.5, 1e-6)
    assert len(out.intensity) == 2  # the two near-identical a components merged
    assert out.intensity.mass == pytest.approx(2.7)


# ---------------------------------------------------------------- error bound


def test_chi2_cdf_examples():
    assert chi2_cdf(0.0, 2) == 0.0
    assert chi2_cdf(2.0, 2) == pytest.approx(1 - np.exp(-1), abs=1e-12)
    assert chi2_cdf(np.inf, 4) == 1.0
    assert chi2_cdf(1e4, 4) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        chi2_cdf(-1.0, 2)


def test_chi2_cdf_matches_scipy():
    from scipy.stats import chi2

    for d in (1, 2, 3, 4, 7):
        for x in (0.1, 1.0, 5.0, 20.0):
            assert chi2_cdf(x, d) == pytest.approx(chi2.cdf(x, d), abs=1e-12)


def test_bound_examples():
    v = gm([1.0], [[0.0, 0.0]])
    part = cluster_components([v], 8.0)
    rep = cluster_error_bound([v], part, delta=2.0)
    assert rep.entries[0].bound == pytest.approx(np.exp(-1), abs=1e-12)
    assert rep.dof == 2
    big = cluster_components([v], 1e6)
    assert cluster_error_bound([v], big).entries[0].bound < 1e-12
    e = GMIntensity.empty(2)
    assert all(x.bound == 0.0 for x in cluster_error_bound([e, v], part).for_node(0))


def test_bound_rejects_delta_above_quarter_gate():
    v = gm([1.0], [[0.0, 0.0]])
    with pytest.raises(ValueError, match="rho/4"):
        cluster_error_bound([v], cluster_components([v], 8.0), delta=2.5)


def _ball(rng, n, d):
    u = rng.normal(size=(n, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return u * rng.uniform(size=(n, 1)) ** (1.0 / d)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([4.0, 20.0]))
def test_cross_cluster_ellipsoids_are_disjoint(seed, rho):
    rng = np.random.default_rng(seed)
    nodes = [random_gm(rng, 4, 2, spread=8.0), random_gm(rng, 4, 2, spread=8.0)]
    part = cluster_components(nodes, rho)
    delta = rho / 4
    where = {idx: g for g, c in enumerate(part.clusters) for idx in c}
    items = [(i, p) for i, v in enumerate(nodes) for p in range(len(v))]
    for x in items:
        for y in items:
            if where[x] == where[y]:
                continue
            (i, p), (j, q) = x, y
            mp, Pp = nodes[i].means[p], nodes[i].covs[p]
            mq, Pq = nodes[j].means[q], nodes[j].covs[q]
            pts = mp + np.sqrt(delta) * _ball(rng, 500, 2) @ np.linalg.cholesky(Pp).T
            diff = pts - mq
            assert np.all(np.einsum("ki,ij,kj->k", diff, np.linalg.inv(Pq), diff) > delta)


def test_numerical_error_within_bound():
    rng = np.random.default_rng(4)
    nodes = [random_gm(rng, 3, 2, spread=10.0), random_gm(rng, 3, 2, spread=10.0)]
    part = cluster_components(nodes, 20.0)
    rep = cluster_error_bound(nodes, part, numerical=True, n_grid=300)
    for e in rep.entries:
        assert e.l1_error <= e.bound + 1e-3
        assert 0.0 <= e.bound <= nodes[e.node].mass


def test_numerical_error_needs_planar_mixtures():
    from mosaic.robust import numerical_l1_errors

    v = random_gm(np.random.default_rng(0), 2, 4)
    with pytest.raises(ValueError):
        numerical_l1_errors([v], cluster_components([v], 20.0))


def test_grid_error_of_single_cluster_is_zero():
    from mosaic.robust import numerical_l1_errors

    v = gm([0.6, 0.4], [[0.0, 0.0], [0.5, 0.0]])
    err = numerical_l1_errors([v], cluster_components([v], 20.0), n_grid=200)
    assert err[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert gm_evaluate_grid(v, np.zeros((1, 2)))[0] > 0
    assert gm_reduce(v, 0.0, 0.0, 10).mass == pytest.approx(1.0)


def test_faint_copy_halves_the_existence():
    # a confident local component meets a faint copy fed back by a neighbour
    # that cannot see the target; in one cluster both rules pull the
    # existence to about one half, while a distant copy leaves it untouched
    a = density(gm([0.9], [[0.0, 0.0]], 25.0))
    b = density(gm([0.1], [[1.0, 0.0]], 25.0))
    gci = robust_fuse(a, b, "gci", 0.5, 20.0, reduction=None)
    aa = robust_fuse(a, b, "aa", 0.5, 20.0, reduction=None)
    assert expected_cardinality(gci.cardinality) == pytest.approx(0.5, abs=0.01)
    assert expected_cardinality(aa.cardinality) == pytest.approx(0.5, abs=1e-12)
    far = density(gm([0.1], [[500.0, 0.0]], 25.0))
    alone = robust_fuse(a, far, "gci", 0.5, 20.0, reduction=None)
    assert expected_cardinality(alone.cardinality) == pytest.approx(1.0, abs=1e-12)
