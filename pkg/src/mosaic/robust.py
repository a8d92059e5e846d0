"""Clustering-based fusion robust to unknown, differing fields of view.

Two densities are fused by
  1. clustering all their Gaussian components with a gated corrected
     Mahalanobis distance (greedy seeded gating, then union-find so that no
     pair across clusters is within the gate),
  2. rebuilding a cardinality law per cluster and node from a
     multi-Bernoulli reading of the component weights,
  3. fusing each cluster that both nodes populate (GCI or AA) and keeping
     single-node clusters as they are,
  4. summing the cluster intensities and convolving their cardinalities.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from scipy.special import gammainc

from ._kernels import gated_distances, greedy_union_labels
from .filters import ReductionConfig, gm_reduce
from .fusion import aa_fuse, aa_fuse_grouped, aa_fuse_phd, gci_fuse, gci_fuse_grouped, gci_fuse_phd, gci_pair_terms
from .gm import (
    N_MAX,
    BernoulliSet,
    CardinalityDistribution,
    GaussianComponent,
    GMIntensity,
    IIDClusterDensity,
    NumericalError,
    convolve_rows,
    gm_evaluate_grid,
    mb_cardinality,
    mb_cardinality_rows,
)

Rule = Literal["gci", "aa"]
Index = tuple  # (node, component position)

DEFAULT_RHO = 20.0


def corrected_mahalanobis(a: GaussianComponent, b: GaussianComponent) -> float:
    """(m_a - m_b)' (P_a + P_b)^-1 (m_a - m_b)."""
    diff = np.asarray(a.mean) - np.asarray(b.mean)
    try:
        L = np.linalg.cholesky(np.asarray(a.cov) + np.asarray(b.cov))
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular summed covariance in corrected Mahalanobis distance") from exc
    y = np.linalg.solve(L, diff)
    return float(y @ y)


def pairwise_distances(means: np.ndarray, covs: np.ndarray, rho: float | None = None) -> np.ndarray:
    """Corrected Mahalanobis distances between all rows.

    With ``rho`` given, pairs that provably exceed the gate
    (|dm|^2 > rho * (tr P_a + tr P_b)) are reported as +inf without a solve.
    """
    K = means.shape[0]
    D = np.zeros((K, K))
    if K < 2:
        return D
    iu, ju = np.triu_indices(K, 1)
    if rho is not None:
        tr = np.trace(covs, axis1=1, axis2=2)
        dm2 = np.sum((means[iu] - means[ju]) ** 2, axis=1)
        near = dm2 <= rho * (tr[iu] + tr[ju])
        D[iu[~near], ju[~near]] = np.inf
        iu, ju = iu[near], ju[near]
    if iu.size:
        diff = means[iu] - means[ju]
        S = covs[iu] + covs[ju]
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular summed covariance in clustering") from exc
        y = np.linalg.solve(L, diff[..., None])[..., 0]
        D[iu, ju] = np.sum(y**2, axis=1)
    return D + D.T


# ---------------------------------------------------------------------------
# clustering


@dataclass(frozen=True)
class ClusterPartition:
    clusters: tuple  # tuple of tuples of (node, position)
    rho: float

    def __len__(self) -> int:
        return len(self.clusters)


def _flat_index(nodes: Sequence[GMIntensity]) -> list[Index]:
    return [(i, p) for i, v in enumerate(nodes) for p in range(len(v))]


def cluster_labels(means: np.ndarray, covs: np.ndarray, rho: float = DEFAULT_RHO) -> np.ndarray:
    """Cluster label of every component; clusters are numbered by their first member.

    Greedy pass: repeatedly take the lowest remaining index as seed and
    collect every remaining component within distance < rho of it. Then any
    two clusters holding a pair at distance <= rho are united, so every
    cross-cluster distance exceeds rho.
    """
    if rho <= 0:
        raise ValueError("gating threshold must be positive")
    K = means.shape[0]
    if K == 0:
        return np.zeros(0, dtype=np.intp)
    D, bad = gated_distances(np.ascontiguousarray(means, dtype=float), np.ascontiguousarray(covs, dtype=float), float(rho))
    if bad >= 0:
        raise NumericalError("singular summed covariance in clustering")
    return greedy_union_labels(D, float(rho)).astype(np.intp)


def cluster_components(nodes: Sequence[GMIntensity], rho: float = DEFAULT_RHO) -> ClusterPartition:
    """Cluster the components of several mixtures (see :func:`cluster_labels`)."""
    if rho <= 0:
        raise ValueError("gating threshold must be positive")
    index = _flat_index(nodes)
    K = len(index)
    if K == 0:
        return ClusterPartition((), rho)
    dim = next(v.dim for v in nodes if len(v))
    means = np.concatenate([v.means for v in nodes if len(v)]).reshape(K, dim)
    covs = np.concatenate([v.covs for v in nodes if len(v)]).reshape(K, dim, dim)
    label = cluster_labels(means, covs, rho)
    clusters = tuple(tuple(index[k] for k in np.flatnonzero(label == g)) for g in range(label.max() + 1))
    return ClusterPartition(clusters, rho)


# ---------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class SubIIDCluster:
    cluster_id: int
    intensities: tuple  # per node GMIntensity (possibly empty)
    cardinalities: tuple  # per node CardinalityDistribution
    nodes: frozenset  # participating nodes: J_g^i > 0


def split_by_clusters(
    nodes: Sequence[GMIntensity], part: ClusterPartition, n_max: int = N_MAX, cardinalized: bool = True
) -> list[SubIIDCluster]:
    """Per cluster and node, collect the node's components and rebuild a cardinality law."""
    out = []
    for g, members in enumerate(part.clusters):
        per_node: list[list[int]] = [[] for _ in nodes]
        for i, p in members:
            if not 0 <= i < len(nodes) or not 0 <= p < len(nodes[i]):
                raise IndexError(f"cluster {g} references missing component ({i}, {p})")
            per_node[i].append(p)
        intens, cards = [], []
        for i, idx in enumerate(per_node):
            if idx:
                v = nodes[i].subset(sorted(idx))
                intens.append(v)
                if cardinalized:
                    cards.append(mb_cardinality(BernoulliSet.from_weights(v.weights), n_max))
                else:
                    cards.append(CardinalityDistribution.poisson(v.mass, n_max))
            else:
                intens.append(GMIntensity.empty(nodes[i].dim))
                cards.append(CardinalityDistribution.delta(0, n_max))
        participating = frozenset(i for i, idx in enumerate(per_node) if idx)
        out.append(SubIIDCluster(g, tuple(intens), tuple(cards), participating))
    return out


# ---------------------------------------------------------------------------
# fusion


def fuse_cluster(sub: SubIIDCluster, rule: Rule, omega: float = 0.5, cardinalized: bool = True) -> IIDClusterDensity:
    """Fuse one cluster: pass a single node's part through, fuse two nodes' parts.

    With ``cardinalized=False`` (PHD filters) only the intensities are
    fused and the cardinality is the Poisson law of the fused mass.
    """
    part = sorted(sub.nodes)
    if len(part) == 0:
        raise ValueError(f"cluster {sub.cluster_id} is empty")
    if len(part) == 1:
        i = part[0]
        return IIDClusterDensity(sub.cardinalities[i], sub.intensities[i])
    if len(part) > 2:
        raise ValueError("fuse_cluster handles pairwise fusion only")
    i, j = part
    if not cardinalized:
        if rule == "gci":
            v = gci_fuse_phd(sub.intensities[i], sub.intensities[j], omega)
        elif rule == "aa":
            v = aa_fuse_phd(sub.intensities[i], sub.intensities[j], omega)
        else:
            raise ValueError(f"unknown fusion rule {rule!r}")
        return IIDClusterDensity(CardinalityDistribution.poisson(v.mass, sub.cardinalities[i].n_max), v)
    a = IIDClusterDensity(sub.cardinalities[i], sub.intensities[i])
    b = IIDClusterDensity(sub.cardinalities[j], sub.intensities[j])
    if rule == "gci":
        return gci_fuse(a, b, omega)
    if rule == "aa":
        return aa_fuse(a, b, omega)
    raise ValueError(f"unknown fusion rule {rule!r}")


def _padded_rows(values: np.ndarray, groups: np.ndarray, G: int) -> np.ndarray:
    """Scatter ``values`` into a zero-padded (G, max group size) array, keeping order."""
    counts = np.bincount(groups, minlength=G)
    out = np.zeros((G, max(int(counts.max(initial=0)), 1)))
    order = np.argsort(groups, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    slot = np.arange(groups.size) - starts[groups[order]]
    out[groups[order], slot] = values[order]
    return out


def robust_fuse(
    a: IIDClusterDensity,
    b: IIDClusterDensity,
    rule: Rule = "gci",
    omega: float = 0.5,
    rho: float = DEFAULT_RHO,
    reduction: ReductionConfig | None = ReductionConfig(),
    cardinalized: bool = True,
) -> IIDClusterDensity:
    """Cluster, split, fuse per cluster, merge; optionally reduce the result.

    Equivalent to :func:`cluster_components`, :func:`split_by_clusters`,
    :func:`fuse_cluster` per cluster and a final sum/convolution, but all
    two-node clusters are fused in one vectorised pass. Clusters populated
    by a single node keep that node's multi-Bernoulli cardinality; since the
    convolution of multi-Bernoulli laws is the law of the union, all of them
    are convolved in one step.
    """
    if rule not in ("gci", "aa"):
        raise ValueError(f"unknown fusion rule {rule!r}")
    if not 0.0 < omega < 1.0:
        raise ValueError(f"fusion weight must lie in (0, 1), got {omega}")
    n_max = a.cardinality.n_max
    va, vb = a.intensity, b.intensity
    dim = va.dim if len(va) else vb.dim
    Ja, Jb = len(va), len(vb)
    if Ja + Jb == 0:
        return IIDClusterDensity.empty(dim, n_max)
    label = cluster_labels(np.concatenate([va.means, vb.means]), np.concatenate([va.covs, vb.covs]), rho)
    G = int(label.max()) + 1
    la, lb = label[:Ja], label[Ja:]
    both = (np.bincount(la, minlength=G) > 0) & (np.bincount(lb, minlength=G) > 0)
    gid = np.cumsum(both) - 1  # index among two-node clusters
    Gf = int(both.sum())
    fa, fb = both[la], both[lb]

    parts, singles = [], []
    if (~fa).any():
        parts.append(va.subset(np.flatnonzero(~fa)))
        singles.append(va.weights[~fa])
    if (~fb).any():
        parts.append(vb.subset(np.flatnonzero(~fb)))
        singles.append(vb.weights[~fb])
    rows = np.zeros((0, n_max + 1))
    if cardinalized:
        # every multi-Bernoulli law needed below, in one batch:
        # Gf rows for a's fused clusters, Gf for b's, then one for all singles
        blocks = []
        if Gf:
            ga, gb = gid[la[fa]], gid[lb[fb]]
            blocks += [_padded_rows(va.weights[fa], ga, Gf), _padded_rows(vb.weights[fb], gb, Gf)]
        if singles:
            blocks.append(np.concatenate(singles)[None, :])
        R = np.zeros((sum(x.shape[0] for x in blocks), max(x.shape[1] for x in blocks)))
        r0 = 0
        for x in blocks:
            R[r0 : r0 + x.shape[0], : x.shape[1]] = x
            r0 += x.shape[0]
        mb = mb_cardinality_rows(R, n_max)
        rows = mb[2 * Gf :]
    if Gf:
        sa, sb = va.subset(np.flatnonzero(fa)), vb.subset(np.flatnonzero(fb))
        ga, gb = gid[la[fa]], gid[lb[fb]]
        if cardinalized:
            pa, pb = mb[:Gf], mb[Gf : 2 * Gf]
            if rule == "gci":
                fused, fused_rows = gci_fuse_grouped(sa, sb, ga, gb, pa, pb, omega)
            else:
                fused, fused_rows = aa_fuse_grouped(sa, sb, pa, pb, omega)
            rows = np.vstack([fused_rows, rows])
        elif rule == "gci":
            ia, ib = np.nonzero(ga[:, None] == gb[None, :])
            w, m, P = gci_pair_terms(sa, sb, ia, ib, omega)
            fused = GMIntensity._trusted(w, m, P)
        else:
            fused = aa_fuse_phd(sa, sb, omega)
        parts.append(fused)

    v = GMIntensity.concat(parts, dim=dim)
    if cardinalized:
        p = CardinalityDistribution._trusted(convolve_rows(rows, n_max))
    if reduction is not None:
        v = gm_reduce(v, reduction.prune_threshold, reduction.merge_threshold, reduction.max_components)
    if not cardinalized:
        p = CardinalityDistribution.poisson(v.mass, n_max)
    return IIDClusterDensity(p, v)


# ---------------------------------------------------------------------------
# approximation error bound


def chi2_cdf(delta: float, dof: int) -> float:
    """CDF of the chi-square law with ``dof`` degrees of freedom."""
    if delta < 0 or dof < 1:
        raise ValueError("chi2_cdf needs delta >= 0 and dof >= 1")
    if np.isinf(delta):
        return 1.0
    return float(gammainc(dof / 2.0, delta / 2.0))


@dataclass(frozen=True)
class BoundEntry:
    node: int
    cluster: int
    bound: float
    l1_error: float | None = None


@dataclass(frozen=True)
class ErrorBoundReport:
    delta: float
    dof: int
    entries: tuple

    def for_node(self, node: int) -> list[BoundEntry]:
        return [e for e in self.entries if e.node == node]


def partition_labels(points: np.ndarray, nodes: Sequence[GMIntensity], part: ClusterPartition) -> np.ndarray:
    """Assign each point to the cluster of its Mahalanobis-nearest component.

    Whenever delta <= rho / 4 this labelling satisfies both ellipsoid
    properties: a point inside any delta-ellipsoid of cluster g is nearest
    to a component whose ellipsoid also contains it, and ellipsoids of
    different clusters are disjoint.
    """
    cluster_of = {}
    for g, members in enumerate(part.clusters):
        for idx in members:
            cluster_of[idx] = g
    best = np.full(points.shape[0], np.inf)
    label = np.full(points.shape[0], -1)
    for i, v in enumerate(nodes):
        for p in range(len(v)):
            diff = points - v.means[p]
            d2 = np.einsum("ki,ij,kj->k", diff, np.linalg.inv(v.covs[p]), diff)
            closer = d2 < best
            best[closer] = d2[closer]
            label[closer] = cluster_of[(i, p)]
    return label


def numerical_l1_errors(
    nodes: Sequence[GMIntensity], part: ClusterPartition, n_grid: int = 400, n_sigma: float = 6.0
) -> np.ndarray:
    """Grid estimate of ||1_{X_g} v^i - v_hat_g^i||_1 for 2-D mixtures; shape (nodes, clusters)."""
    allm = np.concatenate([v.means for v in nodes if len(v)])
    allP = np.concatenate([v.covs for v in nodes if len(v)])
    if allm.shape[1] != 2:
        raise ValueError("grid integration is implemented for 2-D mixtures")
    sig = np.sqrt(np.stack([allP[:, 0, 0], allP[:, 1, 1]], axis=1))
    lo = (allm - n_sigma * sig).min(axis=0)
    hi = (allm + n_sigma * sig).max(axis=0)
    xs = np.linspace(lo[0], hi[0], n_grid)
    ys = np.linspace(lo[1], hi[1], n_grid)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    cell = (xs[1] - xs[0]) * (ys[1] - ys[0])
    label = partition_labels(pts, nodes, part)
    subs = split_by_clusters(nodes, part)
    err = np.zeros((len(nodes), len(part)))
    for i, v in enumerate(nodes):
        if len(v) == 0:
            continue
        full = gm_evaluate_grid(v, pts)
        for g, sub in enumerate(subs):
            vg = np.where(label == g, full, 0.0)
            vhat = gm_evaluate_grid(sub.intensities[i], pts) if len(sub.intensities[i]) else 0.0
            err[i, g] = np.sum(np.abs(vg - vhat)) * cell
    return err


def cluster_error_bound(
    nodes: Sequence[GMIntensity],
    part: ClusterPartition,
    delta: float | None = None,
    numerical: bool = False,
    n_grid: int = 400,
) -> ErrorBoundReport:
    """L1 bound on the per-cluster sub-intensity error: node mass times the chi-square tail beyond delta.

    ``delta`` defaults to rho / 4, the largest value for which ellipsoids of
    different clusters are guaranteed disjoint.
    """
    rho = part.rho
    if delta is None:
        delta = rho / 4.0
    if delta > rho / 4.0:
        raise ValueError(f"delta={delta} violates the ellipsoid-disjointness precondition delta <= rho/4 ({rho / 4.0})")
    dims = [v.dim for v in nodes if len(v)]
    dof = dims[0] if dims else 2
    tail = 1.0 - chi2_cdf(delta, dof)
    errs = numerical_l1_errors(nodes, part, n_grid) if numerical and dims else None
    entries = []
    for i, v in enumerate(nodes):
        bound = v.mass * tail
        for g in range(len(part)):
            entries.append(BoundEntry(i, g, bound, None if errs is None else float(errs[i, g])))
    return ErrorBoundReport(float(delta), dof, tuple(entries))
