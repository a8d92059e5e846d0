"""Baseline GCI and AA fusion of IID cluster densities in Gaussian-mixture form."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import gci_pairs
from .gm import (
    CardinalityDistribution,
    GMIntensity,
    IIDClusterDensity,
    NumericalError,
)


@dataclass(frozen=True)
class FusionWeights:
    weights: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w <= 0) or np.any(w >= 1) and w.size > 1:
            raise ValueError("fusion weights must lie in (0, 1)")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"fusion weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", tuple(w.tolist()))

    @classmethod
    def pairwise(cls, omega: float) -> "FusionWeights":
        return cls((omega, 1.0 - omega))


def _check_omega(omega: float) -> None:
    if not 0.0 < omega < 1.0:
        raise ValueError(f"fusion weight must lie in (0, 1), got {omega}")


def gci_pair_terms(
    a: GMIntensity, b: GMIntensity, ia: np.ndarray, ib: np.ndarray, omega: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fused weight, mean and covariance for component pairs (a[ia[k]], b[ib[k]]).

    P = (w Pa^-1 + (1-w) Pb^-1)^-1 and
    alpha = wa^w wb^(1-w) kappa(w, Pa) kappa(1-w, Pb) N(ma - mb; 0, Pa/w + Pb/(1-w)),
    with kappa(w, P) = det(2 pi P / w)^(1/2) / det(2 pi P)^(w/2).
    """
    logw, means, covs, status = gci_pairs(
        a.weights, a.means, a.covs, b.weights, b.means, b.covs,
        np.ascontiguousarray(ia, dtype=np.int64), np.ascontiguousarray(ib, dtype=np.int64), float(omega),
    )
    if status:
        what = {1: "covariance", 2: "fused information matrix", 3: "agreement covariance"}[status]
        raise NumericalError(f"singular {what} in GCI fusion")
    return np.exp(logw), means, covs


def _all_pairs(a: GMIntensity, b: GMIntensity) -> tuple[np.ndarray, np.ndarray]:
    ia, ib = np.divmod(np.arange(len(a) * len(b)), len(b))
    return ia, ib


def gci_fuse_gm(a: GMIntensity, b: GMIntensity, omega: float) -> tuple[GMIntensity, float]:
    """Weighted geometric average of two mixtures, pairwise over components.

    Returns the unnormalised fused mixture and its mass C = sum of the fused
    weights. The location density is the mixture divided by C.
    """
    _check_omega(omega)
    d = a.dim if len(a) else b.dim
    if len(a) == 0 or len(b) == 0:
        return GMIntensity.empty(d), 0.0
    alpha, means, covs = gci_pair_terms(a, b, *_all_pairs(a, b), omega)
    return GMIntensity(alpha, means, covs), float(alpha.sum())


def gci_cardinality_rows(pa: np.ndarray, pb: np.ndarray, omega: float, C: np.ndarray) -> np.ndarray:
    """Row-wise p(n) proportional to pa(n)^w pb(n)^(1-w) C^n, in log space."""
    pa = np.atleast_2d(pa)
    pb = np.atleast_2d(pb)
    C = np.atleast_1d(np.asarray(C, dtype=float))
    if pa.shape != pb.shape:
        raise ValueError("cardinality supports differ in length")
    if np.any(C < 0):
        raise ValueError("GCI mass must be nonnegative")
    n = np.arange(pa.shape[1])
    with np.errstate(divide="ignore", invalid="ignore"):
        logC = np.log(C)
        logn = np.where(n[None, :] == 0, 0.0, n[None, :] * logC[:, None])
        lp = omega * np.log(pa) + (1.0 - omega) * np.log(pb) + logn
    lp = np.where((pa > 0) & (pb > 0), lp, -np.inf)
    top = lp.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise NumericalError("degenerate GCI cardinality fusion: supports do not overlap")
    p = np.exp(lp - top)
    return p / p.sum(axis=1, keepdims=True)


def gci_fuse_cardinality(
    pa: CardinalityDistribution, pb: CardinalityDistribution, omega: float, mass_C: float
) -> CardinalityDistribution:
    """p(n) proportional to pa(n)^w pb(n)^(1-w) C^n, evaluated in log space."""
    _check_omega(omega)
    return CardinalityDistribution(gci_cardinality_rows(pa.probs, pb.probs, omega, mass_C)[0])


def _group_pairs(ga: np.ndarray, gb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # all (p, q) with the same group, in row-major order
    return np.nonzero(ga[:, None] == gb[None, :])


def gci_fuse_grouped(
    a: GMIntensity,
    b: GMIntensity,
    ga: np.ndarray,
    gb: np.ndarray,
    pa: np.ndarray,
    pb: np.ndarray,
    omega: float,
) -> tuple[GMIntensity, np.ndarray]:
    """GCI of several independent sub-densities at once.

    Component p of ``a`` belongs to group ``ga[p]`` (likewise for ``b``);
    row g of ``pa``/``pb`` is the cardinality law of group g. Every group
    must be populated in both inputs. Returns the fused mixture and the
    fused cardinality rows.
    """
    G = pa.shape[0]
    ia, ib = _group_pairs(ga, gb)
    group = ga[ia]
    alpha, means, covs = gci_pair_terms(a, b, ia, ib, omega)
    C = np.bincount(group, weights=alpha, minlength=G)
    mu_a = np.bincount(ga, weights=a.weights, minlength=G)
    mu_b = np.bincount(gb, weights=b.weights, minlength=G)
    ok = (C > 0) & (mu_a > 0) & (mu_b > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        C_loc = np.where(ok, C / (mu_a**omega * mu_b ** (1.0 - omega)), 0.0)
    cards = gci_cardinality_rows(pa, pb, omega, C_loc)
    mu = cards @ np.arange(cards.shape[1])
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(ok & (mu > 0), mu / C, 0.0)
    w = alpha * scale[group]
    keep = w > 0
    if not keep.all():
        w, means, covs = w[keep], means[keep], covs[keep]
    return GMIntensity._trusted(w, means, covs), cards


def aa_fuse_grouped(
    a: GMIntensity,
    b: GMIntensity,
    pa: np.ndarray,
    pb: np.ndarray,
    omega: float,
) -> tuple[GMIntensity, np.ndarray]:
    """AA fusion of several sub-densities: scaled concatenation and averaged rows."""
    w = np.concatenate([omega * a.weights, (1.0 - omega) * b.weights])
    v = GMIntensity._trusted(w, np.concatenate([a.means, b.means]), np.concatenate([a.covs, b.covs]))
    p = omega * np.atleast_2d(pa) + (1.0 - omega) * np.atleast_2d(pb)
    return v, p / p.sum(axis=1, keepdims=True)


def gci_fuse(a: IIDClusterDensity, b: IIDClusterDensity, omega: float) -> IIDClusterDensity:
    """GCI fusion of two IID cluster densities.

    The location densities enter the geometric average, so the cardinality
    fusion uses the mixture mass divided by mu_a^w mu_b^(1-w). The fused
    intensity is the normalised fused location density times the expected
    fused cardinality.
    """
    _check_omega(omega)
    d = a.intensity.dim if len(a.intensity) else b.intensity.dim
    if len(a.intensity) == 0 or len(b.intensity) == 0:
        p = gci_fuse_cardinality(a.cardinality, b.cardinality, omega, 0.0)
        return IIDClusterDensity(p, GMIntensity.empty(d))
    zeros = np.zeros(len(a.intensity), dtype=np.intp), np.zeros(len(b.intensity), dtype=np.intp)
    v, cards = gci_fuse_grouped(
        a.intensity, b.intensity, *zeros, a.cardinality.probs[None, :], b.cardinality.probs[None, :], omega
    )
    p = CardinalityDistribution(cards[0])
    if len(v) == 0:
        return IIDClusterDensity(p, GMIntensity.empty(d))
    return IIDClusterDensity(p, v)


def aa_fuse(a: IIDClusterDensity, b: IIDClusterDensity, omega: float) -> IIDClusterDensity:
    """Arithmetic average of intensities and of cardinality distributions."""
    _check_omega(omega)
    if a.cardinality.probs.size != b.cardinality.probs.size:
        raise ValueError("cardinality supports differ in length")
    v, p = aa_fuse_grouped(a.intensity, b.intensity, a.cardinality.probs, b.cardinality.probs, omega)
    return IIDClusterDensity(CardinalityDistribution(p[0]), v)


def gci_fuse_phd(a: GMIntensity, b: GMIntensity, omega: float) -> GMIntensity:
    """GCI of Poisson processes: the fused intensity is the unnormalised GA of the PHDs."""
    gm, _ = gci_fuse_gm(a, b, omega)
    return gm


def aa_fuse_phd(a: GMIntensity, b: GMIntensity, omega: float) -> GMIntensity:
    _check_omega(omega)
    return GMIntensity.concat([a.scaled(omega), b.scaled(1.0 - omega)], dim=a.dim)
