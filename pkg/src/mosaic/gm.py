"""Gaussian-mixture intensities and cardinality algebra.

Mixtures are stored as stacked arrays (weights, means, covariances) so that
filtering and fusion can be vectorised; :class:`GaussianComponent` is the
per-component view used at API boundaries.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln

from ._kernels import convolve_truncated, mb_rows

N_MAX = 20
EXISTENCE_CLAMP = 1e-6

_SYM_TOL = 1e-9


class NumericalError(ArithmeticError):
    """Raised when a covariance is singular or a fusion degenerates."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _check_spd(cov: np.ndarray, what: str = "covariance") -> None:
    asym = np.max(np.abs(cov - cov.T))
    if asym > _SYM_TOL * max(1.0, np.max(np.abs(cov))):
        raise ValueError(f"{what} is not symmetric (max asymmetry {asym:.3g})")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"{what} is not positive definite") from exc


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float).reshape(mean.size, mean.size)
        if not self.weight >= 0:
            raise ValueError(f"component weight must be nonnegative, got {self.weight}")
        _check_spd(cov)
        object.__setattr__(self, "weight", float(self.weight))
        object.__setattr__(self, "mean", _freeze(mean.copy()))
        object.__setattr__(self, "cov", _freeze(cov.copy()))


@dataclass(frozen=True, eq=False)
class GMIntensity:
    """Weighted Gaussian mixture representing an intensity (PHD) function.

    ``weights`` has shape (J,), ``means`` (J, d) and ``covs`` (J, d, d).
    The empty mixture is the zero intensity.
    """

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        J = w.size
        m = np.asarray(self.means, dtype=float)
        if J == 0:
            d = m.shape[-1] if m.ndim >= 2 else 0
            m = m.reshape(0, d)
        else:
            m = m.reshape(J, -1)
        d = m.shape[1]
        P = np.asarray(self.covs, dtype=float).reshape(J, d, d)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("mixture weights must be finite and nonnegative")
        object.__setattr__(self, "weights", _freeze(w))
        object.__setattr__(self, "means", _freeze(m))
        object.__setattr__(self, "covs", _freeze(P))

    @classmethod
    def _trusted(cls, weights: np.ndarray, means: np.ndarray, covs: np.ndarray) -> "GMIntensity":
        # internal fast path: shapes and signs are guaranteed by the caller
        obj = object.__new__(cls)
        object.__setattr__(obj, "weights", _freeze(weights))
        object.__setattr__(obj, "means", _freeze(means))
        object.__setattr__(obj, "covs", _freeze(covs))
        return obj

    @classmethod
    def empty(cls, dim: int = 4) -> "GMIntensity":
        return cls(np.zeros(0), np.zeros((0, dim)), np.zeros((0, dim, dim)))

    @classmethod
    def from_components(cls, components: Iterable[GaussianComponent], dim: int | None = None) -> "GMIntensity":
        comps = list(components)
        if not comps:
            return cls.empty(dim or 4)
        return cls(
            np.array([c.weight for c in comps]),
            np.stack([c.mean for c in comps]),
            np.stack([c.cov for c in comps]),
        )

    @classmethod
    def concat(cls, parts: Sequence["GMIntensity"], dim: int | None = None) -> "GMIntensity":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty(dim or 4)
        if len(parts) == 1:
            return parts[0]
        return cls._trusted(
            np.concatenate([p.weights for p in parts]),
            np.concatenate([p.means for p in parts]),
            np.concatenate([p.covs for p in parts]),
        )

    def __len__(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def mass(self) -> float:
        """Integral of the intensity, i.e. the expected number of targets."""
        return float(self.weights.sum())

    @property
    def components(self) -> list[GaussianComponent]:
        return [GaussianComponent(w, m, P) for w, m, P in zip(self.weights, self.means, self.covs)]

    def subset(self, idx) -> "GMIntensity":
        idx = np.asarray(idx, dtype=int).reshape(-1)
        return GMIntensity._trusted(self.weights[idx], self.means[idx], self.covs[idx])

    def scaled(self, factor: float) -> "GMIntensity":
        return GMIntensity(self.weights * factor, self.means, self.covs)

    def with_weights(self, weights: np.ndarray) -> "GMIntensity":
        return GMIntensity(weights, self.means, self.covs)


@dataclass(frozen=True, eq=False)
class CardinalityDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float).reshape(-1)
        if p.size == 0:
            raise ValueError("cardinality distribution needs at least one entry")
        if np.any(p < -1e-15) or np.any(p > 1 + 1e-12):
            raise ValueError("cardinality probabilities must lie in [0, 1]")
        s = p.sum()
        if abs(s - 1.0) > 1e-9:
            raise ValueError(f"cardinality distribution sums to {s!r}, not 1")
        object.__setattr__(self, "probs", _freeze(np.clip(p, 0.0, 1.0)))

    @classmethod
    def _trusted(cls, probs: np.ndarray) -> "CardinalityDistribution":
        obj = object.__new__(cls)
        object.__setattr__(obj, "probs", _freeze(probs))
        return obj

    @classmethod
    def delta(cls, n: int, n_max: int = N_MAX) -> "CardinalityDistribution":
        p = np.zeros(n_max + 1)
        p[n] = 1.0
        return cls(p)

    @classmethod
    def poisson(cls, mean: float, n_max: int = N_MAX) -> "CardinalityDistribution":
        return cls(poisson_pmf(mean, n_max))

    @property
    def n_max(self) -> int:
        return self.probs.size - 1

    def __len__(self) -> int:
        return self.probs.size


@dataclass(frozen=True, eq=False)
class IIDClusterDensity:
    """CPHD posterior: cardinality distribution plus intensity."""

    cardinality: CardinalityDistribution
    intensity: GMIntensity

    @classmethod
    def empty(cls, dim: int = 4, n_max: int = N_MAX) -> "IIDClusterDensity":
        return cls(CardinalityDistribution.delta(0, n_max), GMIntensity.empty(dim))

    @property
    def mu(self) -> float:
        return self.intensity.mass

    def location_density(self) -> GMIntensity:
        mu = self.mu
        if mu <= 0:
            raise ValueError("location density undefined for a zero intensity")
        return self.intensity.scaled(1.0 / mu)


@dataclass(frozen=True)
class BernoulliSet:
    existence_probs: tuple = field(default=())

    def __post_init__(self):
        r = np.asarray(self.existence_probs, dtype=float).reshape(-1)
        if np.any(r < 0) or np.any(r > 1) or not np.all(np.isfinite(r)):
            raise ValueError("existence probabilities must lie in [0, 1]")
        object.__setattr__(self, "existence_probs", tuple(r.tolist()))

    @classmethod
    def from_weights(cls, weights) -> "BernoulliSet":
        """Treat mixture weights as existence probabilities, clamping to (0, 1)."""
        w = np.asarray(weights, dtype=float).reshape(-1)
        return cls(tuple(np.minimum(w, 1.0).tolist()))


# ---------------------------------------------------------------------------
# cardinality algebra


def esf_all(values, max_degree: int | None = None) -> np.ndarray:
    """Elementary symmetric functions of every degree 0..m (or 0..max_degree).

    Uses the recurrence e_n(b_1..b_k) = e_n(b_1..b_{k-1}) + b_k e_{n-1}(b_1..b_{k-1}).
    """
    b = np.asarray(values, dtype=float).reshape(-1)
    top = b.size if max_degree is None else min(max_degree, b.size)
    e = np.zeros(top + 1)
    e[0] = 1.0
    for k, bk in enumerate(b):
        hi = min(k + 1, top)
        e[1 : hi + 1] += bk * e[0:hi]
    if max_degree is not None and max_degree > top:
        e = np.concatenate([e, np.zeros(max_degree - top)])
    return e


def esf(values, degree: int) -> float:
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    b = np.asarray(values, dtype=float).reshape(-1)
    if degree == 0:
        return 1.0
    if degree > b.size:
        return 0.0
    return float(esf_all(b, degree)[degree])


def esf_leave_one_out(values) -> np.ndarray:
    """Row j holds esf_all of ``values`` with entry j removed (length m)."""
    b = np.asarray(values, dtype=float).reshape(-1)
    m = b.size
    E = np.zeros((m, m))
    if m == 0:
        return E.reshape(0, 0)
    E[:, 0] = 1.0
    eye = np.eye(m, dtype=bool)
    for k in range(m):
        bk = np.where(eye[:, k], 0.0, b[k])
        E[:, 1:] += bk[:, None] * E[:, :-1]
    return E


def _normalize(p: np.ndarray, n_max: int) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.size > n_max + 1:
        p = p[: n_max + 1]
    elif p.size < n_max + 1:
        p = np.concatenate([p, np.zeros(n_max + 1 - p.size)])
    return p


def mb_cardinality_rows(R: np.ndarray, n_max: int = N_MAX) -> np.ndarray:
    """Multi-Bernoulli cardinality laws, one per row of existence probabilities.

    Rows may be zero padded (an absent Bernoulli component has r = 0).
    Returns an array of shape (rows, n_max + 1).
    """
    R = np.ascontiguousarray(np.atleast_2d(np.asarray(R, dtype=float)))
    return mb_rows(R, int(n_max), EXISTENCE_CLAMP)


def mb_cardinality(b: BernoulliSet | Sequence[float], n_max: int = N_MAX) -> CardinalityDistribution:
    """Cardinality law of a multi-Bernoulli set.

    p(n) = prod_j (1 - r_j) * e_n(r_1/(1-r_1), ..., r_M/(1-r_M)).
    Existence probabilities at (or above) one are clamped to 1 - 1e-6.
    """
    if not isinstance(b, BernoulliSet):
        b = BernoulliSet(tuple(np.asarray(b, dtype=float).reshape(-1).tolist()))
    r = np.asarray(b.existence_probs, dtype=float)
    if r.size == 0:
        return CardinalityDistribution.delta(0, n_max)
    return CardinalityDistribution(mb_cardinality_rows(r[None, :], n_max)[0])


def convolve_rows(rows, n_max: int = N_MAX) -> np.ndarray:
    """Convolution of probability vectors, truncated at ``n_max`` and renormalised."""
    if not isinstance(rows, np.ndarray):
        rows = [_normalize(r, n_max) for r in rows]
        rows = np.array(rows) if rows else np.zeros((0, n_max + 1))
    acc, bad = convolve_truncated(np.ascontiguousarray(rows, dtype=float), int(n_max))
    s = acc.sum()
    if bad >= 0 or not s > 0:
        raise NumericalError("cardinality convolution lost all probability mass")
    return acc / s


def convolve_cardinality(ps: Sequence[CardinalityDistribution], n_max: int = N_MAX) -> CardinalityDistribution:
    """Law of the sum of independent counts, truncated at ``n_max``."""
    ps = list(ps)
    if not ps:
        return CardinalityDistribution.delta(0, n_max)
    if len(ps) == 1 and ps[0].n_max == n_max:
        return ps[0]
    return CardinalityDistribution(convolve_rows([p.probs for p in ps], n_max))


def expected_cardinality(p: CardinalityDistribution) -> float:
    return float(np.arange(p.probs.size) @ p.probs)


def map_cardinality(p: CardinalityDistribution) -> int:
    # np.argmax returns the first maximum, i.e. ties go to the smaller n
    return int(np.argmax(p.probs))


def poisson_pmf(mean: float, n_max: int = N_MAX) -> np.ndarray:
    """Poisson law of ``mean`` truncated to 0..n_max and renormalised."""
    if not np.isfinite(mean) or mean < 0:
        raise NumericalError(f"Poisson mean must be finite and nonnegative, got {mean}")
    if mean == 0:
        return np.eye(1, n_max + 1).ravel()
    n = np.arange(n_max + 1)
    logp = n * np.log(mean) - mean - gammaln(n + 1)
    p = np.exp(logp - logp.max())
    return p / p.sum()


def log_gaussian(x: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """log N(x; m_j, P_j) for each component j (Cholesky based)."""
    x = np.asarray(x, dtype=float)
    try:
        L = np.linalg.cholesky(covs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular covariance in Gaussian evaluation") from exc
    diff = x[None, :] - means
    sol = np.linalg.solve(L, diff[..., None])[..., 0]
    maha = np.sum(sol**2, axis=-1)
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    d = means.shape[1]
    return -0.5 * (maha + logdet + d * np.log(2.0 * np.pi))


def gm_evaluate(v: GMIntensity, x) -> float:
    """Pointwise value of the mixture at ``x``."""
    if len(v) == 0:
        return 0.0
    return float(v.weights @ np.exp(log_gaussian(np.asarray(x, dtype=float).reshape(-1), v.means, v.covs)))


def gm_evaluate_grid(v: GMIntensity, points: np.ndarray) -> np.ndarray:
    """Mixture values at each row of ``points`` (shape (K, d))."""
    points = np.asarray(points, dtype=float)
    out = np.zeros(points.shape[0])
    for w, m, P in zip(v.weights, v.means, v.covs):
        L = np.linalg.cholesky(P)
        sol = np.linalg.solve(L, (points - m).T)
        logdet = 2.0 * np.log(np.diag(L)).sum()
        out += w * np.exp(-0.5 * (np.sum(sol**2, axis=0) + logdet + m.size * np.log(2 * np.pi)))
    return out
