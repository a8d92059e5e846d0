"""Local Gaussian-mixture CPHD and PHD filters.

State convention: x = [px, vx, py, vy]. Sensors report either
[bearing, range] (bearing = atan2(dx, dy), i.e. measured from the +y axis)
or, for the linear surrogate, the position [px, py].
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, xlogy
from scipy.stats import binom

from ._kernels import merge_sorted
from .gm import (
    CardinalityDistribution,
    GMIntensity,
    IIDClusterDensity,
    NumericalError,
    esf_all,
    esf_leave_one_out,
    poisson_pmf,
)

POS = (0, 2)


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class MotionModel:
    Ts: float = 1.0
    sigma_w: float = 5.0
    ps: float = 0.95

    @property
    def A(self) -> np.ndarray:
        return np.kron(np.eye(2), np.array([[1.0, self.Ts], [0.0, 1.0]]))

    @property
    def Q(self) -> np.ndarray:
        T = self.Ts
        blk = np.array([[T**4 / 4, T**3 / 2], [T**3 / 2, T**2]])
        return self.sigma_w**2 * np.kron(np.eye(2), blk)


# ---------------------------------------------------------------------------
# fields of view


@dataclass(frozen=True)
class CircleFoV:
    center: tuple
    radius: float

    def contains(self, positions) -> np.ndarray:
        p = np.atleast_2d(np.asarray(positions, dtype=float))
        return np.hypot(p[:, 0] - self.center[0], p[:, 1] - self.center[1]) <= self.radius


@dataclass(frozen=True)
class UnboundedFoV:
    def contains(self, positions) -> np.ndarray:
        return np.ones(np.atleast_2d(positions).shape[0], dtype=bool)


# ---------------------------------------------------------------------------
# sensors


@dataclass(frozen=True)
class SensorModel:
    """Range/bearing (TOA/DOA) sensor with a circular field of view.

    ``sigma_theta`` is in radians. The FoV is centred on the sensor.
    """

    position: tuple
    fov_radius: float
    sigma_theta: float = np.deg2rad(1.0)
    sigma_r: float = 5.0
    pd0: float = 0.95

    @property
    def fov(self) -> CircleFoV:
        return CircleFoV(tuple(self.position), self.fov_radius)

    @property
    def R(self) -> np.ndarray:
        return np.diag([self.sigma_theta**2, self.sigma_r**2])

    @property
    def clutter_density(self) -> float:
        """Spatial clutter pdf in measurement space: uniform on [-pi, pi) x [0, radius]."""
        return 1.0 / (2.0 * np.pi * self.fov_radius)

    def detection_prob(self, positions) -> np.ndarray:
        return self.pd0 * self.fov.contains(positions)

    def measure(self, positions) -> np.ndarray:
        p = np.atleast_2d(positions)
        dx = p[:, 0] - self.position[0]
        dy = p[:, 1] - self.position[1]
        return np.column_stack([np.arctan2(dx, dy), np.hypot(dx, dy)])

    def linearize(self, means: np.ndarray):
        """Predicted measurements (J, 2) and Jacobians (J, 2, 4) at the state means."""
        dx = means[:, 0] - self.position[0]
        dy = means[:, 2] - self.position[1]
        r2 = dx**2 + dy**2
        if np.any(r2 <= 0):
            raise NumericalError("component mean coincides with the sensor position")
        r = np.sqrt(r2)
        H = np.zeros((means.shape[0], 2, 4))
        H[:, 0, 0] = dy / r2
        H[:, 0, 2] = -dx / r2
        H[:, 1, 0] = dx / r
        H[:, 1, 2] = dy / r
        return np.column_stack([np.arctan2(dx, dy), r]), H

    def innovation(self, z: np.ndarray, zhat: np.ndarray) -> np.ndarray:
        nu = z - zhat
        nu[..., 0] = wrap_angle(nu[..., 0])
        return nu

    def to_position(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(z)
        return np.column_stack(
            [self.position[0] + z[:, 1] * np.sin(z[:, 0]), self.position[1] + z[:, 1] * np.cos(z[:, 0])]
        )


@dataclass(frozen=True)
class LinearPositionSensor:
    """Direct position observation z = [px, py] + noise (linear surrogate)."""

    sigma: float = 5.0
    pd0: float = 1.0
    area: float = 1.0
    fov: object = field(default_factory=UnboundedFoV)

    @property
    def R(self) -> np.ndarray:
        return self.sigma**2 * np.eye(2)

    @property
    def clutter_density(self) -> float:
        return 1.0 / self.area

    def detection_prob(self, positions) -> np.ndarray:
        return self.pd0 * self.fov.contains(positions)

    def measure(self, positions) -> np.ndarray:
        return np.atleast_2d(np.asarray(positions, dtype=float))[:, :2].copy()

    def linearize(self, means: np.ndarray):
        H = np.zeros((means.shape[0], 2, 4))
        H[:, 0, 0] = 1.0
        H[:, 1, 2] = 1.0
        return means[:, POS].copy(), H

    def innovation(self, z, zhat):
        return z - zhat

    def to_position(self, z):
        return np.atleast_2d(z)[:, :2].copy()


@dataclass(frozen=True)
class ClutterModel:
    lambda_c: float = 15.0

    def __post_init__(self):
        if self.lambda_c < 0:
            raise ValueError("clutter rate must be nonnegative")


@dataclass(frozen=True)
class BirthModel:
    rate: float = 0.15
    Pb_diag: tuple = (50.0, 20.0, 50.0, 20.0)

    @property
    def Pb(self) -> np.ndarray:
        return np.diag(np.asarray(self.Pb_diag, dtype=float) ** 2)

    def from_measurements(self, measurements, sensor) -> GMIntensity:
        """One newborn component per measurement, zero velocity, total mass ``rate``."""
        Z = np.asarray(measurements, dtype=float).reshape(-1, 2)
        if Z.shape[0] == 0 or self.rate <= 0:
            return GMIntensity.empty(4)
        pos = sensor.to_position(Z)
        means = np.zeros((Z.shape[0], 4))
        means[:, 0] = pos[:, 0]
        means[:, 2] = pos[:, 1]
        w = np.full(Z.shape[0], self.rate / Z.shape[0])
        return GMIntensity(w, means, np.broadcast_to(self.Pb, (Z.shape[0], 4, 4)).copy())


# ---------------------------------------------------------------------------
# mixture reduction


@dataclass(frozen=True)
class ReductionConfig:
    prune_threshold: float = 1e-5
    merge_threshold: float = 4.0
    max_components: int = 40


def gm_reduce(
    v: GMIntensity,
    prune_threshold: float = 1e-5,
    merge_threshold: float = 4.0,
    max_components: int = 40,
) -> GMIntensity:
    """Prune small components, merge close ones (moment matching), cap the count.

    Merging is greedy from the heaviest component; a component j joins the
    current group when (m_j - m_i)' P_i^-1 (m_j - m_i) <= merge_threshold.
    Pruned mass is discarded; capping does not renormalise.
    """
    if prune_threshold < 0 or merge_threshold < 0:
        raise ValueError("thresholds must be nonnegative")
    keep = np.flatnonzero(v.weights >= prune_threshold) if prune_threshold > 0 else np.arange(len(v))
    if keep.size == 0:
        return GMIntensity.empty(v.dim)
    w, m, P = v.weights[keep], v.means[keep], v.covs[keep]
    # stable order: heaviest first, ties by original position
    order = np.argsort(-w, kind="stable")
    w, m, P = w[order], m[order], P[order]
    out_w, out_m, out_P, bad = merge_sorted(w, m, P, float(merge_threshold))
    if bad >= 0:
        raise NumericalError(f"singular covariance in component {int(keep[order[bad]])} during merge")
    top = np.argsort(-out_w, kind="stable")[:max_components]
    return GMIntensity._trusted(out_w[top], out_m[top], out_P[top])


# ---------------------------------------------------------------------------
# prediction


def _predict_components(v: GMIntensity, motion: MotionModel) -> GMIntensity:
    if len(v) == 0:
        return v
    A, Q = motion.A, motion.Q
    means = v.means @ A.T
    covs = A @ v.covs @ A.T + Q
    return GMIntensity(motion.ps * v.weights, means, 0.5 * (covs + np.swapaxes(covs, 1, 2)))


def thin_cardinality(p: np.ndarray, ps: float) -> np.ndarray:
    """Binomial thinning: law of the surviving count."""
    n = np.arange(p.size)
    # T[j, l] = C(l, j) ps^j (1-ps)^(l-j)
    T = binom.pmf(n[:, None], n[None, :], ps)
    return T @ p


def cphd_predict(
    prior: IIDClusterDensity,
    motion: MotionModel,
    birth: BirthModel,
    newborn: GMIntensity | None = None,
) -> IIDClusterDensity:
    """GM-CPHD prediction with Poisson birth cardinality of mean ``birth.rate``.

    ``newborn`` holds the birth components (built from the previous scan's
    measurements); it may be empty.
    """
    n_max = prior.cardinality.n_max
    v = _predict_components(prior.intensity, motion)
    if newborn is not None and len(newborn):
        v = GMIntensity.concat([v, newborn])
    surv = thin_cardinality(prior.cardinality.probs, motion.ps)
    p = np.convolve(surv, poisson_pmf(birth.rate, n_max))[: n_max + 1]
    return IIDClusterDensity(CardinalityDistribution(p / p.sum()), v)


def phd_predict(
    prior: IIDClusterDensity,
    motion: MotionModel,
    birth: BirthModel,
    newborn: GMIntensity | None = None,
) -> IIDClusterDensity:
    v = _predict_components(prior.intensity, motion)
    if newborn is not None and len(newborn):
        v = GMIntensity.concat([v, newborn])
    return IIDClusterDensity(CardinalityDistribution.poisson(v.mass, prior.cardinality.n_max), v)


# ---------------------------------------------------------------------------
# update


@dataclass
class _Kalman:
    """Per-(measurement, component) likelihoods and posterior moments."""

    idx: np.ndarray  # detectable component indices
    log_q: np.ndarray  # (m, Jd) log g(z | component)
    means: np.ndarray  # (m, Jd, 4)
    covs: np.ndarray  # (Jd, 4, 4)


def _kalman_terms(v: GMIntensity, Z: np.ndarray, sensor, pd: np.ndarray) -> _Kalman:
    idx = np.flatnonzero(pd > 0)
    m = Z.shape[0]
    if idx.size == 0 or m == 0:
        return _Kalman(idx, np.zeros((m, idx.size)), np.zeros((m, idx.size, 4)), np.zeros((idx.size, 4, 4)))
    mu, P = v.means[idx], v.covs[idx]
    zhat, H = sensor.linearize(mu)
    PHt = P @ np.swapaxes(H, 1, 2)
    S = H @ PHt + sensor.R
    S = 0.5 * (S + np.swapaxes(S, 1, 2))
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        for j, Sj in enumerate(S):
            if np.any(np.linalg.eigvalsh(Sj) <= 0):
                raise NumericalError(f"singular innovation covariance for component {int(idx[j])}") from None
        raise
    Sinv = np.linalg.inv(S)
    K = PHt @ Sinv
    Pu = P - K @ np.swapaxes(PHt, 1, 2)
    Pu = 0.5 * (Pu + np.swapaxes(Pu, 1, 2))
    nu = sensor.innovation(Z[:, None, :], zhat[None, :, :])  # (m, Jd, 2)
    maha = np.einsum("mja,jab,mjb->mj", nu, Sinv, nu)
    logdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
    log_q = -0.5 * (maha + logdet + 2.0 * np.log(2.0 * np.pi))
    means = mu[None] + np.einsum("jab,mjb->mja", K, nu)
    return _Kalman(idx, log_q, means, Pu)


def _assemble(v, kt, w_miss, w_det) -> GMIntensity:
    """Miss components followed by one block per measurement."""
    m = kt.log_q.shape[0]
    if m == 0 or kt.idx.size == 0:
        return v.with_weights(w_miss)
    weights = np.concatenate([w_miss, w_det.reshape(-1)])
    means = np.concatenate([v.means, kt.means.reshape(-1, v.dim)])
    covs = np.concatenate([v.covs, np.tile(kt.covs, (m, 1, 1))])
    return GMIntensity(weights, means, covs)


def _measurements(Z) -> np.ndarray:
    return np.asarray(Z, dtype=float).reshape(-1, 2)


def _lse(x: np.ndarray, axis=None) -> np.ndarray:
    """log-sum-exp that maps all -inf input to -inf without warnings."""
    top = np.max(x, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - top), axis=axis, keepdims=True)) + top
    return out.squeeze(axis) if axis is not None else out.item()


def _log_upsilon(u: int, log_esf: np.ndarray, mz: int, n_max: int, lam: float, qbar: float, logW: float) -> np.ndarray:
    """log Upsilon^u(n), n = 0..n_max, for each row of log ESF values.

    Upsilon^u(n) = sum_j e^-lam lam^(mz-j) n!/(n-j-u)! qbar^(n-j-u) W^-(j+u) e_j,
    i.e. Poisson clutter, |Z| = mz.
    """
    n = np.arange(n_max + 1)[:, None]
    j = np.arange(log_esf.shape[1])[None, :]
    k = n - j - u
    valid = k >= 0
    kk = np.where(valid, k, 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        base = -lam + xlogy(mz - j, lam) + gammaln(n + 1) - gammaln(kk + 1) + xlogy(kk, qbar) - (j + u) * logW
        base = np.where(valid & np.isfinite(base), base, -np.inf)
        t = base[None, :, :] + log_esf[:, None, :]
    t = np.where(np.isnan(t), -np.inf, t)
    return _lse(t, axis=2)


def cphd_update(
    pred: IIDClusterDensity,
    measurements,
    sensor,
    clutter: ClutterModel,
) -> IIDClusterDensity:
    """GM-CPHD corrector with Poisson clutter (rate ``lambda_c``).

    The nonlinear measurement is linearised at each component mean, and the
    detection probability is evaluated there as well.
    """
    Z = _measurements(measurements)
    v = pred.intensity
    if len(v) == 0:
        return pred
    p = pred.cardinality.probs
    n_max = p.size - 1
    m = Z.shape[0]
    lam = clutter.lambda_c
    c = sensor.clutter_density

    pd = sensor.detection_prob(v.means[:, POS])
    W = v.mass
    if W <= 0:
        return pred
    qbar = float(v.weights @ (1.0 - pd)) / W
    kt = _kalman_terms(v, Z, sensor, pd)

    # Xi_z = sum_i w_i pd_i g_i(z) / c(z), kept as log-scale + scaled values
    if m and kt.idx.size:
        log_terms = np.log(v.weights[kt.idx] * pd[kt.idx])[None, :] + kt.log_q - np.log(c)
        log_xi = _lse(log_terms, axis=1)
    else:
        log_terms = np.zeros((m, 0))
        log_xi = np.full(m, -np.inf)
    finite = np.isfinite(log_xi)
    log_s = float(log_xi[finite].max()) if finite.any() else 0.0
    xi_scaled = np.exp(log_xi - log_s)
    with np.errstate(divide="ignore"):
        log_e = np.log(esf_all(xi_scaled)) + np.arange(m + 1) * log_s
        log_e_loo = np.log(esf_leave_one_out(xi_scaled)) + np.arange(m)[None, :] * log_s if m else None

    with np.errstate(divide="ignore"):
        log_p = np.log(p)
    logW = np.log(W)

    with np.errstate(divide="ignore"):
        lu0 = _log_upsilon(0, log_e[None, :], m, n_max, lam, qbar, logW)[0]
        lu1 = _log_upsilon(1, log_e[None, :], m, n_max, lam, qbar, logW)[0]
    log_norm = _lse(lu0 + log_p)
    if not np.isfinite(log_norm):
        raise NumericalError("CPHD update: measurement set has zero likelihood under the predicted density")
    miss = np.exp(_lse(lu1 + log_p) - log_norm)
    w_miss = v.weights * (1.0 - pd) * miss

    if m and kt.idx.size:
        with np.errstate(divide="ignore"):
            lu1_loo = _log_upsilon(1, log_e_loo, m - 1, n_max, lam, qbar, logW)
            det_factor = np.exp(_lse(lu1_loo + log_p[None, :], axis=1) - log_norm)
        w_det = det_factor[:, None] * np.exp(log_terms)
    else:
        w_det = np.zeros((m, 0))

    post = lu0 + log_p
    post = np.exp(post - post.max())
    return IIDClusterDensity(CardinalityDistribution(post / post.sum()), _assemble(v, kt, w_miss, w_det))


def phd_update(
    pred: IIDClusterDensity,
    measurements,
    sensor,
    clutter: ClutterModel,
) -> IIDClusterDensity:
    Z = _measurements(measurements)
    v = pred.intensity
    n_max = pred.cardinality.n_max
    if len(v) == 0:
        return IIDClusterDensity(CardinalityDistribution.delta(0, n_max), v)
    pd = sensor.detection_prob(v.means[:, POS])
    w_miss = v.weights * (1.0 - pd)
    kt = _kalman_terms(v, Z, sensor, pd)
    if Z.shape[0] and kt.idx.size:
        num = (v.weights[kt.idx] * pd[kt.idx])[None, :] * np.exp(kt.log_q)
        den = clutter.lambda_c * sensor.clutter_density + num.sum(axis=1, keepdims=True)
        w_det = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    else:
        w_det = np.zeros((Z.shape[0], 0))
    post = _assemble(v, kt, w_miss, w_det)
    return IIDClusterDensity(CardinalityDistribution.poisson(post.mass, n_max), post)
