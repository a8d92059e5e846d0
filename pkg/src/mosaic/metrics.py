"""OSPA distance, estimate extraction and Monte Carlo aggregation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .filters import POS
from .gm import IIDClusterDensity, map_cardinality


@dataclass(frozen=True)
class OspaParams:
    c: float = 600.0
    p: float = 1.0

    def __post_init__(self):
        if self.c <= 0 or self.p < 1:
            raise ValueError("OSPA needs c > 0 and p >= 1")


def ospa(X, Y, params: OspaParams = OspaParams()) -> float:
    """OSPA distance between two finite point sets (rows are points)."""
    X = np.asarray(X, dtype=float).reshape(-1, 2) if np.size(X) else np.zeros((0, 2))
    Y = np.asarray(Y, dtype=float).reshape(-1, 2) if np.size(Y) else np.zeros((0, 2))
    m, n = len(X), len(Y)
    if m == 0 and n == 0:
        return 0.0
    if m == 0 or n == 0:
        return params.c
    if m > n:
        X, Y, m, n = Y, X, n, m
    D = np.minimum(np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=2), params.c) ** params.p
    rows, cols = linear_sum_assignment(D)
    total = D[rows, cols].sum() + params.c**params.p * (n - m)
    return float((total / n) ** (1.0 / params.p))


def extract_estimates(d: IIDClusterDensity, criterion: str = "map") -> np.ndarray:
    """Positions of the n_hat heaviest components.

    n_hat is the MAP cardinality (``criterion="map"``) or the rounded
    intensity mass (``criterion="eap"``, the usual PHD choice).
    """
    if criterion == "map":
        n_hat = map_cardinality(d.cardinality)
    elif criterion == "eap":
        n_hat = int(round(d.intensity.mass))
    else:
        raise ValueError(f"unknown estimate criterion {criterion!r}")
    v = d.intensity
    n_hat = min(n_hat, len(v))
    if n_hat == 0:
        return np.zeros((0, 2))
    top = np.argsort(-v.weights, kind="stable")[:n_hat]
    return v.means[top][:, POS]


@dataclass(frozen=True)
class MethodSummary:
    method: str
    mean_ospa: np.ndarray  # per scan
    mean_card: np.ndarray  # per scan
    time_avg_ospa: float
    run_time_avg_ospa: np.ndarray  # per run (for MC standard errors)


def aggregate(ospa_values: np.ndarray, card_values: np.ndarray, method: str = "") -> MethodSummary:
    """Means over runs (and nodes) per scan, plus the scan-averaged OSPA.

    Inputs have shape (runs, scans) or (runs, scans, nodes).
    """
    o = np.asarray(ospa_values, dtype=float)
    c = np.asarray(card_values, dtype=float)
    if o.ndim == 3:
        o = o.mean(axis=2)
    if c.ndim == 3:
        c = c.mean(axis=2)
    per_run = o.mean(axis=1)
    return MethodSummary(method, o.mean(axis=0), c.mean(axis=0), float(o.mean()), per_run)


def mc_standard_error(per_run: np.ndarray) -> float:
    per_run = np.asarray(per_run, dtype=float)
    if per_run.size < 2:
        return 0.0
    return float(per_run.std(ddof=1) / np.sqrt(per_run.size))


__all__ = [
    "OspaParams",
    "ospa",
    "extract_estimates",
    "aggregate",
    "MethodSummary",
    "mc_standard_error",
]
