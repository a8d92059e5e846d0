import numpy as np

from mosaic.gm import GMIntensity


def gm(weights, means, covs=None):
    """Small mixture builder: ``covs`` is a scalar variance or a stack of matrices."""
    means = np.atleast_2d(np.asarray(means, dtype=float))
    d = means.shape[1]
    if covs is None:
        covs = 1.0
    if np.isscalar(covs):
        covs = float(covs) * np.eye(d)
    covs = np.asarray(covs, float)
    if covs.ndim == 2:
        covs = np.broadcast_to(covs, (len(weights), d, d)).copy()
    return GMIntensity(np.asarray(weights, float), means, covs)


def random_spd(rng, d, scale=1.0):
    A = rng.normal(size=(d, d))
    return scale * (A @ A.T + d * np.eye(d)) / d


def random_gm(rng, J, d=2, spread=10.0, scale=1.0):
    if J == 0:
        return GMIntensity.empty(d)
    return GMIntensity(
        rng.uniform(0.05, 0.95, J),
        rng.uniform(-spread, spread, (J, d)),
        np.stack([random_spd(rng, d, scale) for _ in range(J)]),
    )


def small_raw(**run):
    """Two nodes on a line with overlapping FoVs and two crossing targets."""
    raw = {
        "version": 1,
        "network": {
            "nodes": [
                {"id": 1, "position": [-300.0, 0.0], "fov_radius": 500.0},
                {"id": 2, "position": [300.0, 0.0], "fov_radius": 500.0},
            ],
            "arcs": [[1, 2], [2, 1]],
        },
        "clutter": {"lambda_c": 3.0},
        "targets": [
            {"initial_state": [-100.0, 10.0, 50.0, 0.0], "birth_scan": 0},
            {"initial_state": [100.0, -10.0, -50.0, 0.0], "birth_scan": 2, "death_scan": 9},
        ],
        "run": {"scans": 10, "mc_runs": 2, "seed": 7, "methods": ["cphd-local", "cphd-gci"]},
    }
    raw["run"].update(run)
    return raw


# criterion number -> (passed, detail); filled by the acceptance module
ACCEPTANCE: dict = {}


def record(criterion: int, passed: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"criterion {criterion:2d} {'PASS' if passed else 'FAIL'}: {detail}")
    return bool(passed)
