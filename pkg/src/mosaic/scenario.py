"""Ground truth, sensing and the distributed filtering / consensus loop."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import ScenarioConfig, parse_method
from .filters import (
    POS,
    BirthModel,
    ClutterModel,
    MotionModel,
    ReductionConfig,
    SensorModel,
    cphd_predict,
    cphd_update,
    gm_reduce,
    phd_predict,
    phd_update,
    wrap_angle,
)
from .gm import CardinalityDistribution, IIDClusterDensity, NumericalError
from .metrics import OspaParams, extract_estimates, ospa
from .robust import robust_fuse

log = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1
TRUTH_STREAM = 0x7472757468  # "truth"


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *keys: int) -> int:
    """Fold stream keys into the master seed with splitmix64 mixing.

    Streams used: (TRUTH_STREAM,) for ground truth and (run, node) for the
    measurements of one node in one Monte Carlo run.
    """
    s = splitmix64(master & _MASK64)
    for k in keys:
        s = splitmix64(s ^ splitmix64(int(k) & _MASK64))
    return s


def stream(master: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *keys))


# ---------------------------------------------------------------------------
# network


@dataclass(frozen=True)
class NetworkGraph:
    ids: tuple
    sensors: tuple
    arcs: frozenset  # (j, i): node i receives from node j

    def __post_init__(self):
        for j, i in self.arcs:
            if j not in self.ids or i not in self.ids:
                raise ValueError(f"arc ({j}, {i}) references an unknown node")

    def __len__(self) -> int:
        return len(self.ids)

    def in_neighbors(self, i: int) -> list[int]:
        """Positions of the nodes that node position ``i`` receives from, ascending by id."""
        target = self.ids[i]
        src = sorted(j for j, t in self.arcs if t == target)
        return [self.ids.index(j) for j in src]

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "NetworkGraph":
        sensors = tuple(
            SensorModel(
                position=tuple(n.position),
                fov_radius=n.fov_radius,
                sigma_theta=float(np.deg2rad(n.sigma_theta)),
                sigma_r=n.sigma_r,
                pd0=n.pd0,
            )
            for n in cfg.network.nodes
        )
        return cls(tuple(n.id for n in cfg.network.nodes), sensors, frozenset(map(tuple, cfg.network.arcs)))


def fov_parts(a: SensorModel, b: SensorModel, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Masks of the common FoV and the two exclusive FoVs at ``points``."""
    ina = a.fov.contains(points)
    inb = b.fov.contains(points)
    return ina & inb, ina & ~inb, inb & ~ina


# ---------------------------------------------------------------------------
# ground truth and sensing


@dataclass(frozen=True)
class GroundTruth:
    states: np.ndarray  # (scans, targets, 4), NaN when absent
    alive: np.ndarray  # (scans, targets) bool

    @property
    def cardinality(self) -> np.ndarray:
        return self.alive.sum(axis=1)

    @property
    def scans(self) -> int:
        return self.alive.shape[0]

    def positions(self, k: int) -> np.ndarray:
        return self.states[k, self.alive[k]][:, POS]


def generate_truth(cfg: ScenarioConfig, seed: int | None = None) -> GroundTruth:
    """Target tracks from the scenario's initial states and birth/death windows."""
    seed = cfg.run.seed if seed is None else seed
    rng = stream(seed, TRUTH_STREAM)
    K, T = cfg.run.scans, len(cfg.targets)
    sigma = cfg.motion.sigma_w if cfg.motion.truth_sigma_w is None else cfg.motion.truth_sigma_w
    A = MotionModel(cfg.motion.Ts).A
    Ts = cfg.motion.Ts
    G = np.kron(np.eye(2), np.array([[Ts**2 / 2], [Ts]]))
    states = np.full((K, T, 4), np.nan)
    alive = np.zeros((K, T), dtype=bool)
    for t, tgt in enumerate(cfg.targets):
        end = K if tgt.death_scan is None else min(tgt.death_scan, K)
        x = np.asarray(tgt.initial_state, dtype=float)
        for k in range(tgt.birth_scan, end):
            if k > tgt.birth_scan:
                x = A @ x + G @ (sigma * rng.standard_normal(2))
            states[k, t] = x
            alive[k, t] = True
    return GroundTruth(states, alive)


def generate_scan(
    truth: GroundTruth, k: int, sensor: SensorModel, clutter: ClutterModel, rng: np.random.Generator
) -> np.ndarray:
    """One scan of [bearing, range] measurements for one node."""
    if not 0 <= k < truth.scans:
        raise IndexError(f"scan {k} outside the horizon")
    pos = truth.positions(k)
    seen = pos[sensor.fov.contains(pos)] if len(pos) else pos
    detected = seen[rng.random(len(seen)) < sensor.pd0]
    z = sensor.measure(detected) if len(detected) else np.zeros((0, 2))
    if len(z):
        z = z + rng.standard_normal(z.shape) * np.array([sensor.sigma_theta, sensor.sigma_r])
        z[:, 0] = wrap_angle(z[:, 0])
    nc = rng.poisson(clutter.lambda_c)
    zc = np.column_stack([rng.uniform(-np.pi, np.pi, nc), rng.uniform(0.0, sensor.fov_radius, nc)])
    return np.concatenate([z, zc]) if nc else z


# ---------------------------------------------------------------------------
# distributed filtering


def run_consensus_step(
    states: Sequence[IIDClusterDensity],
    graph: NetworkGraph,
    rule: str,
    rho: float = 20.0,
    omega: float = 0.5,
    reduction: ReductionConfig | None = ReductionConfig(),
    cardinalized: bool = True,
) -> list[IIDClusterDensity]:
    """One synchronous round: each node fuses its snapshot with its in-neighbours' snapshots."""
    snapshot = list(states)
    out = []
    for i in range(len(snapshot)):
        cur = snapshot[i]
        for j in graph.in_neighbors(i):
            cur = robust_fuse(cur, snapshot[j], rule, omega, rho, reduction, cardinalized)
        out.append(cur)
    return out


class ExperimentError(RuntimeError):
    def __init__(self, msg: str, run: int, scan: int, node: int | None, method: str):
        super().__init__(f"{msg} (method={method}, run={run}, scan={scan}, node={node})")
        self.run, self.scan, self.node, self.method = run, scan, node, method


@dataclass
class RunResult:
    run: int
    ospa: dict  # method -> (scans, nodes)
    cardinality: dict  # method -> (scans, nodes) estimated count
    estimates: dict = field(default_factory=dict)  # method -> [scan][node] positions


@dataclass
class ExperimentResult:
    methods: list
    truth: GroundTruth
    runs: list  # RunResult, ordered by run index
    pd0: float

    def ospa(self, method: str) -> np.ndarray:
        return np.stack([r.ospa[method] for r in self.runs])

    def cardinality(self, method: str) -> np.ndarray:
        return np.stack([r.cardinality[method] for r in self.runs])


def _models(cfg: ScenarioConfig):
    motion = MotionModel(cfg.motion.Ts, cfg.motion.sigma_w, cfg.motion.ps)
    birth = BirthModel(cfg.birth.rate, tuple(cfg.birth.Pb_diag))
    clutter = ClutterModel(cfg.clutter.lambda_c)
    reduction = ReductionConfig(cfg.run.prune_threshold, cfg.run.merge_threshold, cfg.run.max_components)
    return motion, birth, clutter, reduction


def simulate_measurements(cfg: ScenarioConfig, truth: GroundTruth, run: int, graph: NetworkGraph | None = None):
    """Measurements[scan][node] for one Monte Carlo run."""
    graph = graph or NetworkGraph.from_config(cfg)
    clutter = ClutterModel(cfg.clutter.lambda_c)
    rngs = [stream(cfg.run.seed, run, nid) for nid in graph.ids]
    return [
        [generate_scan(truth, k, s, clutter, rngs[i]) for i, s in enumerate(graph.sensors)]
        for k in range(truth.scans)
    ]


def run_method(
    cfg: ScenarioConfig, truth: GroundTruth, Z, method: str, run: int = 0, graph: NetworkGraph | None = None
):
    """Filter (and fuse) one run's measurements; returns per-scan, per-node estimates."""
    graph = graph or NetworkGraph.from_config(cfg)
    filt, rule = parse_method(method)
    cardinalized = filt == "cphd"
    predict, update = (cphd_predict, cphd_update) if cardinalized else (phd_predict, phd_update)
    criterion = "map" if cardinalized else "eap"
    motion, birth, clutter, reduction = _models(cfg)
    n_nodes = len(graph)
    states = [IIDClusterDensity.empty(4, cfg.run.n_max) for _ in range(n_nodes)]
    prev_Z = [np.zeros((0, 2)) for _ in range(n_nodes)]
    estimates = []
    for k in range(truth.scans):
        for i, sensor in enumerate(graph.sensors):
            try:
                newborn = birth.from_measurements(prev_Z[i], sensor)
                post = update(predict(states[i], motion, birth, newborn), Z[k][i], sensor, clutter)
                v = gm_reduce(post.intensity, reduction.prune_threshold, reduction.merge_threshold, reduction.max_components)
                card = post.cardinality if cardinalized else CardinalityDistribution.poisson(v.mass, cfg.run.n_max)
                states[i] = IIDClusterDensity(card, v)
            except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
                raise ExperimentError(str(exc), run, k, graph.ids[i], method) from exc
            prev_Z[i] = Z[k][i]
        if rule != "local":
            try:
                for _ in range(cfg.run.consensus_steps):
                    states = run_consensus_step(
                        states, graph, rule, cfg.run.rho, cfg.run.omega, reduction, cardinalized
                    )
            except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
                raise ExperimentError(f"fusion failed: {exc}", run, k, None, method) from exc
        estimates.append([extract_estimates(s, criterion) for s in states])
    return estimates


def _score(truth: GroundTruth, estimates, params: OspaParams):
    K = truth.scans
    n = len(estimates[0]) if estimates else 0
    o = np.zeros((K, n))
    c = np.zeros((K, n))
    for k in range(K):
        X = truth.positions(k)
        for i, est in enumerate(estimates[k]):
            o[k, i] = ospa(X, est, params)
            c[k, i] = len(est)
    return o, c


def simulate_run(cfg: ScenarioConfig, truth: GroundTruth, run: int, methods: Sequence[str], keep_estimates: bool = False):
    graph = NetworkGraph.from_config(cfg)
    Z = simulate_measurements(cfg, truth, run, graph)
    params = OspaParams(cfg.run.ospa_c, cfg.run.ospa_p)
    res = RunResult(run, {}, {})
    for m in methods:
        est = run_method(cfg, truth, Z, m, run, graph)
        res.ospa[m], res.cardinality[m] = _score(truth, est, params)
        if keep_estimates:
            res.estimates[m] = est
    return res


def _simulate_run_star(args):
    return simulate_run(*args)


def run_experiment(
    cfg: ScenarioConfig,
    methods: Sequence[str] | None = None,
    threads: int = 1,
    keep_estimates: bool = False,
) -> ExperimentResult:
    """All Monte Carlo runs on one shared ground truth.

    Every method sees the same measurements within a run (common random
    numbers); results do not depend on ``threads``.
    """
    methods = list(methods or cfg.run.method_list())
    for m in methods:
        parse_method(m)
    truth = generate_truth(cfg)
    jobs = [(cfg, truth, r, methods, keep_estimates) for r in range(cfg.run.mc_runs)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(_simulate_run_star, jobs))
    else:
        runs = []
        for job in jobs:
            runs.append(_simulate_run_star(job))
            log.debug("finished run %d/%d", job[2] + 1, len(jobs))
    pd0 = float(np.mean([n.pd0 for n in cfg.network.nodes]))
    return ExperimentResult(methods, truth, runs, pd0)
