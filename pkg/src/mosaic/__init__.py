"""Distributed GM-CPHD / GM-PHD tracking over sensor networks whose nodes
have limited, unknown fields of view, with clustering-based robust fusion."""

__version__ = "0.1.0"

from .config import ConfigError, ScenarioConfig, default_config, load_config  # noqa: E402
from .fusion import aa_fuse, gci_fuse  # noqa: E402
from .gm import (  # noqa: E402
    BernoulliSet,
    CardinalityDistribution,
    GaussianComponent,
    GMIntensity,
    IIDClusterDensity,
    NumericalError,
    mb_cardinality,
)
from .robust import cluster_components, robust_fuse  # noqa: E402
from .scenario import run_experiment  # noqa: E402

__all__ = [
    "__version__",
    "ConfigError",
    "ScenarioConfig",
    "default_config",
    "load_config",
    "aa_fuse",
    "gci_fuse",
    "BernoulliSet",
    "CardinalityDistribution",
    "GaussianComponent",
    "GMIntensity",
    "IIDClusterDensity",
    "NumericalError",
    "mb_cardinality",
    "cluster_components",
    "robust_fuse",
    "run_experiment",
]
