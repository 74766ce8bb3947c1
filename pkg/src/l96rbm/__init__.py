"""Coupled stochastic-statistical closure of Lorenz '96 ensembles with
random-batch acceleration, plus a direct Monte-Carlo reference."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.1.0"

from .closure import ClosureConfig, StatState, StochEnsemble, coupled_step, run_closure
from .errors import (
    AlignmentError,
    ConfigError,
    DivergenceError,
    L96RBMError,
    ShapeError,
    StateError,
)
from .lorenz96 import InitialDistribution, OneLayerParams, TwoLayerParams, run_mc
from .rbm import BatchPartition, RbmConfig, rescale_factors, run_rbm, sample_partition
from .spectral import WavenumberGrid, decompose_field, reconstruct_field
from .statistics import StatisticsSeries

__all__ = [
    "__version__",
    "AlignmentError",
    "BatchPartition",
    "ClosureConfig",
    "ConfigError",
    "DivergenceError",
    "InitialDistribution",
    "L96RBMError",
    "OneLayerParams",
    "RbmConfig",
    "ShapeError",
    "StatState",
    "StateError",
    "StatisticsSeries",
    "StochEnsemble",
    "TwoLayerParams",
    "WavenumberGrid",
    "coupled_step",
    "decompose_field",
    "reconstruct_field",
    "rescale_factors",
    "run_closure",
    "run_mc",
    "run_rbm",
    "sample_partition",
]
