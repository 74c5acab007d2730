"""rdbounds: numerical checks of coming-down estimates for stochastic reaction-diffusion equations."""
from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .geometry import Cylinder, ParabolicBall, Point, SpaceTimeGrid, parabolic_distance
from .kernels import ScalarField, holder_seminorm, make_kernel, mollify, neg_holder_norm, sup_norm
from .nonlinearity import Nonlinearity, default_lambda, verify_barrier_inequality
from .noise import CovarianceSpec, sample_noise
from .solver import reaction_flow, solve_ode, solve_rd_pde
from .bounds import BoundReport, ode_bound_rhs, pde_bound_rhs
from .config import ConfigError, ExperimentConfig, load_config

__all__ = [
    "BoundReport", "ConfigError", "CovarianceSpec", "Cylinder", "ExperimentConfig", "Nonlinearity",
    "ParabolicBall", "Point", "ScalarField", "SpaceTimeGrid", "default_lambda", "holder_seminorm",
    "load_config", "make_kernel", "mollify", "neg_holder_norm", "ode_bound_rhs", "parabolic_distance",
    "pde_bound_rhs", "reaction_flow", "sample_noise", "solve_ode", "solve_rd_pde", "sup_norm",
    "verify_barrier_inequality", "__version__",
]
