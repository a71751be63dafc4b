"""polymerlab: a verification laboratory for the log-gamma directed polymer.

Computes single- and multi-path partition functions, builds the associated
line ensemble, deterministically checks its invariance identities, and runs
Monte Carlo experiments validating the ensemble density, the BK-type
inequality and its counterexamples, and the prelimit scaling toward the
stochastic heat equation.
"""

__version__ = "0.1.0"

from .environment import DistributionSpec, WeightGrid, explicit_grid, sample_grid
from .lognum import LogNum, log_add, signed_log_det
from .partition import EndpointSpec, Point, brute_force_disjoint, t1, t_disjoint, t_k_nested

__all__ = [
    "__version__",
    "LogNum",
    "log_add",
    "signed_log_det",
    "DistributionSpec",
    "WeightGrid",
    "sample_grid",
    "explicit_grid",
    "Point",
    "EndpointSpec",
    "t1",
    "t_disjoint",
    "t_k_nested",
    "brute_force_disjoint",
]
