"""Large-deviation toolkit for the range of planar random walks.

Submodules
----------
steps      step-law construction and validation
torus      scale bookkeeping and torus geometry
kernels    heat kernels, grid transition kernels, bridge weights
walks      Monte Carlo range/hitting estimators (numba)
bridges    bridge conditioning: exact hit probabilities, range functionals
skeleton   coarse skeletons, pair measures, hole-cut range
functionals  limiting pair functionals over the torus
ratefn     variational rate function chi and the polygonal rate curve
cli        manifest-driven experiment runner
"""

from __future__ import annotations

from .steps import PRESETS, StepDistribution, make_step_distribution
from .torus import BadScales, TorusConfig

__version__ = "0.1.0"

__all__ = [
    "PRESETS",
    "StepDistribution",
    "make_step_distribution",
    "BadScales",
    "TorusConfig",
    "__version__",
]
