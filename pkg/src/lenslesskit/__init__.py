"""Lensless imaging under external illumination: simulate, reconstruct, train.

The toolkit models a mask-based lensless camera as a shift-invariant linear
system, synthesizes measurements contaminated by ambient/direct lighting,
and recovers images with classical and learnable solvers that exploit a
background-illumination estimate.
"""

from . import (
    analysis,
    arrayio,
    autodiff,
    benchmarks,
    numerics,
    optics,
    pipeline,
    simulate,
    solvers,
    training,
)
from .errors import LenslessKitError

__version__ = "0.1.0"

__all__ = [
    "analysis",
    "arrayio",
    "autodiff",
    "benchmarks",
    "numerics",
    "optics",
    "pipeline",
    "simulate",
    "solvers",
    "training",
    "LenslessKitError",
    "__version__",
]
