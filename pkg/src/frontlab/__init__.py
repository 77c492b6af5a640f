"""frontlab: simulation and exact computation for N-particle max-plus fronts."""

__version__ = "0.1.0"

from . import engine, gumbel_exact, noise, profile, zchain  # noqa: F401
