"""Discrete causal fermion systems: action, surface layer integrals, quantum states and Fock representations."""

from .measure import DiscreteMeasure, InteractionMap
from .operators import HilbertSpec, LagrangianParams, SpacetimePoint, SpecError

__all__ = ["DiscreteMeasure", "HilbertSpec", "InteractionMap", "LagrangianParams", "SpacetimePoint", "SpecError"]
__version__ = "0.1.0"
