"""Certified reachability from learned discounted travel-cost value functions.

Pipeline: train a sinusoidal value network against the discounted Bellman
operator, export it to an exact expression tree, certify a uniform residual
bound over a compact region by interval branch-and-bound (delta-complete
semantics, SMT-LIB export for external solvers), convert the bound into a
uniform value-error bound, and bracket the backward-reachable set between
calibrated inner and outer enclosures.
"""

from .config import CostSpec, Interval, ProblemSpec, SpecError, StateBox, derive_gamma, load_config

__all__ = [
    "CostSpec",
    "Interval",
    "ProblemSpec",
    "SpecError",
    "StateBox",
    "derive_gamma",
    "load_config",
]

__version__ = "0.1.0"
