"""Simulation and verification toolkit for multi-layer run-and-tumble and
exclusion lattice gases: exact kinetic Monte Carlo for the microscopic
dynamics, closed-form macroscopic objects (semigroups, hydrodynamic
solutions, stationary fluctuation covariances, large-deviation functional)
on the Fourier side, and quantitative cross-checks between the two."""

__version__ = "0.1.0"

from .model import (
    Configuration,
    DomainError,
    FAMILY_RTP,
    FAMILY_SEP,
    Lattice,
    LayerSet,
    ModelParams,
    Transition,
    TransitionError,
    apply_transition,
    enumerate_transitions,
    sample_product_measure,
)
from .spectral import GridFunction

__all__ = [
    "Configuration",
    "DomainError",
    "FAMILY_RTP",
    "FAMILY_SEP",
    "GridFunction",
    "Lattice",
    "LayerSet",
    "ModelParams",
    "Transition",
    "TransitionError",
    "apply_transition",
    "enumerate_transitions",
    "sample_product_measure",
    "__version__",
]
