"""Asynchronous MCMC simulators with measure-level convergence checking."""

from .errors import AsyncMCError
from .kernels import KernelSpec, TargetDensity, finite_target, gaussian_target
from .measures import FiniteDistribution, StateSpace, StochasticMatrix, tv_distance
from .schedules import Event, Schedule, random_schedule, validate

__all__ = [
    "AsyncMCError",
    "Event",
    "FiniteDistribution",
    "KernelSpec",
    "Schedule",
    "StateSpace",
    "StochasticMatrix",
    "TargetDensity",
    "finite_target",
    "gaussian_target",
    "random_schedule",
    "tv_distance",
    "validate",
]
__version__ = "0.1.0"
