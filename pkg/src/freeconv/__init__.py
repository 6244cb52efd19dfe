"""Numerical free additive convolution: semigroups, pair convolutions, local laws."""
from .measures import Atom, JacobiComponent, MeasureSpec, validate
from .spectrum import (
    DensityGrid,
    EdgeKind,
    EdgeReport,
    SupportReport,
    critical_times,
    pair_density,
    pair_density_grid,
    semigroup_density,
    semigroup_density_grid,
    support_pair,
    support_semigroup,
)
from .subordination import ContinuationSchedule, SubordinationSolution, solve_pair, solve_semigroup
from .transforms import HatMeasure, cauchy, f_transform, hat_measure

__all__ = [
    "Atom", "JacobiComponent", "MeasureSpec", "validate",
    "HatMeasure", "cauchy", "f_transform", "hat_measure",
    "ContinuationSchedule", "SubordinationSolution", "solve_pair", "solve_semigroup",
    "DensityGrid", "EdgeKind", "EdgeReport", "SupportReport", "critical_times",
    "pair_density", "pair_density_grid", "semigroup_density", "semigroup_density_grid",
    "support_pair", "support_semigroup",
]
