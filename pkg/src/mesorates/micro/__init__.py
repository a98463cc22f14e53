"""Microscopic pair dynamics with a partially absorbing contact (3D only)."""

from .pair import (
    BindingSample, MicroConfig, MicroError, PairState, RebindingDistribution, bound_fraction,
    equilibrium_bound_fraction, pair_step, sample_binding_time, sample_binding_times,
    sample_rebinding_distribution, write_samples_csv,
)
from .propagator import PropagatorTable, build_table, get_table, radial_density, survival

__all__ = [
    "BindingSample", "MicroConfig", "MicroError", "PairState", "PropagatorTable",
    "RebindingDistribution", "bound_fraction", "build_table", "equilibrium_bound_fraction",
    "get_table", "pair_step", "radial_density", "sample_binding_time", "sample_binding_times",
    "sample_rebinding_distribution", "survival", "write_samples_csv",
]
