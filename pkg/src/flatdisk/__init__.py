"""Steady states and stability of self-gravitating razor-thin disks.

Constrained energy minimizers for planar densities interacting through
the in-plane Coulomb kernel, with the supporting toolbox: profile
reduction, radial field operators, rearrangement and regularity checks,
and a particle harness for perturbation experiments.
"""

from .config import RunConfig, load_config
from .dynamics import (DistanceSample, Ensemble, StabilityMetrics,
                       Trajectory, distance, ensemble_energy, evolve,
                       norm_distance_estimate, sample_ansatz,
                       stability_experiment)
from .errors import (BracketFailure, FlatdiskError, InvalidMass,
                     NoConvergence, PropertyViolation)
from .profiles import (MicroProfile, ReducedProfile, VelocityProfile,
                       legendre_transform, load_tabulated, make_polytrope,
                       make_tabulated, optimal_velocity_profile,
                       psi_inverse_derivative, reduce_profile)
from .radial_field import (C_HLS_DEFAULT, ExternalDensity,
                           GridResolutionWarning, RadialDensity, RadialGrid,
                           RadialPotential, center_potential, coulomb_energy,
                           disk_potential, lp_norm, make_external)
from .rearrange import (CellProfile, composition_check, rearranged_cells,
                        riesz_gain, symmetric_decreasing_rearrangement)
from .regularity import (HolderEstimate, RegularityReport, SmoothingVerdict,
                         SymbolVerdict, fourier_symbol_check, holder_seminorm,
                         l4n_bound_ratio, l4n_norm, pairwise_holder,
                         regularity_report, smoothing_check)
from .variational import (CoercivityReport, EnergyReport, MinimalityReport,
                          SolverOptions, SteadyState, chain_constant,
                          coercivity_check, complementary_slack, el_residual,
                          energy_report, feasibility_corpus,
                          minimality_probe, solve_steady_state)

__version__ = "0.1.0"

__all__ = [
    "BracketFailure",
    "C_HLS_DEFAULT",
    "CellProfile",
    "CoercivityReport",
    "DistanceSample",
    "EnergyReport",
    "Ensemble",
    "ExternalDensity",
    "FlatdiskError",
    "GridResolutionWarning",
    "HolderEstimate",
    "InvalidMass",
    "MicroProfile",
    "MinimalityReport",
    "NoConvergence",
    "PropertyViolation",
    "RadialDensity",
    "RadialGrid",
    "RadialPotential",
    "ReducedProfile",
    "RegularityReport",
    "RunConfig",
    "SmoothingVerdict",
    "SolverOptions",
    "StabilityMetrics",
    "SteadyState",
    "SymbolVerdict",
    "Trajectory",
    "VelocityProfile",
    "center_potential",
    "chain_constant",
    "coercivity_check",
    "complementary_slack",
    "composition_check",
    "coulomb_energy",
    "disk_potential",
    "distance",
    "el_residual",
    "energy_report",
    "ensemble_energy",
    "evolve",
    "feasibility_corpus",
    "fourier_symbol_check",
    "holder_seminorm",
    "l4n_bound_ratio",
    "l4n_norm",
    "legendre_transform",
    "load_config",
    "load_tabulated",
    "lp_norm",
    "make_external",
    "make_polytrope",
    "make_tabulated",
    "minimality_probe",
    "norm_distance_estimate",
    "optimal_velocity_profile",
    "pairwise_holder",
    "psi_inverse_derivative",
    "rearranged_cells",
    "reduce_profile",
    "regularity_report",
    "riesz_gain",
    "sample_ansatz",
    "smoothing_check",
    "solve_steady_state",
    "stability_experiment",
    "symmetric_decreasing_rearrangement",
]
