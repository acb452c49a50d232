"""Attractive nearest-neighbor deposition models on a ring.

The package builds stationary product measures for exclusion-type and
zero-range-type surface growth models, simulates them exactly in
continuous time (single copies and basic-coupled pairs carrying a
discrepancy), evaluates the same quantities by dense enumeration on small
rings, and checks the stationary-state identities tying flux fluctuations,
two-point functions, and the discrepancy position to each other.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .models import (
    MODEL_NAMES,
    RateSpec,
    SiteSpace,
    ValidationReport,
    activity_rate,
    all_conditions_pass,
    build_asep,
    build_bricklayers,
    build_k_exclusion,
    build_named,
    build_particle_antiparticle,
    build_zero_range,
    drift_rate,
    f_family,
    f_family_tail,
    reversed_process,
    validate,
)
from .equilibrium import (
    EquilibriumStats,
    HatMarginal,
    Marginal,
    ThetaBounds,
    build_marginal,
    centered_tail_mass,
    equilibrium_stats,
    f_factorial,
    mean_f,
    sample_ring,
    sample_site,
    size_biased_marginal,
    solve_theta_for_rho,
    tail_deviation_ratio,
    theta_bounds,
)
from .dynamics import (
    RingSimulator,
    RingState,
    SimulationAssertionError,
    bracket_offset,
    light_cone_check,
    observer_flux,
    observer_flux_all_origins,
    replicate_rng,
    two_point_products,
)
from .coupling import (
    CoupledSimulator,
    CoupledState,
    second_class_initial,
)
from .oracle import (
    GeneratorBundle,
    adjoint_matrix_residual,
    adjoint_residual,
    build_generator,
    bundle_for_marginal,
    drift_sum_exact,
    evolve,
    evolve_measure,
    exit_rate,
    flux_identity_residual,
    flux_variance_quadrature,
    flux_variance_residual,
    flux_variance_weighted_sum,
    product_vector,
    q_distribution_exact,
    second_class_law_residual,
    signed_offsets,
    stationarity_residual,
    two_point_exact,
    two_point_sum_residual,
)
from .stats import (
    IdentityReport,
    StreamingMoments,
    all_passed,
    batch_jackknife,
    split_batches,
)
from .checks import (
    CoupledEnsemble,
    PlainEnsemble,
    check_coupling_soundness,
    check_flux_variance_quadrature,
    check_flux_variance_second_class,
    check_flux_variance_two_point,
    check_second_class_speed,
    check_sum_rule,
    check_two_point_drift,
    check_two_point_nonnegative,
    check_two_point_second_class,
    default_offsets,
    run_coupled_ensemble,
    run_plain_ensemble,
    small_ring_flux_moments,
    suggest_half_width,
)
