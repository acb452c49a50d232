"""Matrix-exponential reference computations on small rings.

The long float literals were produced by standalone scripts kept outside
the package (simple dense linear algebra, no shared code) and are frozen
here so regressions in either implementation show up as mismatches.
"""

import numpy as np
import pytest

import deposim.oracle as oracle
from deposim import (
    build_asep,
    build_k_exclusion,
    build_marginal,
    build_particle_antiparticle,
    build_zero_range,
    f_family,
    reversed_process,
)
from deposim.oracle import (
    adjoint_matrix_residual,
    adjoint_residual,
    build_generator,
    bundle_for_marginal,
    drift_sum_exact,
    evolve,
    evolve_measure,
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

# independently computed two-point row for unit-asymmetry exclusion,
# density 1/2, ring of 8, time 0.5
COV_8 = np.array([
    1.53296431e-01, 4.23000863e-02, 5.54644276e-03, 4.75219054e-04,
    6.00726327e-05, 4.75219054e-04, 5.54644276e-03, 4.23000863e-02,
])
QDIST_8 = np.array([
    6.13185724e-01, 1.69200345e-01, 2.21857711e-02, 1.90087621e-03,
    2.40290531e-04, 1.90087621e-03, 2.21857711e-02, 1.69200345e-01,
])
VARJ_10 = 0.10988415223991013


def _cases():
    yield build_asep(1.0), 0.0
    yield build_asep(0.7), 0.5
    yield build_particle_antiparticle(0.5, 0.4, 1.0), -0.3
    yield build_k_exclusion(2), 0.0


@pytest.mark.parametrize("spec,theta", list(_cases()),
                         ids=["tasep", "asep", "pa", "kexcl"])
@pytest.mark.parametrize("L", [3, 6])
def test_product_measure_is_stationary(spec, theta, L):
    m = build_marginal(spec, theta)
    assert stationarity_residual(spec, m, L) < 1e-12


def test_broken_rates_are_not_stationary(broken_k_exclusion):
    m = build_marginal(broken_k_exclusion, 0.0)
    assert stationarity_residual(broken_k_exclusion, m, 3) > 1e-3


def test_adjoint_against_reversed_generator(tasep, tasep_half):
    assert adjoint_matrix_residual(tasep, tasep_half, 5) < 1e-12
    assert adjoint_residual(tasep, tasep_half, 5, trials=40, seed=0) < 1e-12


def test_adjoint_three_values():
    spec = build_k_exclusion(2)
    m = build_marginal(spec, 0.4)
    assert adjoint_matrix_residual(spec, m, 3) < 1e-12
    assert adjoint_residual(spec, m, 3, trials=40, seed=1) < 1e-12


def test_flux_identity_bounded(tasep, tasep_half):
    assert flux_identity_residual(tasep, tasep_half) < 1e-14


def test_flux_identity_truncated_tail():
    spec = build_zero_range(f_family("linear"), 1.0)
    m = build_marginal(spec, 0.0, eps=1e-14)
    assert flux_identity_residual(spec, m) < 1e-10


def test_generator_rows_sum_to_zero(tasep, tasep_half):
    bundle = bundle_for_marginal(tasep, tasep_half, 5)
    ones = np.ones(bundle.G.shape[0])
    assert np.abs(bundle.G.dot(ones)).max() < 1e-12


def test_generator_state_cap(monkeypatch):
    monkeypatch.setattr(oracle, "STATE_CAP", 10)
    with pytest.raises(ValueError):
        build_generator(build_asep(1.0), 6, 0, 1)   # 64 states > 10


def test_two_point_frozen_row(tasep, tasep_half):
    cov = two_point_exact(tasep, tasep_half, 8, 0.5)
    assert cov == pytest.approx(COV_8, rel=1e-6, abs=1e-12)
    assert cov.min() >= -1e-10
    assert two_point_sum_residual(tasep, tasep_half, 8, 0.5) < 1e-10


def test_q_distribution_frozen_row(tasep, tasep_half):
    q = q_distribution_exact(tasep, tasep_half, 8, 0.5)
    assert q.sum() == pytest.approx(1.0, abs=1e-12)
    assert q == pytest.approx(QDIST_8, rel=1e-6, abs=1e-12)


def test_displacement_law_matches_two_point(tasep, tasep_half):
    assert second_class_law_residual(tasep, tasep_half, 8, 0.5) < 1e-8


def test_evolve_semigroup(tasep, tasep_half):
    bundle = bundle_for_marginal(tasep, tasep_half, 6)
    pi = product_vector(tasep_half, bundle)
    rng = np.random.default_rng(0)
    v = rng.random(pi.size)
    one_then_one = evolve(bundle.G.T.tocsr(), evolve(bundle.G.T.tocsr(), v, 0.4), 0.4)
    in_one_go = evolve(bundle.G.T.tocsr(), v, 0.8)
    assert one_then_one == pytest.approx(in_one_go, abs=1e-9)


def test_evolve_measure_keeps_mass_and_fixes_pi(tasep, tasep_half):
    bundle = bundle_for_marginal(tasep, tasep_half, 6)
    pi = product_vector(tasep_half, bundle)
    out = evolve_measure(bundle, pi, 1.3)
    assert out.sum() == pytest.approx(1.0, abs=1e-12)
    assert out == pytest.approx(pi, abs=1e-12)


def test_flux_variance_quadrature_frozen(tasep, tasep_half):
    assert flux_variance_quadrature(tasep, tasep_half, 10, 0.5) == pytest.approx(
        VARJ_10, rel=1e-12)
    # the windowed covariance sum agrees up to light-cone wrap leakage
    assert flux_variance_residual(tasep, tasep_half, 10, 0.5) < 1e-4
    ws = flux_variance_weighted_sum(tasep, tasep_half, 10, 0.5)
    assert ws == pytest.approx(VARJ_10, abs=1e-4)


def test_drift_sum_identity_small_ring(tasep):
    m = build_marginal(tasep, float(np.log(0.3 / 0.7)))   # density 0.3
    lhs, rhs = drift_sum_exact(tasep, m, 10, 0.5)
    assert rhs == pytest.approx(0.5 * 0.084, rel=1e-10)   # t * drift covariance
    assert lhs == pytest.approx(rhs, abs=1e-4)


def test_signed_offsets_cover_ring():
    offs = signed_offsets(8)
    assert offs.shape == (8,)
    assert offs[0] == 0
    assert set(offs) == {0, 1, 2, 3, 4, -3, -2, -1}


def test_reversed_process_stationarity(tasep, tasep_half):
    rev = reversed_process(tasep)
    assert stationarity_residual(rev, tasep_half, 4) < 1e-12
