"""Acceptance battery.

Every guarantee the package makes, checked at its stated tolerance, one
printed pass/fail line per criterion.  The heavy Monte Carlo ensembles are
module-scoped so each runs once; everything here is single-threaded and
seeded, so the numbers are reproducible bit for bit.
"""

import math
import time

import numpy as np
import pytest

from deposim import (
    build_asep,
    build_k_exclusion,
    build_marginal,
    build_particle_antiparticle,
    build_zero_range,
    f_family,
    solve_theta_for_rho,
)
from deposim.checks import (
    check_coupling_soundness,
    check_flux_variance_second_class,
    check_flux_variance_two_point,
    check_second_class_speed,
    check_sum_rule,
    check_two_point_drift,
    check_two_point_nonnegative,
    run_coupled_ensemble,
    run_plain_ensemble,
    small_ring_flux_moments,
)
from deposim.oracle import (
    adjoint_residual,
    flux_identity_residual,
    flux_variance_quadrature,
    flux_variance_weighted_sum,
    second_class_law_residual,
    stationarity_residual,
    two_point_exact,
    two_point_sum_residual,
)

THETAS = (-0.8, 0.0, 0.9)


def report(num, ok, detail):
    print(f"[{'pass' if ok else 'FAIL'}] criterion {num}: {detail}")
    assert ok, f"criterion {num}: {detail}"


# ---------------------------------------------------------------------------
# shared ensembles (heavy; built once)

@pytest.fixture(scope="module")
def half_density():
    spec = build_asep(1.0)
    return spec, build_marginal(spec, 0.0)


@pytest.fixture(scope="module")
def plain_half(half_density):
    spec, m = half_density
    return run_plain_ensemble(spec, m, L=512, t=4.0, replicates=100_000,
                              seed=101, v_list=(0.0, 0.5), threads=1)


@pytest.fixture(scope="module")
def coupled_half(half_density, plain_half):
    spec, m = half_density
    return run_coupled_ensemble(spec, m, L=512, t=4.0, replicates=100_000,
                                seed=211, offsets=plain_half.offsets,
                                v_list=(0.0, 0.5), threads=1)


@pytest.fixture(scope="module")
def plain_low():
    spec = build_asep(1.0)
    m = build_marginal(spec, math.log(0.3 / 0.7))
    return run_plain_ensemble(spec, m, L=512, t=4.0, replicates=100_000,
                              seed=307, v_list=(0.0,), threads=1)


@pytest.fixture(scope="module")
def plain_k_exclusion():
    spec = build_k_exclusion(2)
    m = build_marginal(spec, 0.0)
    return run_plain_ensemble(spec, m, L=256, t=4.0, replicates=20_000,
                              seed=401, v_list=(0.0,), threads=1)


@pytest.fixture(scope="module")
def coupled_low_t10():
    spec = build_asep(1.0)
    m = build_marginal(spec, math.log(0.3 / 0.7))
    return run_coupled_ensemble(spec, m, L=512, t=10.0, replicates=100_000,
                                seed=509, threads=1)


@pytest.fixture(scope="module")
def coupled_zero_range():
    spec = build_zero_range(f_family("linear"), 1.0)
    m = build_marginal(spec, 0.0)
    # only the mean displacement is read here; a minimal histogram window
    # keeps the light-cone requirement inside L=512 despite the large c_max
    return run_coupled_ensemble(spec, m, L=512, t=5.0, replicates=30_000,
                                seed=601, offsets=np.arange(-1, 2), threads=1)


@pytest.fixture(scope="module")
def coupled_small():
    spec = build_asep(1.0)
    m = build_marginal(spec, 0.0)
    return run_coupled_ensemble(spec, m, L=128, t=2.0, replicates=10_000,
                                seed=801, threads=1)


# ---------------------------------------------------------------------------
# criteria

def test_criterion_01_stationarity():
    cases = [
        ("asep p=1", build_asep(1.0)),
        ("asep p=0.7", build_asep(0.7)),
        ("particle-antiparticle", build_particle_antiparticle(0.5, 0.4, 1.0)),
        ("k-exclusion K=2", build_k_exclusion(2)),
    ]
    worst = 0.0
    for _, spec in cases:
        for L in (3, 6):
            for theta in THETAS:
                m = build_marginal(spec, theta)
                worst = max(worst, stationarity_residual(spec, m, L))
    report(1, worst < 1e-12,
           f"stationary product measures, worst residual {worst:.2e} < 1e-12")


def test_criterion_02_adjointness():
    spec = build_asep(0.7)
    m = build_marginal(spec, 0.3)
    r1 = adjoint_residual(spec, m, 6, trials=100, seed=2)
    spec2 = build_k_exclusion(2)
    m2 = build_marginal(spec2, -0.4)
    r2 = adjoint_residual(spec2, m2, 3, trials=100, seed=3)
    worst = max(r1, r2)
    report(2, worst < 1e-10,
           f"time reversal adjoint on 100 random cylinder pairs, worst {worst:.2e} < 1e-10")


def test_criterion_03_flux_identity():
    bounded = [
        (build_asep(1.0), 0.9),
        (build_asep(0.7), -0.5),
        (build_particle_antiparticle(0.5, 0.4, 1.0), 0.2),
        (build_k_exclusion(2), 0.7),
    ]
    worst_b = max(flux_identity_residual(s, build_marginal(s, th))
                  for s, th in bounded)
    zr = build_zero_range(f_family("linear"), 1.0)
    m = build_marginal(zr, 0.0, eps=1e-14)
    r_zr = flux_identity_residual(zr, m)
    ok = worst_b < 1e-14 and r_zr < 1e-10
    report(3, ok, f"hydrodynamic flux identity, bounded {worst_b:.2e} < 1e-14, "
                  f"truncated {r_zr:.2e} < 1e-10")


def test_criterion_04_displacement_law_exact(half_density):
    spec, m = half_density
    res = second_class_law_residual(spec, m, 8, 0.5)
    report(4, res < 1e-8,
           f"two-point row equals variance times displacement law, max gap {res:.2e} < 1e-8")


def test_criterion_05_two_point_nonnegative(half_density, plain_half):
    spec, m = half_density
    exact_min = float(two_point_exact(spec, m, 8, 0.5).min())
    rep = check_two_point_nonnegative(plain_half)
    ok = exact_min >= -1e-10 and rep.passed
    report(5, ok, f"two-point function nonnegative: exact min {exact_min:.2e} >= -1e-10, "
                  f"all Monte Carlo estimates above -3 SE")


def test_criterion_06_sum_rule(half_density, plain_half):
    spec, m = half_density
    res = two_point_sum_residual(spec, m, 8, 0.5)
    rep = check_sum_rule(plain_half)
    ok = res < 1e-10 and rep.passed
    report(6, ok, f"ring sum rule: exact residual {res:.2e} < 1e-10, "
                  f"Monte Carlo z {rep.z:+.2f} within 3")


def test_criterion_07_flux_variance_two_point(plain_half):
    reps = [check_flux_variance_two_point(plain_half, v) for v in (0.0, 0.5)]
    zs = [r.z for r in reps]
    ok = all(r.passed for r in reps) and plain_half.runtime_seconds < 600.0
    report(7, ok, "flux variance matches the weighted covariance sum at "
                  f"v=0 (z {zs[0]:+.2f}) and v=0.5 (z {zs[1]:+.2f}), "
                  f"ensemble took {plain_half.runtime_seconds:.0f}s < 600s")


def test_criterion_08_drift_identity(plain_low, plain_k_exclusion):
    rep = check_two_point_drift(plain_low)
    ok = rep.passed and rep.rhs == pytest.approx(0.336, rel=1e-9)
    rep2 = check_two_point_drift(plain_k_exclusion)
    ok = ok and rep2.passed and rep2.rhs == pytest.approx(0.0, abs=1e-12)
    report(8, ok, f"offset-weighted sum vs drift covariance: asymmetric rhs 0.336 "
                  f"(z {rep.z:+.2f}), symmetric rhs 0 (z {rep2.z:+.2f})")


def test_criterion_09_flux_variance_displacement(plain_half, coupled_half):
    rep = check_flux_variance_second_class(plain_half, coupled_half, 0.0)
    report(9, rep.passed,
           f"flux variance equals site variance times mean |displacement|, "
           f"independent ensembles of {plain_half.replicates} and "
           f"{coupled_half.replicates}, z {rep.z:+.2f} within 3")


def test_criterion_10_displacement_speed(coupled_low_t10, coupled_zero_range):
    rep = check_second_class_speed(coupled_low_t10)
    ok = rep.passed and rep.rhs == pytest.approx(4.0, rel=1e-9)
    rep2 = check_second_class_speed(coupled_zero_range)
    ok = ok and rep2.passed and rep2.rhs == pytest.approx(5.0, rel=1e-6)
    report(10, ok, f"mean displacement tracks the characteristic speed: "
                   f"exclusion 4.0 (z {rep.z:+.2f}), zero-range 5.0 (z {rep2.z:+.2f})")


def test_criterion_11_small_ring_variance(half_density):
    spec, m = half_density
    quad = flux_variance_quadrature(spec, m, 10, 0.5)
    wsum = flux_variance_weighted_sum(spec, m, 10, 0.5)
    mc = small_ring_flux_moments(spec, m, 10, 0.5, replicates=1_000_000, seed=701)
    z = (mc["var"] - quad) / mc["var_se"]
    gap = abs(quad - wsum)
    ok = abs(z) <= 3.0 and gap < 1e-4
    report(11, ok, f"quadrature flux variance {quad:.6f}: Monte Carlo z {z:+.2f} "
                   f"within 3, windowed-sum gap {gap:.2e} < 1e-4")


def test_criterion_12_coupling_soundness(coupled_small):
    rep = check_coupling_soundness(coupled_small)
    report(12, rep.passed,
           f"10000 coupled runs: ordering and conservation exact, both marginals "
           f"pass chi-square at 5% (worst stat ratio {rep.z:.2f} <= 1)")


def test_criterion_13_negative_control(broken_k_exclusion):
    worst = math.inf
    for theta in THETAS:
        m = build_marginal(broken_k_exclusion, theta)
        worst = min(worst, stationarity_residual(broken_k_exclusion, m, 3))
    report(13, worst > 1e-3,
           f"perturbed rates are detected: smallest stationarity residual "
           f"{worst:.2e} > 1e-3")
