"""Product marginals, their moments, and tilt-parameter handling.

Numeric targets in this file were computed with standalone scripts kept
outside the package and are frozen here as literals.
"""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from deposim import (
    build_asep,
    build_bricklayers,
    build_k_exclusion,
    build_marginal,
    build_particle_antiparticle,
    build_zero_range,
    equilibrium_stats,
    f_family,
    f_factorial,
    mean_f,
    sample_ring,
    sample_site,
    size_biased_marginal,
    solve_theta_for_rho,
    theta_bounds,
)


def test_asep_flat_marginal(tasep, tasep_half):
    assert tasep_half.prob(0) == pytest.approx(0.5, abs=1e-15)
    assert tasep_half.prob(1) == pytest.approx(0.5, abs=1e-15)
    assert tasep_half.mean == pytest.approx(0.5, abs=1e-15)
    assert tasep_half.variance == pytest.approx(0.25, abs=1e-15)
    s = equilibrium_stats(tasep, tasep_half)
    assert s.hydro_flux == pytest.approx(0.25, abs=1e-14)
    assert s.char_speed == pytest.approx(0.0, abs=1e-14)
    assert s.truncation_mass == 0.0


def test_asep_tilted_marginal():
    spec = build_asep(0.8)
    theta = -0.8472978603872036          # occupation density 0.3
    m = build_marginal(spec, theta)
    assert m.mean == pytest.approx(0.3, abs=1e-12)
    assert m.variance == pytest.approx(0.21, abs=1e-12)
    s = equilibrium_stats(spec, m)
    assert s.hydro_flux == pytest.approx(0.126, abs=1e-12)
    assert s.char_speed == pytest.approx(0.24, abs=1e-12)


def test_particle_antiparticle_marginal():
    spec = build_particle_antiparticle(0.5, 1.0, 2.0)
    m = build_marginal(spec, 0.0)
    # weights 1/(c^0 a^z-ish products): z=-1,0,1 -> 0.4, 0.4, 0.2
    assert m.prob(-1) == pytest.approx(0.4, abs=1e-12)
    assert m.prob(0) == pytest.approx(0.4, abs=1e-12)
    assert m.prob(1) == pytest.approx(0.2, abs=1e-12)
    assert m.mean == pytest.approx(-0.2, abs=1e-12)
    assert m.variance == pytest.approx(0.56, abs=1e-12)


def test_zero_range_linear_is_poisson():
    spec = build_zero_range(f_family("linear"), 1.0)
    m = build_marginal(spec, 0.0)
    expect = [0.3678794411714424, 0.3678794411714424, 0.18393972058572114,
              0.0613132401952404, 0.015328310048810098]
    for z, p in enumerate(expect):
        assert m.prob(z) == pytest.approx(p, rel=1e-12)
    assert m.mean == pytest.approx(1.0, abs=1e-9)
    s = equilibrium_stats(spec, m)
    assert s.hydro_flux == pytest.approx(1.0, rel=1e-9)
    assert s.char_speed == pytest.approx(1.0, rel=1e-9)


def test_k_exclusion_marginal():
    spec = build_k_exclusion(2)
    m = build_marginal(spec, 0.0)
    assert m.mean == pytest.approx(1.0, abs=1e-13)
    assert m.variance == pytest.approx(2.0 / 3.0, abs=1e-13)
    s = equilibrium_stats(spec, m)
    assert s.hydro_flux == pytest.approx(0.0, abs=1e-13)
    assert s.mean_activity == pytest.approx(8.0 / 9.0, abs=1e-13)


def test_bricklayers_marginal():
    spec = build_bricklayers(f_family("exponential"), 0.6)
    m = build_marginal(spec, 0.0)
    assert m.mean == pytest.approx(0.0, abs=1e-12)
    assert m.variance == pytest.approx(0.6412479347453836, rel=1e-12)
    s = equilibrium_stats(spec, m)
    assert s.hydro_flux == pytest.approx(0.4, rel=1e-10)
    assert s.mean_activity == pytest.approx(2.0, rel=1e-10)
    assert s.char_speed == pytest.approx(0.0, abs=1e-10)


def test_f_factorial():
    spec = build_zero_range(f_family("linear"), 1.0)
    assert f_factorial(spec, 0) == 1.0
    assert f_factorial(spec, 4) == pytest.approx(24.0)


def test_mean_f_matches_direct_sum():
    spec = build_zero_range(f_family("linear"), 1.0)
    m = build_marginal(spec, 0.3)
    direct = sum(spec.f(z) * m.prob(z) for z in m.support)
    assert mean_f(m) == pytest.approx(direct, rel=1e-13)
    # index shift: the f-average equals the tilt weight exactly
    assert mean_f(m) == pytest.approx(math.exp(0.3), rel=1e-9)


def test_theta_bounds_indicator_family():
    spec = build_zero_range(f_family("indicator"), 1.0)
    b = theta_bounds(spec)
    # geometric weights: converges only below 0
    assert b.hi == pytest.approx(0.0, abs=1e-9)
    build_marginal(spec, -0.5)
    with pytest.raises(ValueError):
        build_marginal(spec, 0.5)


def test_marginal_probabilities_sum_to_one():
    for spec, theta in [
        (build_asep(1.0), 0.9),
        (build_zero_range(f_family("linear"), 1.0), -1.0),
        (build_bricklayers(f_family("exponential"), 0.6), 0.4),
    ]:
        m = build_marginal(spec, theta)
        total = sum(m.prob(z) for z in m.support)
        assert total == pytest.approx(1.0, abs=1e-10)
        assert m.variance >= 0.0


def test_solve_theta_round_trip():
    spec = build_asep(1.0)
    theta = solve_theta_for_rho(spec, 0.3, 1e-12)
    assert theta == pytest.approx(math.log(0.3 / 0.7), abs=1e-9)
    m = build_marginal(spec, theta)
    assert m.mean == pytest.approx(0.3, abs=1e-9)


def test_solve_theta_rejects_unreachable_density():
    spec = build_asep(1.0)
    with pytest.raises(ValueError):
        solve_theta_for_rho(spec, 1.5, 1e-12)


def test_size_biased_marginal_asep(tasep, tasep_half):
    hat = size_biased_marginal(tasep, tasep_half)
    # the extra particle needs room above, so all mass sits on empty origins
    assert hat.z_lo == 0
    probs = np.asarray(hat.probs)
    assert probs[0] == pytest.approx(1.0, abs=1e-12)
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_sample_site_deterministic(tasep_half):
    r1 = np.random.default_rng(5)
    r2 = np.random.default_rng(5)
    a = [sample_site(tasep_half, r1) for _ in range(20)]
    b = [sample_site(tasep_half, r2) for _ in range(20)]
    assert a == b
    assert all(v in (0, 1) for v in a)


def test_sample_ring_mean_close(tasep_half):
    rng = np.random.default_rng(11)
    ring = sample_ring(tasep_half, 4096, rng)
    assert ring.shape == (4096,)
    se = math.sqrt(0.25 / 4096)
    assert abs(ring.mean() - 0.5) < 5 * se


@given(st.floats(min_value=-1.5, max_value=1.5, allow_nan=False))
def test_marginal_moments_consistent(theta):
    spec = build_asep(0.7)
    m = build_marginal(spec, theta)
    mean = sum(z * m.prob(z) for z in m.support)
    var = sum((z - mean) ** 2 * m.prob(z) for z in m.support)
    assert m.mean == pytest.approx(mean, abs=1e-12)
    assert m.variance == pytest.approx(var, abs=1e-12)
