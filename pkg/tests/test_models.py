"""Rate definitions and structural validation."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from deposim import (
    MODEL_NAMES,
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


def test_asep_rates_by_hand():
    spec = build_asep(0.7)
    P, Q = spec.rate_tables(0, 1)
    # only a 1 next to a 0 moves
    assert P[1, 0] == pytest.approx(0.7)
    assert Q[0, 1] == pytest.approx(0.3)
    assert P[0, 0] == P[0, 1] == P[1, 1] == 0.0
    assert Q[0, 0] == Q[1, 0] == Q[1, 1] == 0.0


def test_asep_rejects_bad_asymmetry():
    with pytest.raises(ValueError):
        build_asep(1.5)
    with pytest.raises(ValueError):
        build_asep(-0.1)


def test_particle_antiparticle_rates_by_hand():
    spec = build_particle_antiparticle(0.5, 0.4, 1.0)
    P, Q = spec.rate_tables(-1, 1)
    # indices: 0 -> value -1, 1 -> value 0, 2 -> value 1
    assert P[1, 1] == pytest.approx(0.5 * 0.4)       # pair creation
    assert P[2, 1] == pytest.approx(0.5 * 0.5)       # charge hop
    assert P[1, 0] == pytest.approx(0.5 * 0.5)
    assert P[2, 0] == pytest.approx(0.5 * 1.0)       # annihilation
    assert P[1, 2] == 0.0
    assert Q[0, 2] == pytest.approx(0.5 * 1.0)
    assert Q[0, 1] == pytest.approx(0.5 * 0.5)
    assert Q[1, 1] == pytest.approx(0.5 * 0.4)


def test_particle_antiparticle_pair_rate_cap():
    # pair creation faster than half the annihilation breaks attractivity
    with pytest.raises(ValueError):
        build_particle_antiparticle(0.5, 0.6, 1.0)


def test_zero_range_needs_f_zero():
    with pytest.raises(ValueError):
        build_zero_range(lambda z: z + 1.0, 1.0)
    with pytest.raises(ValueError):
        build_zero_range(lambda z: -z, 1.0)


def test_zero_range_rates():
    spec = build_zero_range(f_family("linear"), 0.75)
    P, Q = spec.rate_tables(0, 5)
    assert P[3, 0] == pytest.approx(0.75 * 3)
    assert P[3, 5] == pytest.approx(0.75 * 3)   # no receiver constraint
    assert Q[2, 4] == pytest.approx(0.25 * 4)
    assert P[0, 4] == 0.0


def test_bricklayers_rates():
    spec = build_bricklayers(f_family("exponential"), 0.6)
    fz = spec.f
    # rate p*(f(y) + f(-z)) in wall-difference coordinates
    assert spec.p_rate(2, -1) == pytest.approx(0.6 * (fz(2) + fz(1)))
    assert spec.q_rate(-1, 3) == pytest.approx(0.4 * (fz(1) + fz(3)))
    # negative side comes from the reciprocal extension
    assert fz(-2) == pytest.approx(1.0 / fz(3))


def test_bricklayers_needs_f_at_least_one():
    with pytest.raises(ValueError):
        build_bricklayers(lambda z: 0.5 * z, 0.5)


def test_k_exclusion_rates():
    spec = build_k_exclusion(2)
    P, Q = spec.rate_tables(0, 2)
    assert P[1, 1] == 1.0
    assert P[2, 2] == 0.0   # receiver full
    assert P[0, 1] == 0.0   # donor empty
    assert np.allclose(P, Q.T)


ALL_SPECS = [
    build_asep(1.0),
    build_asep(0.7),
    build_particle_antiparticle(0.5, 0.4, 1.0),
    build_zero_range(f_family("linear"), 1.0),
    build_zero_range(f_family("indicator"), 0.8),
    build_bricklayers(f_family("exponential"), 0.6),
    build_bricklayers(f_family("linear", beta=0.5), 1.0),
    build_k_exclusion(2),
]


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.name + str(sorted(s.params.items())))
def test_structural_conditions_hold(spec):
    reports = validate(spec)
    assert len(reports) == 5
    for rep in reports:
        assert rep.passed, f"{rep.condition}: residual {rep.max_residual:.3e} {rep.witnesses[:2]}"
    assert all_conditions_pass(reports)


def test_broken_model_is_flagged(broken_k_exclusion):
    reports = validate(broken_k_exclusion)
    failed = {r.condition for r in reports if not r.passed}
    assert "monotonicity" in failed
    assert not all_conditions_pass(reports)


def test_rate_tables_reject_negative_rates():
    import dataclasses
    bad = dataclasses.replace(build_asep(1.0), p_rate=lambda y, z: -1.0 if (y, z) == (1, 0) else 0.0)
    with pytest.raises(ValueError):
        bad.rate_tables(0, 1)


def test_drift_and_activity_split():
    spec = build_asep(0.7)
    assert drift_rate(spec, 1, 0) == pytest.approx(0.7)
    assert drift_rate(spec, 0, 1) == pytest.approx(-0.3)
    assert activity_rate(spec, 1, 0) == pytest.approx(0.7)
    assert activity_rate(spec, 0, 1) == pytest.approx(0.3)


def test_reversed_process_swaps_directions():
    spec = build_asep(0.7)
    rev = reversed_process(spec)
    assert rev.name != spec.name
    assert rev.p_rate(1, 0) == pytest.approx(spec.q_rate(0, 1))
    assert rev.q_rate(0, 1) == pytest.approx(spec.p_rate(1, 0))
    back = reversed_process(rev)
    assert back.name == spec.name
    assert back.p_rate(1, 0) == pytest.approx(spec.p_rate(1, 0))


def test_f_family_values():
    lin = f_family("linear")
    assert lin(0) == 0.0 and lin(3) == 3.0
    ind = f_family("indicator")
    assert ind(0) == 0.0 and ind(1) == 1.0 and ind(7) == 1.0
    expo = f_family("exponential", beta=1.0)
    assert expo(2) == pytest.approx(math.exp(2))
    with pytest.raises(ValueError):
        f_family("no-such-family")


def test_f_family_tail_matches_log_growth():
    assert f_family_tail("indicator") == 0.0
    assert f_family_tail("exponential") == math.inf
    assert f_family_tail("linear") == math.inf
    with pytest.raises(ValueError):
        f_family_tail("nope")


@given(st.integers(min_value=0, max_value=40), st.integers(min_value=0, max_value=40))
def test_f_family_nondecreasing(a, b):
    for name in ("linear", "indicator", "exponential"):
        f = f_family(name, beta=0.7)
        lo, hi = min(a, b), max(a, b)
        assert f(lo) <= f(hi) + 1e-12


def test_build_named_dispatch():
    for name in MODEL_NAMES:
        assert callable(build_named)
    spec = build_named("asep", {"p": 0.7})
    assert spec.p_rate(1, 0) == pytest.approx(0.7)
    spec = build_named("K-Exclusion", {"K": 2})
    assert list(spec.space.values(-5, 5)) == [0, 1, 2]
    spec = build_named("zero-range", {"f": "linear", "p": 1.0})
    assert spec.p_rate(3, 0) == pytest.approx(3.0)


def test_build_named_errors():
    with pytest.raises(ValueError):
        build_named("asep", {})                      # missing p
    with pytest.raises(ValueError):
        build_named("asep", {"p": 1.0, "zzz": 3})    # leftover key
    with pytest.raises(ValueError):
        build_named("not-a-model", {})


@given(st.sampled_from(ALL_SPECS), st.integers(-3, 3), st.integers(-3, 3))
def test_rates_are_nonnegative_and_zero_off_support(spec, y, z):
    if not spec.space.contains(y) or not spec.space.contains(z):
        return
    assert spec.p_rate(y, z) >= 0.0
    assert spec.q_rate(y, z) >= 0.0
    # a jump out of an empty donor or into a full receiver cannot fire
    if spec.space.bounded:
        lo, hi = spec.space.lo, spec.space.hi
        assert spec.p_rate(lo, z) == 0.0
        assert spec.p_rate(y, hi) == 0.0
        assert spec.q_rate(y, lo) == 0.0
        assert spec.q_rate(hi, z) == 0.0
