"""Event-loop simulator: conservation, flux readout, light-cone guard."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deposim import (
    RingSimulator,
    bracket_offset,
    build_asep,
    build_marginal,
    build_zero_range,
    f_family,
    light_cone_check,
    observer_flux,
    observer_flux_all_origins,
    replicate_rng,
    two_point_products,
)
from deposim.oracle import exit_rate


def test_replicate_rng_streams():
    a = replicate_rng(7, 0).random(4)
    b = replicate_rng(7, 0).random(4)
    c = replicate_rng(7, 1).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_bracket_offset_truncates_toward_zero():
    assert bracket_offset(0.5, 4.0) == 2
    assert bracket_offset(-0.5, 4.0) == -2
    assert bracket_offset(0.9, 1.0) == 0


def test_run_to_zero_time_is_identity(tasep, tasep_half):
    sim = RingSimulator.for_marginal(tasep, tasep_half)
    state = sim.sample_state(tasep_half, 16, replicate_rng(1, 0))
    before = state.omega.copy()
    sim.run(state, 0.0, replicate_rng(1, 1))
    assert np.array_equal(state.omega, before)
    assert state.events == 0


def test_total_rate_matches_matrix_oracle(tasep):
    sim = RingSimulator(tasep, 0, 1)
    state = sim.state_from(np.array([1, 0, 1]))
    assert sim.total_rate(state) == pytest.approx(exit_rate(tasep, state.omega))
    assert sim.total_rate(state) == pytest.approx(1.0)


def test_conservation_bounded(tasep, tasep_half):
    sim = RingSimulator.for_marginal(tasep, tasep_half)
    state = sim.sample_state(tasep_half, 64, replicate_rng(3, 0))
    total = state.conserved_total()
    sim.run(state, 5.0, replicate_rng(3, 1))
    assert state.conserved_total() == total
    assert state.events > 0
    # growth telescopes: the net deposit differences recover the value changes
    moved = np.roll(state.growth, 1) - state.growth
    assert np.array_equal(state.omega - state.omega_init, moved)


def test_conservation_and_extension_zero_range():
    spec = build_zero_range(f_family("linear"), 1.0)
    m = build_marginal(spec, 0.5)
    sim = RingSimulator.for_marginal(spec, m)
    state = sim.sample_state(m, 32, replicate_rng(9, 0))
    total = state.conserved_total()
    sim.run(state, 3.0, replicate_rng(9, 1))
    assert state.conserved_total() == total
    assert state.omega.min() >= 0


def test_observer_flux_matches_all_origins(tasep, tasep_half):
    sim = RingSimulator.for_marginal(tasep, tasep_half)
    state = sim.sample_state(tasep_half, 48, replicate_rng(4, 0))
    sim.run(state, 2.0, replicate_rng(4, 1))
    for v in (0.0, 0.5, -0.5):
        allj = observer_flux_all_origins(state, v)
        assert allj.shape == (48,)
        assert observer_flux(state, v) == allj[0]


def test_observer_flux_window_guard(tasep, tasep_half):
    sim = RingSimulator.for_marginal(tasep, tasep_half)
    state = sim.sample_state(tasep_half, 8, replicate_rng(5, 0))
    state.time = 100.0
    with pytest.raises(ValueError):
        observer_flux(state, 1.0)   # bracket offset reaches half the ring


def test_two_point_products_layout(tasep):
    sim = RingSimulator(tasep, 0, 1)
    omega = np.array([1, 0, 1, 1, 0, 0])
    state = sim.state_from(omega)
    offsets = np.array([-1, 0, 2])
    prods = two_point_products(state, offsets)
    expect = [float(omega @ np.roll(omega, -n)) / 6.0 for n in (-1, 0, 2)]
    assert prods == pytest.approx(expect)


def test_light_cone_check():
    assert light_cone_check(1.0, 4.0, 30, 512)
    assert not light_cone_check(1.0, 40.0, 30, 128)


def test_run_is_deterministic_per_stream(tasep, tasep_half):
    outs = []
    for _ in range(2):
        sim = RingSimulator.for_marginal(tasep, tasep_half)
        state = sim.sample_state(tasep_half, 32, replicate_rng(8, 0))
        sim.run(state, 1.5, replicate_rng(8, 1))
        outs.append((state.omega.copy(), state.growth.copy(), state.events))
    assert np.array_equal(outs[0][0], outs[1][0])
    assert np.array_equal(outs[0][1], outs[1][1])
    assert outs[0][2] == outs[1][2]


@settings(max_examples=15)
@given(st.integers(min_value=0, max_value=2 ** 31), st.floats(0.05, 0.8))
def test_bounded_values_stay_in_bounds(seed, t_end):
    spec = build_asep(0.7)
    m = build_marginal(spec, 0.4)
    sim = RingSimulator.for_marginal(spec, m)
    state = sim.sample_state(m, 12, replicate_rng(seed, 0))
    total = state.conserved_total()
    sim.run(state, t_end, replicate_rng(seed, 1))
    assert state.omega.min() >= 0 and state.omega.max() <= 1
    assert state.conserved_total() == total
