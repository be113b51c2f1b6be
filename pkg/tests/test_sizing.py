"""Hover-propulsion sizing: closed-form checks and the published grids."""

import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from jetdyn.errors import InfeasibleEndurance, InvalidValue
from jetdyn.sizing import (ELECTRIC_FAN, TURBOJET, PropulsionSpec,
                           battery_mass, engine_count, engine_count_table,
                           fuel_mass, mass_table)

WEIGHTS = (10.0, 20.0, 30.0, 40.0, 50.0)
MINUTES = (1.0, 3.0, 5.0)

# frozen grids, rows over WEIGHTS and columns over MINUTES
BATTERY_KG = (
    (0.86, 3.12, 6.57),
    (1.72, 6.25, 13.15),
    (2.58, 9.37, 19.73),
    (3.44, 12.50, 26.31),
    (4.31, 15.62, 32.89),
)
FUEL_KG = (
    (0.22, 0.67, 1.15),
    (0.44, 1.35, 2.30),
    (0.66, 2.02, 3.45),
    (0.88, 2.70, 4.61),
    (1.10, 3.38, 5.76),
)
ELECTRIC_ENGINES = (1, 2, 3, 4, 4)
JET_ENGINES = (1, 1, 2, 2, 3)


def test_battery_mass_closed_form():
    # k = P*t*(1000/60)/E, m = W*k/(1-k), written out independently
    k = 1.0 * 5.0 * (1000.0 / 60.0) / 210.0
    assert battery_mass(40.0, 5.0, ELECTRIC_FAN) == \
        pytest.approx(40.0 * k / (1.0 - k), rel=1e-12)


def test_fuel_mass_closed_form():
    # k = flow*density*t, average-weight correction divides k by 2
    k = 0.02725 * 0.8 * 5.0
    assert fuel_mass(40.0, 5.0, TURBOJET) == \
        pytest.approx(40.0 * k / (1.0 - k / 2.0), rel=1e-12)


def test_naive_variant_ignores_self_lift():
    k = 0.02725 * 0.8 * 3.0
    assert fuel_mass(30.0, 3.0, TURBOJET, naive=True) == \
        pytest.approx(30.0 * k, rel=1e-12)
    assert fuel_mass(30.0, 3.0, TURBOJET) > \
        fuel_mass(30.0, 3.0, TURBOJET, naive=True)


def test_battery_grid_matches_frozen_cells():
    got = mass_table(WEIGHTS, MINUTES, ELECTRIC_FAN)
    assert np.allclose(got, BATTERY_KG, atol=0.01)


def test_fuel_grid_matches_frozen_cells():
    got = mass_table(WEIGHTS, MINUTES, TURBOJET)
    assert np.allclose(got, FUEL_KG, atol=0.01)


def test_engine_counts_match_frozen_cells():
    assert tuple(engine_count_table(WEIGHTS, ELECTRIC_FAN)) == ELECTRIC_ENGINES
    assert tuple(engine_count_table(WEIGHTS, TURBOJET)) == JET_ENGINES


def test_engine_count_is_thrust_ceiling():
    assert engine_count(13.0, ELECTRIC_FAN) == 1
    assert engine_count(13.01, ELECTRIC_FAN) == 2
    assert engine_count(44.0, TURBOJET) == 2
    assert engine_count(44.1, TURBOJET) == 3


def test_battery_infeasible_at_long_endurance():
    # k reaches 1 when t = E*60/1000/P = 12.6 min for the stock fan spec
    with pytest.raises(InfeasibleEndurance):
        battery_mass(10.0, 12.6, ELECTRIC_FAN)
    battery_mass(10.0, 12.59, ELECTRIC_FAN)


def test_fuel_infeasible_when_tank_exceeds_lift():
    minutes_at_k2 = 2.0 / (0.02725 * 0.8)
    with pytest.raises(InfeasibleEndurance):
        fuel_mass(10.0, minutes_at_k2, TURBOJET)


def test_mass_table_marks_infeasible_cells_inf():
    grid = mass_table((10.0,), (1.0, 50.0), ELECTRIC_FAN)
    assert math.isfinite(grid[0][0])
    assert math.isinf(grid[0][1])


def test_bad_inputs_rejected():
    with pytest.raises(InvalidValue):
        battery_mass(-1.0, 1.0, ELECTRIC_FAN)
    with pytest.raises(InvalidValue):
        fuel_mass(10.0, -0.5, TURBOJET)
    with pytest.raises(InvalidValue):
        PropulsionSpec(kind="electric", thrust_per_engine=0.0,
                       power_per_kgf=1.0, energy_density=210.0)


@given(w=st.floats(0.1, 200.0), t=st.floats(0.01, 12.0))
def test_battery_mass_grows_with_weight_and_endurance(w, t):
    m = battery_mass(w, t, ELECTRIC_FAN)
    assert m > 0.0
    assert battery_mass(w * 1.1, t, ELECTRIC_FAN) > m
    k = ELECTRIC_FAN.power_per_kgf * (t * 1.05) * (1000.0 / 60.0) \
        / ELECTRIC_FAN.energy_density
    assume(k < 1.0)
    assert battery_mass(w, t * 1.05, ELECTRIC_FAN) > m


@given(w=st.floats(0.1, 200.0), t=st.floats(0.01, 60.0))
def test_stored_mass_exceeds_naive_estimate(w, t):
    # lifting the storage itself always costs extra propellant
    try:
        full = fuel_mass(w, t, TURBOJET)
    except InfeasibleEndurance:
        assume(False)
    assert full > fuel_mass(w, t, TURBOJET, naive=True) * (1.0 - 1e-12)
