"""Thrust-dynamics model: presets, drift/gain algebra, throttle map,
equilibria, parameter file format."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jetdyn.engine import (ENGINES, PRESET_ENGINE, PRESETS, EngineSpec,
                           JetParams, ThrustState, drift, equilibrium_thrust,
                           input_gain, input_map, invert_input_map,
                           params_from_text, params_to_text, thrust_accel)
from jetdyn.errors import MalformedFile, NoEquilibriumInBracket

P100 = PRESETS["p100rx-ekf"]
P220 = PRESETS["p220rxi-ekf"]
SPEC100 = ENGINES["p100rx"]
SPEC220 = ENGINES["p220rxi"]


def test_p100_ekf_coefficients_frozen():
    assert P100.K_T == -1.460
    assert P100.K_TT == -0.059
    assert P100.K_D == -2.430
    assert P100.K_DD == 0.0787
    assert P100.K_TD == 0.1188
    assert P100.c == -19.92
    assert P100.B_U == 0.4317
    assert P100.B_T == 0.0116
    assert P100.B_D == -0.026
    assert P100.B_UU == 0.0314


def test_all_presets_have_an_engine_envelope():
    assert set(PRESET_ENGINE) == set(PRESETS)
    for name, engine in PRESET_ENGINE.items():
        assert engine in ENGINES


def test_engine_envelopes():
    assert SPEC100.max_thrust == 100.0
    assert SPEC220.max_thrust == 220.0
    assert SPEC100.throttle_min == 25.0
    assert SPEC100.throttle_max == 100.0


def test_acceleration_written_out_by_hand():
    # second-order law at T=30, Td=5, u=60 with the P100 set
    T, Td, u = 30.0, 5.0, 60.0
    f = (-1.460 * T - 0.059 * T * T - 2.430 * Td + 0.0787 * Td * Td
         + 0.1188 * T * Td - 19.92)
    g = 0.4317 + 0.0116 * T - 0.026 * Td
    v = u + 0.0314 * u * u
    assert thrust_accel(ThrustState(T, Td), u, P100) == \
        pytest.approx(f + g * v, rel=1e-14)
    assert drift(ThrustState(T, Td), P100) == pytest.approx(f, rel=1e-14)
    assert input_gain(ThrustState(T, Td), P100) == pytest.approx(g, rel=1e-14)


def test_input_map_quadratic():
    assert input_map(60.0, 0.0314) == pytest.approx(60.0 + 0.0314 * 3600.0)
    assert input_map(25.0, 0.0) == 25.0


@given(u=st.floats(25.0, 100.0))
def test_input_map_monotone_over_throttle_range(u):
    for p in (P100, P220):
        eps = 1e-6
        assert input_map(u + eps, p.B_UU) > input_map(u, p.B_UU)


@given(u=st.floats(25.0, 100.0),
       preset=st.sampled_from(["p100rx-ekf", "p220rxi-ekf", "p100rx-ls"]))
def test_input_map_round_trip(u, preset):
    # every preset with positive curvature is monotone over the throttle
    # range, so inversion is exact
    p = PRESETS[preset]
    spec = ENGINES[PRESET_ENGINE[preset]]
    v = input_map(u, p.B_UU)
    inv = invert_input_map(v, p.B_UU, spec)
    assert inv.saturation == 0
    assert not inv.discriminant_negative
    assert abs(inv.u - u) <= 1e-9


def test_folded_map_inverts_to_lower_branch():
    # the p220 batch fit has negative curvature: its throttle map peaks at
    # u = 33.3 and folds, so above-vertex commands alias to the rising
    # branch and exact round trip is impossible by construction
    p = PRESETS["p220rxi-ls"]
    assert p.B_UU < 0.0
    v = input_map(40.0, p.B_UU)
    inv = invert_input_map(v, p.B_UU, SPEC220)
    assert inv.u < 40.0
    assert input_map(inv.u, p.B_UU) == pytest.approx(v, abs=1e-9)


def test_inversion_saturates_at_both_rails():
    v_hi = input_map(100.0, P100.B_UU)
    inv = invert_input_map(v_hi * 1.5, P100.B_UU, SPEC100)
    assert inv.u == 100.0
    assert inv.saturation == +1
    v_lo = input_map(25.0, P100.B_UU)
    inv = invert_input_map(v_lo - 10.0, P100.B_UU, SPEC100)
    assert inv.u == 25.0
    assert inv.saturation == -1


def test_inversion_flags_negative_discriminant():
    # u + b*u^2 = v has no real root when v < -1/(4b)
    b = 0.0314
    inv = invert_input_map(-1.0 / (4.0 * b) - 5.0, b, SPEC100)
    assert inv.discriminant_negative
    assert inv.u == SPEC100.throttle_min


def test_inversion_linear_when_b_uu_zero():
    inv = invert_input_map(60.0, 0.0, SPEC100)
    assert inv.u == pytest.approx(60.0)


def test_equilibrium_balances_the_model():
    for u in (30.0, 50.0, 75.0, 100.0):
        T_eq = equilibrium_thrust(u, P100, SPEC100)
        assert thrust_accel(ThrustState(T_eq, 0.0), u, P100) == \
            pytest.approx(0.0, abs=1e-7)


def test_equilibrium_monotone_in_throttle():
    levels = [equilibrium_thrust(u, P100, SPEC100)
              for u in np.linspace(25.0, 100.0, 16)]
    assert all(b > a for a, b in zip(levels, levels[1:]))


def test_idle_equilibrium_is_slightly_negative():
    # the fitted affine model dips below zero at the 25 % floor; the
    # saturation study leans on this
    T_idle = equilibrium_thrust(25.0, P100, SPEC100)
    assert -3.0 < T_idle < 0.0


def test_equilibrium_requires_a_sign_change():
    with pytest.raises(NoEquilibriumInBracket):
        equilibrium_thrust(50.0, P100, SPEC100, bracket=(200.0, 300.0))


def test_params_text_round_trip():
    text = params_to_text(P220)
    back = params_from_text(text)
    assert back == P220


@given(st.lists(st.floats(-50.0, 50.0), min_size=10, max_size=10))
def test_params_round_trip_arbitrary_values(vals):
    p = JetParams(*vals)
    assert params_from_text(params_to_text(p)) == p


def test_params_text_rejects_unknown_key():
    text = params_to_text(P100) + "K_X = 1.0\n"
    with pytest.raises(MalformedFile):
        params_from_text(text)


def test_params_text_rejects_duplicate_key():
    text = params_to_text(P100) + "K_T = 0.0\n"
    with pytest.raises(MalformedFile):
        params_from_text(text)


def test_params_text_rejects_missing_key():
    lines = params_to_text(P100).splitlines()
    with pytest.raises(MalformedFile):
        params_from_text("\n".join(lines[:-1]))


def test_params_text_reports_offending_line():
    with pytest.raises(MalformedFile) as exc:
        params_from_text("K_T = -1.0\nnot a pair\n")
    assert exc.value.line == 2


def test_as_array_order_matches_text_format():
    arr = P100.as_array()
    keys = [ln.split("=")[0].strip() for ln in
            params_to_text(P100).splitlines() if "=" in ln]
    for k, a in zip(keys, arr):
        assert getattr(P100, k) == a


def test_save_load_params(tmp_path):
    from jetdyn.engine import load_params, save_params

    path = tmp_path / "fit.params"
    save_params(path, P100)
    assert load_params(path) == P100
