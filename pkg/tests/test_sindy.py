"""Monomial library and sequential-thresholded sparse regression."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import lstsq

from jetdyn.engine import PRESETS
from jetdyn.errors import (AllTermsEliminated, MissingDerivatives,
                           ShapeMismatch)
from jetdyn.filtering import SgConfig, savgol_derivatives
from jetdyn.simulation import (ExcitationSpec, Segment, SimConfig, TimeSeries,
                               gen_excitation, simulate)
from jetdyn.sindy import (LibrarySpec, SparseModel, build_library,
                          eval_sparse_model, monomial_exponents,
                          simulate_sparse, sparse_model_from_text,
                          sparse_model_to_text, stls)

P100 = PRESETS["p100rx-ekf"]

# monomials of the thrust law written as (T exponent, Td exponent, u exponent)
TRUE_SET = {(0, 0, 0), (1, 0, 0), (2, 0, 0), (0, 1, 0), (0, 2, 0), (1, 1, 0),
            (0, 0, 1), (0, 0, 2), (1, 0, 1), (1, 0, 2), (0, 1, 1), (0, 1, 2)}


def test_library_size_follows_count_law():
    # all monomials in 3 variables up to total degree d: C(d+3, 3)
    sizes = [len(monomial_exponents(LibrarySpec(max_total_degree=d)))
             for d in range(1, 7)]
    assert sizes == [4, 10, 20, 35, 56, 84]
    assert sizes == [math.comb(d + 3, 3) for d in range(1, 7)]


def test_library_contains_each_monomial_once():
    exps = monomial_exponents(LibrarySpec(max_total_degree=4))
    assert len(exps) == len(set(exps))
    assert all(i + j + k <= 4 for i, j, k in exps)
    assert (0, 0, 0) in exps


def test_default_library_covers_the_thrust_law():
    exps = set(monomial_exponents(LibrarySpec(max_total_degree=3)))
    assert TRUE_SET <= exps


def test_library_columns_evaluate_monomials():
    ts = TimeSeries(t=np.array([0.0, 0.1]), u=np.array([30.0, 60.0]),
                    T=np.array([2.0, 4.0]), T_dot=np.array([1.0, -1.0]),
                    T_ddot=np.array([0.5, 0.5]))
    spec = LibrarySpec(max_total_degree=2)
    theta, y = build_library(ts, spec)
    assert np.array_equal(y, ts.T_ddot)
    for col, (i, j, k) in enumerate(monomial_exponents(spec)):
        expect = ts.T ** i * ts.T_dot ** j * ts.u ** k
        assert np.allclose(theta[:, col], expect)


def test_build_library_requires_derivatives():
    t = np.arange(3) * 0.01
    ts = TimeSeries(t=t, u=np.zeros(3), T=np.zeros(3),
                    T_dot=None, T_ddot=None)
    with pytest.raises(MissingDerivatives):
        build_library(ts, LibrarySpec())


# --- toy second-order system ------------------------------------------------
#   x'' = -2 x - 0.5 x' + 0.8 w

TOY_COEF = {(1, 0, 0): -2.0, (0, 1, 0): -0.5, (0, 0, 1): 0.8}


def _toy_input(t):
    return (np.sin(2.0 * np.pi * 0.10 * t)
            + 0.7 * np.sin(2.0 * np.pi * 0.23 * t + 1.0)
            + 0.5 * np.sin(2.0 * np.pi * 0.37 * t + 2.2))


def _toy_run(duration=120.0, dt=0.01):
    n = int(duration / dt)
    t = np.arange(n) * dt
    w = _toy_input(t)
    x = np.empty(n)
    xd = np.empty(n)
    xdd = np.empty(n)
    xi, xdi = 0.0, 0.0

    def acc(a, b, c):
        return -2.0 * a - 0.5 * b + 0.8 * c

    for k in range(n):
        x[k], xd[k] = xi, xdi
        xdd[k] = acc(xi, xdi, w[k])
        h = dt
        k1 = (xdi, acc(xi, xdi, w[k]))
        k2 = (xdi + 0.5 * h * k1[1], acc(xi + 0.5 * h * k1[0],
                                         xdi + 0.5 * h * k1[1], w[k]))
        k3 = (xdi + 0.5 * h * k2[1], acc(xi + 0.5 * h * k2[0],
                                         xdi + 0.5 * h * k2[1], w[k]))
        k4 = (xdi + h * k3[1], acc(xi + h * k3[0], xdi + h * k3[1], w[k]))
        xi += h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        xdi += h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    return TimeSeries(t=t, u=w, T=x, T_dot=xd, T_ddot=xdd)


def test_stls_recovers_toy_system_exactly():
    ts = _toy_run()
    spec = LibrarySpec(max_total_degree=3)
    theta, y = build_library(ts, spec)
    model = stls(theta, y, threshold=0.1, exponents=monomial_exponents(spec))
    got = dict(model.active_terms())
    assert set(got) == set(TOY_COEF)
    for e, c in TOY_COEF.items():
        assert abs(got[e] - c) <= 1e-6


def test_stls_noisy_toy_monte_carlo():
    # sigma = 0.01 on the position channel, support and coefficients must
    # survive smoothing-based differentiation in at least 18 of 20 trials
    ts = _toy_run()
    hits = 0
    for trial in range(20):
        rng = np.random.default_rng(100 + trial)
        noisy = TimeSeries(t=ts.t, u=ts.u, T=ts.T + rng.normal(0, 0.01, ts.n),
                           T_dot=None, T_ddot=None)
        filt = savgol_derivatives(noisy, SgConfig(window=51, poly_order=3))
        spec = LibrarySpec(max_total_degree=3)
        theta, y = build_library(filt, spec)
        model = stls(theta, y, threshold=0.1,
                     exponents=monomial_exponents(spec))
        got = dict(model.active_terms())
        if set(got) != set(TOY_COEF):
            continue
        if all(abs(got[e] - c) / abs(c) < 0.05 for e, c in TOY_COEF.items()):
            hits += 1
    assert hits >= 18


def test_active_count_non_increasing_in_threshold():
    ts = _toy_run(duration=60.0)
    spec = LibrarySpec(max_total_degree=3)
    theta, y = build_library(ts, spec)
    counts = []
    for lam in np.linspace(0.01, 1.0, 10):
        try:
            m = stls(theta, y, threshold=float(lam),
                     exponents=monomial_exponents(spec))
            counts.append(m.n_active)
        except AllTermsEliminated:
            counts.append(0)
    assert all(b <= a for a, b in zip(counts, counts[1:]))


def test_stls_refit_is_unpenalized_on_survivors():
    # ridge only steers pruning; the returned coefficients must equal the
    # plain least-squares fit restricted to the surviving support
    ts = _toy_run(duration=60.0)
    spec = LibrarySpec(max_total_degree=3)
    theta, y = build_library(ts, spec)
    model = stls(theta, y, threshold=0.1,
                 exponents=monomial_exponents(spec), ridge=1e-3)
    mask = model.active
    direct, *_ = lstsq(theta[:, mask], y, lapack_driver="gelsy")
    assert np.allclose(model.coefficients[mask], direct, rtol=1e-10)
    assert np.all(model.coefficients[~mask] == 0.0)


def test_stls_rejects_negative_ridge():
    theta = np.ones((4, 1))
    with pytest.raises(ShapeMismatch):
        stls(theta, np.ones(4), threshold=0.1, ridge=-1.0)


def test_absurd_threshold_eliminates_everything():
    ts = _toy_run(duration=30.0)
    theta, y = build_library(ts, LibrarySpec(max_total_degree=2))
    with pytest.raises(AllTermsEliminated):
        stls(theta, y, threshold=1e9)


# --- sparse model as a dynamical system --------------------------------------

def _truth_model():
    exps = monomial_exponents(LibrarySpec(max_total_degree=3))
    coef = np.zeros(len(exps))
    p = P100
    truth = {(0, 0, 0): p.c, (1, 0, 0): p.K_T, (2, 0, 0): p.K_TT,
             (0, 1, 0): p.K_D, (0, 2, 0): p.K_DD, (1, 1, 0): p.K_TD,
             (0, 0, 1): p.B_U, (0, 0, 2): p.B_U * p.B_UU,
             (1, 0, 1): p.B_T, (1, 0, 2): p.B_T * p.B_UU,
             (0, 1, 1): p.B_D, (0, 1, 2): p.B_D * p.B_UU}
    for col, e in enumerate(exps):
        if e in truth:
            coef[col] = truth[e]
    active = coef != 0.0
    return SparseModel(exponents=exps, coefficients=coef, active=active,
                       threshold=0.0, residual_rms=0.0, iterations=0,
                       rank=int(np.sum(active)), condition_number=1.0)


def test_expanded_coefficients_reproduce_the_plant():
    model = _truth_model()
    for T, Td, u in ((10.0, 2.0, 40.0), (55.0, -8.0, 80.0), (0.0, 0.0, 25.0)):
        from jetdyn.engine import ThrustState, thrust_accel
        assert eval_sparse_model(model, T, Td, u) == \
            pytest.approx(thrust_accel(ThrustState(T, Td), u, P100),
                          rel=1e-12)


def test_sparse_simulation_matches_plant_integrator():
    model = _truth_model()
    u = gen_excitation(ExcitationSpec(segments=(
        Segment("hold", 2.0, 40.0),
        Segment("sine", 10.0, 55.0, amplitude=15.0, f_start=0.15),)), 0.01)
    ref = simulate(P100, u, SimConfig(dt=0.01, substeps=10))
    got = simulate_sparse(model, u, 0.01, T0=0.0, Td0=0.0, substeps=10)
    assert np.allclose(got, ref.series.T, atol=1e-9)


def test_sparse_model_text_round_trip():
    model = _truth_model()
    back = sparse_model_from_text(sparse_model_to_text(model))
    assert dict(back.active_terms()) == pytest.approx(
        dict(model.active_terms()))
    got = simulate_sparse(back, np.full(200, 50.0), 0.01)
    ref = simulate_sparse(model, np.full(200, 50.0), 0.01)
    assert np.array_equal(got, ref)


def test_simulate_sparse_needs_active_terms():
    exps = monomial_exponents(LibrarySpec(max_total_degree=1))
    empty = SparseModel(exponents=exps, coefficients=np.zeros(len(exps)),
                        active=np.zeros(len(exps), dtype=bool),
                        threshold=1.0, residual_rms=0.0, iterations=1,
                        rank=0, condition_number=float("inf"))
    with pytest.raises(AllTermsEliminated):
        simulate_sparse(empty, np.full(10, 50.0), 0.01)
