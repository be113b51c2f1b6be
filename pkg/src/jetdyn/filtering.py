"""Smoothing, differentiation and extended Kalman filtering.

Two independent tools live here.  savgol_derivatives turns a noisy thrust
record into smoothed thrust plus first and second derivatives by local
polynomial fitting, which is what the batch identifiers regress on.
ekf_predict / ekf_update implement one step of a discrete extended Kalman
filter against a caller-supplied model; the covariance update uses the
Joseph form and re-symmetrization so the covariance stays symmetric positive
semidefinite over long runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.signal import savgol_filter

from .errors import (OrderTooHigh, ShapeMismatch, SingularInnovation,
                     WindowTooLarge)
from .simulation import TimeSeries

__all__ = [
    "SgConfig",
    "savgol_derivatives",
    "EkfModel",
    "EkfState",
    "ekf_predict",
    "ekf_update",
    "numerical_jacobian",
]


@dataclass(frozen=True)
class SgConfig:
    """Savitzky-Golay smoother settings.

    The defaults (51-sample window, cubic fit) suit 100 Hz thrust data with
    a few N of measurement noise: half a second of support, wide enough to
    tame second-derivative noise without flattening the turbine dynamics.
    """

    window: int = 51
    poly_order: int = 3

    def __post_init__(self):
        if self.poly_order < 2:
            raise OrderTooHigh("poly_order must be >= 2 to give second derivatives")
        if self.window % 2 == 0 or self.window < self.poly_order + 2:
            raise OrderTooHigh(
                f"window must be odd and >= poly_order + 2, got "
                f"window={self.window}, poly_order={self.poly_order}")


def savgol_derivatives(ts: TimeSeries, cfg: SgConfig = SgConfig()) -> TimeSeries:
    """Smoothed thrust and its first two derivatives from a noisy record.

    Each output sample is the 0th/1st/2nd derivative of the least-squares
    polynomial fitted over the window centred there; near the edges the fit
    uses the one-sided end window and is evaluated at the edge sample, so the
    output has the same length as the input.  Polynomials up to poly_order
    are reproduced exactly, edges included.
    """
    if ts.n < cfg.window:
        raise WindowTooLarge(
            f"window {cfg.window} exceeds the {ts.n} available samples")
    dt = ts.dt
    smoothed = savgol_filter(ts.T, cfg.window, cfg.poly_order, deriv=0,
                             delta=dt, mode="interp")
    d1 = savgol_filter(ts.T, cfg.window, cfg.poly_order, deriv=1,
                       delta=dt, mode="interp")
    d2 = savgol_filter(ts.T, cfg.window, cfg.poly_order, deriv=2,
                       delta=dt, mode="interp")
    return TimeSeries(t=ts.t.copy(), u=ts.u.copy(), T=smoothed,
                      T_dot=d1, T_ddot=d2)


@dataclass(frozen=True)
class EkfModel:
    """Discrete-time model the filter steps against.

    step(x, u)     state transition x_{k+1}
    jacobian(x, u) its Jacobian wrt x, (n, n)
    measure(x)     measurement prediction, (m,)
    meas_jacobian(x) measurement Jacobian, (m, n)
    """

    n_state: int
    step: Callable[[np.ndarray, float], np.ndarray]
    jacobian: Callable[[np.ndarray, float], np.ndarray]
    measure: Callable[[np.ndarray], np.ndarray]
    meas_jacobian: Callable[[np.ndarray], np.ndarray]


@dataclass
class EkfState:
    """Filter mean and covariance."""

    x: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).ravel()
        self.P = np.asarray(self.P, dtype=float)
        n = self.x.size
        if self.P.shape != (n, n):
            raise ShapeMismatch(f"P has shape {self.P.shape}, expected ({n}, {n})")


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def ekf_predict(state: EkfState, model: EkfModel, u: float,
                Q: np.ndarray) -> EkfState:
    """Propagate mean through the model and covariance through its Jacobian."""
    Q = np.asarray(Q, dtype=float)
    n = state.x.size
    if Q.shape != (n, n):
        raise ShapeMismatch(f"Q has shape {Q.shape}, expected ({n}, {n})")
    x_pred = np.asarray(model.step(state.x, u), dtype=float).ravel()
    if x_pred.size != n:
        raise ShapeMismatch(f"model.step returned {x_pred.size} states, expected {n}")
    F = np.asarray(model.jacobian(state.x, u), dtype=float)
    if F.shape != (n, n):
        raise ShapeMismatch(f"model.jacobian has shape {F.shape}, expected ({n}, {n})")
    P_pred = _symmetrize(F @ state.P @ F.T + Q)
    return EkfState(x=x_pred, P=P_pred)


def ekf_update(state: EkfState, model: EkfModel, z: np.ndarray,
               R: np.ndarray) -> EkfState:
    """Joseph-form measurement update.

    P <- (I - K H) P (I - K H)^T + K R K^T keeps the covariance PSD even
    with a suboptimal or rounded gain.  Raises SingularInnovation when the
    innovation covariance cannot be factorized.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    H = np.atleast_2d(np.asarray(model.meas_jacobian(state.x), dtype=float))
    m, n = H.shape
    if n != state.x.size:
        raise ShapeMismatch(f"H has {n} columns, expected {state.x.size}")
    if z.size != m or R.shape != (m, m):
        raise ShapeMismatch(
            f"measurement size {z.size} and R shape {R.shape} do not match H")
    innovation = z - np.atleast_1d(np.asarray(model.measure(state.x), dtype=float))
    S = H @ state.P @ H.T + R
    try:
        K = np.linalg.solve(S, H @ state.P).T
    except np.linalg.LinAlgError as exc:
        raise SingularInnovation(f"innovation covariance is singular: {exc}") from exc
    if not np.all(np.isfinite(K)):
        raise SingularInnovation("innovation solve produced non-finite gain")
    x_new = state.x + K @ innovation
    I_KH = np.eye(state.x.size) - K @ H
    P_new = _symmetrize(I_KH @ state.P @ I_KH.T + K @ R @ K.T)
    return EkfState(x=x_new, P=P_new)


def numerical_jacobian(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                       eps: float = 1e-6) -> np.ndarray:
    """Central finite-difference Jacobian, used to validate analytic ones."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(np.asarray(fn(x), dtype=float))
    J = np.empty((f0.size, x.size))
    for j in range(x.size):
        step = eps * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += step
        xm[j] -= step
        J[:, j] = (np.atleast_1d(fn(xp)) - np.atleast_1d(fn(xm))) / (2.0 * step)
    return J
