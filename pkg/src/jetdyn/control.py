"""Thrust-tracking controllers and the closed-loop test harness.

Both controllers cancel the model drift through the input gain and then
shape the error dynamics: feedback linearization places a PD law on the
tracking error, sliding mode drives a first-order error manifold with a
smoothed switching term (tanh boundary layer).  Commands go through the
inverse throttle map and saturate at the engine's throttle limits.

The closed loop runs at the sample rate with zero-order hold: each tick the
observer (a two-state Kalman filter on the thrust model) ingests the latest
measurement, the controller computes a throttle from the estimate, and the
plant integrates one interval under that throttle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .engine import (EngineSpec, InversionResult, JetParams, ThrustState,
                     drift, input_gain, invert_input_map)
from .errors import (EmptySpec, GainNotPositive, GNearZero, NonFiniteState,
                     ShapeMismatch)
from .filtering import EkfModel, EkfState, ekf_predict, ekf_update
from .grayid import augmented_jacobian, discrete_step
from .simulation import TimeSeries

__all__ = [
    "FlGains",
    "SmGains",
    "RefSample",
    "RefSegment",
    "Reference",
    "build_reference",
    "step_ramp_30_90",
    "REFERENCES",
    "Command",
    "fl_control",
    "sm_control",
    "observer_model",
    "LoopConfig",
    "ControlTrace",
    "TrackingReport",
    "closed_loop_sim",
    "tracking_accuracy",
    "write_trace_csv",
]


@dataclass(frozen=True)
class FlGains:
    """PD gains of the linearized error dynamics e'' + k_d e' + k_p e = 0."""

    k_p: float = 10.0
    k_d: float = 2.0 * math.sqrt(10.0)

    def __post_init__(self):
        if self.k_p <= 0.0 or self.k_d <= 0.0:
            raise GainNotPositive(f"FL gains must be positive, got {self}")


@dataclass(frozen=True)
class SmGains:
    """Sliding-mode gains: manifold slope a1, switching amplitude beta,
    tanh steepness k_slope (boundary layer ~ 2/k_slope in s-units)."""

    a1: float = 20.0
    beta: float = 900.0
    k_slope: float = 0.15

    def __post_init__(self):
        if self.a1 <= 0.0 or self.beta <= 0.0 or self.k_slope <= 0.0:
            raise GainNotPositive(f"SM gains must be positive, got {self}")


class RefSample(NamedTuple):
    """Reference thrust and its feedforward derivatives at one tick."""

    T_d: float
    T_dot_d: float
    T_ddot_d: float


@dataclass(frozen=True)
class RefSegment:
    """One piece of a tracking profile.

    hold and step keep `level` for `duration`; ramp moves linearly from the
    previous segment's end level to `level`.
    """

    kind: str
    level: float
    duration: float

    def __post_init__(self):
        if self.kind not in ("hold", "step", "ramp"):
            raise EmptySpec(f"unknown reference segment kind {self.kind!r}")
        if not self.duration > 0.0:
            raise EmptySpec("reference segment duration must be positive")


@dataclass
class Reference:
    """Sampled reference with per-tick segment ids for windowed metrics."""

    t: np.ndarray
    T_d: np.ndarray
    T_dot_d: np.ndarray
    T_ddot_d: np.ndarray
    segment_id: np.ndarray

    @property
    def n(self) -> int:
        return self.t.size

    def sample(self, k: int) -> RefSample:
        return RefSample(float(self.T_d[k]), float(self.T_dot_d[k]),
                         float(self.T_ddot_d[k]))


def build_reference(segments, dt: float, initial_level: float | None = None) -> Reference:
    """Sample a reference profile on a uniform grid.

    Derivative feedforward is analytic per segment (zero across step
    discontinuities).  A leading ramp needs initial_level to ramp from.
    """
    segments = tuple(segments)
    if not segments:
        raise EmptySpec("reference has no segments")
    t_parts, td_parts, tdot_parts, tddot_parts, seg_parts = [], [], [], [], []
    level = initial_level
    t0 = 0.0
    for idx, seg in enumerate(segments):
        n = int(round(seg.duration / dt))
        tau = np.arange(n) * dt
        if seg.kind == "ramp":
            if level is None:
                raise EmptySpec("leading ramp segment needs initial_level")
            slope = (seg.level - level) / seg.duration
            td = level + slope * tau
            tdot = np.full(n, slope)
        else:
            td = np.full(n, seg.level)
            tdot = np.zeros(n)
        t_parts.append(t0 + tau)
        td_parts.append(td)
        tdot_parts.append(tdot)
        tddot_parts.append(np.zeros(n))
        seg_parts.append(np.full(n, idx, dtype=int))
        t0 += n * dt
        level = seg.level
    return Reference(t=np.concatenate(t_parts), T_d=np.concatenate(td_parts),
                     T_dot_d=np.concatenate(tdot_parts),
                     T_ddot_d=np.concatenate(tddot_parts),
                     segment_id=np.concatenate(seg_parts))


def step_ramp_30_90() -> tuple[RefSegment, ...]:
    """Step/ramp profile spanning 30 to 90 N for controller studies."""
    return (
        RefSegment("hold", 30.0, 8.0),
        RefSegment("step", 60.0, 8.0),
        RefSegment("ramp", 90.0, 2.5),
        RefSegment("hold", 90.0, 8.0),
        RefSegment("step", 45.0, 8.0),
        RefSegment("ramp", 30.0, 4.0),
        RefSegment("hold", 30.0, 6.5),
    )


REFERENCES = {
    "step-ramp-30-90": step_ramp_30_90,
}


class Command(NamedTuple):
    """Controller output for one tick."""

    u: float
    v: float
    s: float                 # sliding variable; 0.0 for the FL law
    inversion: InversionResult


def _check_gain(g: float, g_min: float) -> None:
    if abs(g) <= g_min:
        raise GNearZero(f"input gain {g:.3g} within guard {g_min:.3g}")


def fl_control(ref: RefSample, est: ThrustState, p: JetParams,
               spec: EngineSpec, gains: FlGains = FlGains(),
               g_min: float = 1e-6) -> Command:
    """Feedback-linearizing tracking law.

    Cancels the drift and assigns e'' = -k_d e' - k_p e around the reference
    acceleration, then inverts the throttle map.  Raises GNearZero when the
    input gain is inside the guard band; the loop harness holds the previous
    throttle in that case.
    """
    f = drift(est, p)
    g = input_gain(est, p)
    _check_gain(g, g_min)
    e = ref.T_d - est.T
    e_dot = ref.T_dot_d - est.T_dot
    v = (ref.T_ddot_d + gains.k_p * e + gains.k_d * e_dot - f) / g
    inv = invert_input_map(v, p.B_UU, spec)
    return Command(u=inv.u, v=v, s=0.0, inversion=inv)


def sm_control(ref: RefSample, est: ThrustState, p: JetParams,
               spec: EngineSpec, gains: SmGains = SmGains(),
               g_min: float = 1e-6) -> Command:
    """Sliding-mode tracking law with a tanh boundary layer.

    The sliding variable is s = a1*(T - T_d) + (Td - Td_d); the law cancels
    the model drift on the manifold and adds -beta*tanh(k_slope*s) to drive
    the state onto it.
    """
    f = drift(est, p)
    g = input_gain(est, p)
    _check_gain(g, g_min)
    e = est.T - ref.T_d
    e_dot = est.T_dot - ref.T_dot_d
    s = gains.a1 * e + e_dot
    v = -(gains.a1 * e_dot + f - ref.T_ddot_d) / g \
        - gains.beta * math.tanh(gains.k_slope * s)
    inv = invert_input_map(v, p.B_UU, spec)
    return Command(u=inv.u, v=v, s=s, inversion=inv)


def observer_model(p: JetParams, dt: float) -> EkfModel:
    """Two-state thrust observer: the identification model with frozen
    parameters, measuring thrust only."""
    p_arr = p.as_array()

    def step(x, u):
        aug = np.concatenate((x, p_arr))
        return discrete_step(aug, u, dt)[:2]

    def jac(x, u):
        aug = np.concatenate((x, p_arr))
        return augmented_jacobian(aug, u, dt)[:2, :2]

    H = np.array([[1.0, 0.0]])
    return EkfModel(n_state=2, step=step, jacobian=jac,
                    measure=lambda x: x[:1], meas_jacobian=lambda x: H)


@dataclass(frozen=True)
class LoopConfig:
    """Closed-loop harness settings (100 Hz defaults)."""

    dt: float = 0.01
    substeps: int = 10                    # plant RK4 substeps per tick
    noise_variance: float = 0.0           # measurement noise, N^2
    rng_seed: int = 0
    initial_state: ThrustState = ThrustState(0.0, 0.0)
    g_min: float = 1e-6
    observer_q: tuple[float, float] = (1e-4, 1e-2)
    observer_r: float | None = None       # None: noise variance, floored at 1e-4
    observer_p0: tuple[float, float] = (10.0, 100.0)
    perfect_observer: bool = False        # feed true state to the controller
    band_pct: float = 5.0
    settle_s: float = 3.0

    def __post_init__(self):
        if self.dt <= 0.0 or self.substeps < 1:
            raise ShapeMismatch("dt must be positive and substeps >= 1")
        if self.noise_variance < 0.0:
            raise ShapeMismatch("noise variance must be non-negative")


@dataclass
class ControlTrace:
    """Per-tick record of a closed-loop run (matches the trace CSV)."""

    t: np.ndarray
    ref: np.ndarray
    T: np.ndarray            # true plant thrust
    T_est: np.ndarray        # observer estimate fed to the controller
    u: np.ndarray
    s: np.ndarray
    saturated: np.ndarray    # -1 low, 0 interior, +1 high


@dataclass
class TrackingReport:
    """Windowed tracking metrics for one closed-loop run."""

    band_pct: float
    settle_s: float
    occupancy: float                     # post-settle fraction inside the band
    segment_occupancy: list[float]       # per reference segment
    mean_abs_err: float                  # post-settle, N
    worst_abs_err: float                 # post-settle, N
    steady_state_err_pct: float          # post-settle mean of 100*|e|/|T_d|
    saturation_duty: float               # all-sample fraction with u clamped
    input_total_variation: float         # sum |u_k - u_{k-1}|, %
    persistent_error: bool               # some segment never entered the band
    g_guard_events: int

    def to_text(self) -> str:
        lines = [
            f"band_pct = {self.band_pct:.6g}",
            f"settle_s = {self.settle_s:.6g}",
            f"occupancy = {self.occupancy:.6g}",
            f"segment_occupancy = {','.join(f'{x:.6g}' for x in self.segment_occupancy)}",
            f"mean_abs_err = {self.mean_abs_err:.6g}",
            f"worst_abs_err = {self.worst_abs_err:.6g}",
            f"steady_state_err_pct = {self.steady_state_err_pct:.6g}",
            f"saturation_duty = {self.saturation_duty:.6g}",
            f"input_total_variation = {self.input_total_variation:.6g}",
            f"persistent_error = {int(self.persistent_error)}",
            f"g_guard_events = {self.g_guard_events}",
        ]
        return "\n".join(lines) + "\n"


def _plant_stepper(p: JetParams, dt: float, substeps: int):
    from .simulation import _jet_accel_fn

    accel = _jet_accel_fn(p)
    h = dt / substeps

    def advance(T: float, Td: float, u: float) -> tuple[float, float]:
        for _ in range(substeps):
            k1T = Td
            k1D = accel(T, Td, u)
            D2 = Td + 0.5 * h * k1D
            k2D = accel(T + 0.5 * h * k1T, D2, u)
            D3 = Td + 0.5 * h * k2D
            k3D = accel(T + 0.5 * h * D2, D3, u)
            D4 = Td + h * k3D
            k4D = accel(T + h * D3, D4, u)
            T = T + h / 6.0 * (k1T + 2.0 * D2 + 2.0 * D3 + D4)
            Td = Td + h / 6.0 * (k1D + 2.0 * k2D + 2.0 * k3D + k4D)
        return T, Td

    return advance


def closed_loop_sim(plant: JetParams, model: JetParams,
                    gains: FlGains | SmGains, ref: Reference,
                    spec: EngineSpec, cfg: LoopConfig = LoopConfig()
                    ) -> tuple[ControlTrace, TrackingReport]:
    """Run observer, controller and plant tick by tick over a reference.

    `plant` drives the simulated engine; `model` is what the observer and
    controller believe (pass the same params for matched-model studies).
    The controller is picked by the gains type.  GNearZero trips hold the
    previous throttle for that tick and are counted in the report.
    """
    n = ref.n
    if n == 0:
        raise EmptySpec("empty reference")
    dt = cfg.dt
    is_sm = isinstance(gains, SmGains)
    advance = _plant_stepper(plant, dt, cfg.substeps)
    rng = np.random.default_rng(cfg.rng_seed)
    noise_std = math.sqrt(cfg.noise_variance)

    obs = observer_model(model, dt)
    Q = np.diag(cfg.observer_q)
    r_var = cfg.observer_r if cfg.observer_r is not None \
        else max(cfg.noise_variance, 1e-4)
    R = np.array([[r_var]])

    T = float(cfg.initial_state.T)
    Td = float(cfg.initial_state.T_dot)
    u_prev = spec.throttle_min
    est: EkfState | None = None

    t_out = np.arange(n) * dt
    T_out = np.empty(n)
    Test_out = np.empty(n)
    u_out = np.empty(n)
    s_out = np.empty(n)
    sat_out = np.zeros(n, dtype=int)
    g_guard_events = 0

    for k in range(n):
        if not (math.isfinite(T) and math.isfinite(Td)):
            raise NonFiniteState(f"plant state not finite at tick {k}", index=k)
        z = T + (noise_std * rng.standard_normal() if noise_std > 0.0 else 0.0)
        if cfg.perfect_observer:
            est_state = ThrustState(T, Td)
        else:
            if est is None:
                est = EkfState(x=np.array([z, 0.0]), P=np.diag(cfg.observer_p0))
            else:
                est = ekf_predict(est, obs, u_prev, Q)
                est = ekf_update(est, obs, np.array([z]), R)
            est_state = ThrustState(float(est.x[0]), float(est.x[1]))

        try:
            if is_sm:
                cmd = sm_control(ref.sample(k), est_state, model, spec, gains,
                                 cfg.g_min)
            else:
                cmd = fl_control(ref.sample(k), est_state, model, spec, gains,
                                 cfg.g_min)
            u_k = cmd.u
            s_k = cmd.s
            sat_k = cmd.inversion.saturation
        except GNearZero:
            g_guard_events += 1
            u_k = u_prev
            s_k = 0.0
            sat_k = 0

        T_out[k] = T
        Test_out[k] = est_state.T
        u_out[k] = u_k
        s_out[k] = s_k
        sat_out[k] = sat_k

        T, Td = advance(T, Td, u_k)
        u_prev = u_k

    trace = ControlTrace(t=t_out, ref=ref.T_d.copy(), T=T_out, T_est=Test_out,
                         u=u_out, s=s_out, saturated=sat_out)
    report = tracking_accuracy(trace, ref, band_pct=cfg.band_pct,
                               settle_s=cfg.settle_s,
                               g_guard_events=g_guard_events)
    return trace, report


def tracking_accuracy(trace: ControlTrace, ref: Reference,
                      band_pct: float = 5.0, settle_s: float = 3.0,
                      g_guard_events: int = 0) -> TrackingReport:
    """Band-occupancy and effort metrics over a closed-loop trace.

    Each reference segment gets a settle window: samples within settle_s of
    the segment start are excluded from the error metrics (saturation duty
    and input variation still count every sample).  A segment with scored
    samples none of which ever enter the band marks the run as having a
    persistent error.
    """
    n = trace.t.size
    if ref.n != n:
        raise ShapeMismatch(f"trace has {n} ticks, reference {ref.n}")
    err = np.abs(trace.T - ref.T_d)
    band = band_pct / 100.0 * np.abs(ref.T_d)
    inside = err <= band

    seg_ids = np.unique(ref.segment_id)
    post_settle = np.zeros(n, dtype=bool)
    segment_occupancy: list[float] = []
    persistent = False
    for sid in seg_ids:
        mask = ref.segment_id == sid
        t_start = trace.t[mask][0]
        scored = mask & (trace.t - t_start >= settle_s)
        post_settle |= scored
        if scored.any():
            occ = float(np.mean(inside[scored]))
            segment_occupancy.append(occ)
            if occ == 0.0:
                persistent = True
        else:
            segment_occupancy.append(math.nan)

    if post_settle.any():
        occupancy = float(np.mean(inside[post_settle]))
        mean_abs = float(np.mean(err[post_settle]))
        worst = float(np.max(err[post_settle]))
        denom = np.maximum(np.abs(ref.T_d[post_settle]), 1e-9)
        ss_pct = float(np.mean(err[post_settle] / denom) * 100.0)
    else:
        occupancy = mean_abs = worst = ss_pct = math.nan

    duty = float(np.mean(trace.saturated != 0))
    tv = float(np.sum(np.abs(np.diff(trace.u))))
    return TrackingReport(band_pct=band_pct, settle_s=settle_s,
                          occupancy=occupancy,
                          segment_occupancy=segment_occupancy,
                          mean_abs_err=mean_abs, worst_abs_err=worst,
                          steady_state_err_pct=ss_pct, saturation_duty=duty,
                          input_total_variation=tv,
                          persistent_error=persistent,
                          g_guard_events=g_guard_events)


def write_trace_csv(path, trace: ControlTrace) -> None:
    """Write a closed-loop trace with shortest round-trip floats."""
    cols = [trace.t, trace.ref, trace.T, trace.T_est, trace.u, trace.s]
    lists = [c.tolist() for c in cols]
    sat = trace.saturated.tolist()
    with open(path, "w") as fh:
        fh.write("time_s,ref_n,thrust_n,thrust_est_n,throttle_pct,s_value,saturated\n")
        for row, sk in zip(zip(*lists), sat):
            fh.write(",".join(repr(x) for x in row) + f",{int(sk)}\n")
