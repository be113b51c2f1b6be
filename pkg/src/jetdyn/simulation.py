"""Synthetic test-bench: excitation signals, plant integration, dataset IO.

The plant is integrated with classical RK4 at a configurable number of
substeps per sample interval while the throttle is held constant across each
interval (zero-order hold), mirroring how a real bench logs at a fixed rate.
Identification code elsewhere in the package discretizes the model with a
truncated Taylor scheme instead, so simulated data never share the
identifier's discretization.

Datasets move through CSV files with columns time_s, throttle_pct, thrust_n
and optional thrust_dot, thrust_ddot; floats are written with shortest
round-trip precision so a reread is bit-exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .engine import PARAM_KEYS, JetParams, ThrustState
from .errors import EmptySpec, MalformedFile, NonFiniteState, ShapeMismatch

__all__ = [
    "Segment",
    "ExcitationSpec",
    "TimeSeries",
    "SimConfig",
    "SimResult",
    "ConditionReport",
    "gen_excitation",
    "simulate",
    "simulate_accel",
    "excitation_rank_check",
    "write_timeseries_csv",
    "read_timeseries_csv",
    "p100_campaign",
    "structure_campaign",
    "CAMPAIGNS",
]

SEGMENT_KINDS = ("hold", "step", "ramp", "sine", "chirp")


@dataclass(frozen=True)
class Segment:
    """One piece of an excitation profile.

    kind      one of hold, step, ramp, sine, chirp
    duration  seconds, > 0
    offset    base throttle level (%); ramps start here
    amplitude sine/chirp amplitude, or the ramp's total level change
    f_start   sine frequency, or chirp start frequency (Hz)
    f_end     chirp end frequency (Hz)
    """

    kind: str
    duration: float
    offset: float
    amplitude: float = 0.0
    f_start: float = 0.0
    f_end: float = 0.0

    def __post_init__(self):
        if self.kind not in SEGMENT_KINDS:
            raise EmptySpec(f"unknown segment kind {self.kind!r}")
        if not self.duration > 0.0:
            raise EmptySpec(f"segment duration must be positive, got {self.duration}")


@dataclass(frozen=True)
class ExcitationSpec:
    """Ordered list of excitation segments."""

    segments: tuple[Segment, ...]

    def __post_init__(self):
        if len(self.segments) == 0:
            raise EmptySpec("excitation spec has no segments")
        object.__setattr__(self, "segments", tuple(self.segments))

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.segments)


def _segment_samples(seg: Segment, dt: float) -> np.ndarray:
    n = int(round(seg.duration / dt))
    tau = np.arange(n) * dt
    if seg.kind in ("hold", "step"):
        return np.full(n, seg.offset)
    if seg.kind == "ramp":
        return seg.offset + seg.amplitude * (tau / seg.duration)
    if seg.kind == "sine":
        return seg.offset + seg.amplitude * np.sin(2.0 * math.pi * seg.f_start * tau)
    # chirp with linearly swept instantaneous frequency f_start -> f_end
    phase = 2.0 * math.pi * (seg.f_start * tau
                             + (seg.f_end - seg.f_start) * tau * tau / (2.0 * seg.duration))
    return seg.offset + seg.amplitude * np.sin(phase)


def gen_excitation(spec: ExcitationSpec, dt: float,
                   throttle_range: tuple[float, float] = (25.0, 100.0)) -> np.ndarray:
    """Sample an excitation profile on a uniform grid.

    Segments are left-closed: the sample at a segment boundary belongs to
    the new segment.  Each segment contributes round(duration/dt) samples, so
    boundary placement is exact regardless of float accumulation.  The result
    is clamped to the throttle range sample by sample.
    """
    if dt <= 0.0:
        raise ShapeMismatch(f"dt must be positive, got {dt}")
    parts = [_segment_samples(seg, dt) for seg in spec.segments]
    u = np.concatenate(parts) if parts else np.empty(0)
    if u.size == 0:
        raise EmptySpec("excitation spec produced no samples")
    return np.clip(u, throttle_range[0], throttle_range[1])


@dataclass
class TimeSeries:
    """Uniformly sampled throttle/thrust record.

    t is seconds, u throttle %, T thrust N.  T_dot and T_ddot are optional
    derivative columns (N/s, N/s^2), present on filtered datasets and on
    noiseless truth traces.
    """

    t: np.ndarray
    u: np.ndarray
    T: np.ndarray
    T_dot: np.ndarray | None = None
    T_ddot: np.ndarray | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        self.T = np.asarray(self.T, dtype=float)
        n = self.t.size
        for name in ("u", "T"):
            if getattr(self, name).size != n:
                raise ShapeMismatch(f"column {name} has {getattr(self, name).size} "
                                    f"samples, expected {n}")
        for name in ("T_dot", "T_ddot"):
            col = getattr(self, name)
            if col is not None:
                col = np.asarray(col, dtype=float)
                setattr(self, name, col)
                if col.size != n:
                    raise ShapeMismatch(f"column {name} has {col.size} samples, "
                                        f"expected {n}")
        if n >= 2:
            steps = np.diff(self.t)
            dt = steps[0]
            if dt <= 0 or np.any(np.abs(steps - dt) > 1e-9 * max(1.0, abs(dt))):
                raise ShapeMismatch("time grid is not uniform")

    @property
    def n(self) -> int:
        return self.t.size

    @property
    def dt(self) -> float:
        if self.t.size < 2:
            raise ShapeMismatch("need at least two samples to define dt")
        return float(self.t[1] - self.t[0])


@dataclass(frozen=True)
class SimConfig:
    """Integration and measurement settings for the synthetic bench."""

    dt: float = 0.01             # sample interval, s (100 Hz bench rate)
    substeps: int = 10           # RK4 substeps per sample interval
    noise_variance: float = 0.0  # measurement noise on thrust, N^2
    rng_seed: int = 0
    initial_state: ThrustState = ThrustState(0.0, 0.0)

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ShapeMismatch(f"dt must be positive, got {self.dt}")
        if self.substeps < 1:
            raise ShapeMismatch(f"substeps must be >= 1, got {self.substeps}")
        if self.noise_variance < 0.0:
            raise ShapeMismatch("noise variance must be non-negative")


@dataclass
class SimResult:
    """Measured series plus the noiseless truth trace kept for oracles."""

    series: TimeSeries
    truth: TimeSeries


def _param_floats(p: JetParams) -> tuple[float, ...]:
    return tuple(float(getattr(p, k)) for k in PARAM_KEYS)


def _jet_accel_fn(p: JetParams):
    K_T, K_TT, K_D, K_DD, K_TD, c, B_U, B_T, B_D, B_UU = _param_floats(p)

    def accel(T: float, Td: float, u: float) -> float:
        v = u + B_UU * u * u
        return (K_T * T + K_TT * T * T + K_D * Td + K_DD * Td * Td
                + K_TD * T * Td + c + (B_U + B_T * T + B_D * Td) * v)

    return accel


def simulate_accel(accel, u: np.ndarray, cfg: SimConfig) -> SimResult:
    """Integrate Tdd = accel(T, Td, u) under zero-order-hold input.

    accel is any callable of (T, Td, u_percent); this is how sparse
    identified models are resimulated.  Returns measured and truth traces;
    the truth trace carries exact T_dot and T_ddot columns.

    Raises NonFiniteState (with the first bad sample index) on divergence.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or u.size == 0:
        raise ShapeMismatch("u must be a non-empty 1-D array")
    n = u.size
    dt, nsub = cfg.dt, cfg.substeps
    h = dt / nsub

    T = float(cfg.initial_state.T)
    Td = float(cfg.initial_state.T_dot)

    T_out = np.empty(n)
    Td_out = np.empty(n)
    Tdd_out = np.empty(n)
    u_list = u.tolist()

    for k in range(n):
        uk = u_list[k]
        if not (math.isfinite(T) and math.isfinite(Td)):
            raise NonFiniteState(f"state not finite at sample {k}", index=k)
        T_out[k] = T
        Td_out[k] = Td
        Tdd_out[k] = accel(T, Td, uk)
        for _ in range(nsub):
            k1T = Td
            k1D = accel(T, Td, uk)
            T2 = T + 0.5 * h * k1T
            D2 = Td + 0.5 * h * k1D
            k2T = D2
            k2D = accel(T2, D2, uk)
            T3 = T + 0.5 * h * k2T
            D3 = Td + 0.5 * h * k2D
            k3T = D3
            k3D = accel(T3, D3, uk)
            T4 = T + h * k3T
            D4 = Td + h * k3D
            k4T = D4
            k4D = accel(T4, D4, uk)
            T = T + h / 6.0 * (k1T + 2.0 * k2T + 2.0 * k3T + k4T)
            Td = Td + h / 6.0 * (k1D + 2.0 * k2D + 2.0 * k3D + k4D)

    t = np.arange(n) * dt
    truth = TimeSeries(t=t, u=u.copy(), T=T_out, T_dot=Td_out, T_ddot=Tdd_out)
    if cfg.noise_variance > 0.0:
        rng = np.random.default_rng(cfg.rng_seed)
        noise = math.sqrt(cfg.noise_variance) * rng.standard_normal(n)
        measured_T = T_out + noise
    else:
        measured_T = T_out.copy()
    series = TimeSeries(t=t.copy(), u=u.copy(), T=measured_T)
    return SimResult(series=series, truth=truth)


@njit(cache=True)
def _rk4_jet(u, dt, nsub, T0, Td0, cf):  # pragma: no cover
    """RK4 sweep specialized to the ten-coefficient model.

    Arithmetic matches simulate_accel step for step, so the two paths agree
    to rounding; this one exists because campaign-scale runs are three
    orders of magnitude longer than the generic interpreter loop can afford.
    Returns (T, T_dot, T_ddot, index of first non-finite sample or -1).
    """
    n = u.shape[0]
    h = dt / nsub
    T_out = np.empty(n)
    Td_out = np.empty(n)
    Tdd_out = np.empty(n)
    K_T, K_TT, K_D, K_DD, K_TD, c, B_U, B_T, B_D, B_UU = \
        cf[0], cf[1], cf[2], cf[3], cf[4], cf[5], cf[6], cf[7], cf[8], cf[9]
    T = T0
    Td = Td0
    for k in range(n):
        uk = u[k]
        if not (np.isfinite(T) and np.isfinite(Td)):
            return T_out, Td_out, Tdd_out, k
        v = uk + B_UU * uk * uk
        T_out[k] = T
        Td_out[k] = Td
        Tdd_out[k] = (K_T * T + K_TT * T * T + K_D * Td + K_DD * Td * Td
                      + K_TD * T * Td + c + (B_U + B_T * T + B_D * Td) * v)
        for _ in range(nsub):
            k1T = Td
            k1D = (K_T * T + K_TT * T * T + K_D * Td + K_DD * Td * Td
                   + K_TD * T * Td + c + (B_U + B_T * T + B_D * Td) * v)
            T2 = T + 0.5 * h * k1T
            D2 = Td + 0.5 * h * k1D
            k2T = D2
            k2D = (K_T * T2 + K_TT * T2 * T2 + K_D * D2 + K_DD * D2 * D2
                   + K_TD * T2 * D2 + c + (B_U + B_T * T2 + B_D * D2) * v)
            T3 = T + 0.5 * h * k2T
            D3 = Td + 0.5 * h * k2D
            k3T = D3
            k3D = (K_T * T3 + K_TT * T3 * T3 + K_D * D3 + K_DD * D3 * D3
                   + K_TD * T3 * D3 + c + (B_U + B_T * T3 + B_D * D3) * v)
            T4 = T + h * k3T
            D4 = Td + h * k3D
            k4T = D4
            k4D = (K_T * T4 + K_TT * T4 * T4 + K_D * D4 + K_DD * D4 * D4
                   + K_TD * T4 * D4 + c + (B_U + B_T * T4 + B_D * D4) * v)
            T = T + h / 6.0 * (k1T + 2.0 * k2T + 2.0 * k3T + k4T)
            Td = Td + h / 6.0 * (k1D + 2.0 * k2D + 2.0 * k3D + k4D)
    return T_out, Td_out, Tdd_out, -1


def simulate(p: JetParams, u: np.ndarray, cfg: SimConfig) -> SimResult:
    """Integrate the jet model for a recorded throttle sequence.

    Dispatches to a compiled sweep of the same RK4/zero-order-hold scheme
    simulate_accel uses; the test suite pins the two paths against each
    other.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or u.size == 0:
        raise ShapeMismatch("u must be a non-empty 1-D array")
    T_out, Td_out, Tdd_out, bad = _rk4_jet(
        np.ascontiguousarray(u), cfg.dt, cfg.substeps,
        float(cfg.initial_state.T), float(cfg.initial_state.T_dot),
        p.as_array())
    if bad >= 0:
        raise NonFiniteState(f"state not finite at sample {bad}", index=int(bad))
    n = u.size
    t = np.arange(n) * cfg.dt
    truth = TimeSeries(t=t, u=u.copy(), T=T_out, T_dot=Td_out, T_ddot=Tdd_out)
    if cfg.noise_variance > 0.0:
        rng = np.random.default_rng(cfg.rng_seed)
        noise = math.sqrt(cfg.noise_variance) * rng.standard_normal(n)
        measured_T = T_out + noise
    else:
        measured_T = T_out.copy()
    series = TimeSeries(t=t.copy(), u=u.copy(), T=measured_T)
    return SimResult(series=series, truth=truth)


@dataclass(frozen=True)
class ConditionReport:
    """Numerical conditioning of a regression matrix."""

    n_columns: int
    rank: int
    condition_number: float
    singular_max: float
    singular_min: float
    threshold: float

    @property
    def exciting(self) -> bool:
        return self.rank == self.n_columns


def excitation_rank_check(theta: np.ndarray,
                          rel_threshold: float = 1e-10) -> ConditionReport:
    """Rank and conditioning of a regression matrix via SVD.

    Singular values above rel_threshold * sigma_max count toward the rank.
    A dataset is exciting for a library when the report's rank equals the
    column count.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 2 or theta.size == 0:
        raise ShapeMismatch("regression matrix must be 2-D and non-empty")
    sv = np.linalg.svd(theta, compute_uv=False)
    smax = float(sv[0])
    smin = float(sv[-1])
    cutoff = rel_threshold * smax
    rank = int(np.sum(sv > cutoff))
    cond = math.inf if smin == 0.0 else smax / smin
    return ConditionReport(n_columns=theta.shape[1], rank=rank,
                           condition_number=cond, singular_max=smax,
                           singular_min=smin, threshold=cutoff)


def _campaign_intro() -> list[Segment]:
    return [
        Segment("hold", 12.0, 25.0),
        Segment("step", 11.0, 40.0),
        Segment("step", 11.0, 55.0),
        Segment("step", 11.0, 70.0),
        Segment("step", 11.0, 85.0),
        Segment("ramp", 6.0, 85.0, amplitude=15.0),
        Segment("step", 10.0, 100.0),
        Segment("sine", 20.0, 88.0, amplitude=9.0, f_start=0.15),
        Segment("step", 6.0, 45.0),
    ]


def _campaign_block(r: float) -> list[Segment]:
    segs = [
        Segment("chirp", 70.0, 60.0, amplitude=26.0,
                f_start=0.05 * r, f_end=0.5 * r),
        Segment("chirp", 60.0, 45.0, amplitude=18.0,
                f_start=0.1 * r, f_end=0.6 * r),
        Segment("chirp", 70.0, 68.0, amplitude=20.0,
                f_start=0.04 * r, f_end=0.4 * r),
        Segment("chirp", 60.0, 55.0, amplitude=28.0,
                f_start=0.08 * r, f_end=0.55 * r),
    ]
    for _ in range(3):
        segs += [
            Segment("step", 4.0, 32.0),
            Segment("ramp", 5.0, 32.0, amplitude=56.0),
            Segment("hold", 3.0, 88.0),
        ]
    segs += [
        Segment("chirp", 60.0, 50.0, amplitude=22.0,
                f_start=0.15 * r, f_end=0.7 * r),
        Segment("sine", 20.0, 45.0, amplitude=12.0, f_start=0.1 * r),
        Segment("ramp", 5.0, 45.0, amplitude=43.0),
        Segment("sine", 20.0, 88.0, amplitude=9.0, f_start=0.15),
        Segment("step", 6.0, 45.0),
        Segment("chirp", 50.0, 62.0, amplitude=24.0,
                f_start=0.03 * r, f_end=0.45 * r),
    ]
    return segs


def p100_campaign() -> ExcitationSpec:
    """Bench-style identification campaign for the 100 N engine.

    A step ladder covers the throttle range and ramps into full power,
    followed by ten excitation blocks: wide chirps around several
    operating points, ramp-up/step-down saw teeth, and high-power
    sinusoids, with each block's frequency band scaled by a different
    ratio so the campaign never repeats itself exactly.  4668 s at
    100 Hz gives 466 800 samples, far above the 30000-sample floor the
    identification studies assume; at bench noise levels the throttle-
    map coefficients are only weakly observable, and holding every
    coefficient's sampling error near one percent takes this much
    signal.

    High thrust with a fast rise is outside the model's validity
    envelope (the squared and cross rate terms have positive
    coefficients, so large transients at full power run away), which is
    why every approach to the top of the range is a ramp or comes from
    above, chirp peaks stay at or below 88 %, and the final approach to
    100 % is a ramp and never a step from below 85 %.  Turbine bench
    protocols slew into full power for the same physical reason.
    """
    segs = _campaign_intro()
    for r in (1.0, 1.12, 0.9, 1.25, 0.8, 1.06, 0.95, 1.18, 0.86, 1.3):
        segs += _campaign_block(r)
    return ExcitationSpec(segments=tuple(segs))


def _closed_chirp(dur_target: float, offset: float, amp: float,
                  f0: float, f1: float) -> Segment:
    # Duration snapped to an integer cycle count so the sweep starts and
    # ends exactly at its offset.
    fbar = 0.5 * (f0 + f1)
    cycles = max(1, round(dur_target * fbar))
    return Segment("chirp", cycles / fbar, offset, amplitude=amp,
                   f_start=f0, f_end=f1)


def _closed_sine(dur_target: float, offset: float, amp: float,
                 f: float) -> Segment:
    cycles = max(1, round(dur_target * f))
    return Segment("sine", cycles / f, offset, amplitude=amp, f_start=f)


def _bridge(frm: float, to: float, rate: float = 8.0) -> Segment:
    # Ramp between operating points at a bounded percent-per-second rate.
    dur = max(0.5, abs(to - frm) / rate)
    return Segment("ramp", dur, frm, amplitude=to - frm)


def _structure_block(r: float) -> list[tuple[Segment, float]]:
    return [
        (_closed_chirp(50.0, 57.0, 30.0, 0.02 * r, 0.22 * r), 57.0),
        (_closed_chirp(45.0, 42.0, 17.0, 0.03 * r, 0.28 * r), 42.0),
        (_closed_chirp(50.0, 68.0, 19.0, 0.02 * r, 0.20 * r), 68.0),
        (_closed_sine(30.0, 80.0, 8.0, 0.08 * r), 80.0),
        (_closed_chirp(45.0, 50.0, 24.0, 0.025 * r, 0.25 * r), 50.0),
        (_closed_sine(36.0, 62.0, 32.0, 0.05 * r), 62.0),
        (_closed_sine(40.0, 58.0, 30.0, 0.04 * r), 58.0),
        (_closed_chirp(45.0, 35.0, 10.0, 0.03 * r, 0.30 * r), 35.0),
    ]


def structure_campaign() -> ExcitationSpec:
    """Smooth campaign for structure discovery on the 100 N engine.

    Built so the throttle trace is continuous everywhere: chirps and
    sinusoids close an integer number of cycles (each starts and ends
    at its own offset) and bounded-rate ramps bridge between operating
    points.  A continuous throttle keeps the thrust acceleration free
    of jumps, so a smoothing differentiator tracks it with small bias;
    step campaigns leave structured acceleration errors at every edge,
    and sparse regression reads those as extra library terms.

    The swings are deep and slow on purpose.  Halving a chirp's
    frequency while doubling its amplitude keeps the rate content but
    shrinks the smoothing bias several times over, and the bias, not
    the measurement noise, is what survives averaging over a long
    record.  Six blocks at distinct frequency ratios cover 2185 s;
    sampled at 400 Hz that leaves the support of the thrust dynamics
    separable from its collinear neighbours at bench noise levels.
    The deep sweeps peak near 94 % throttle and every entry into the
    top of the range is a ramp, keeping the whole campaign inside the
    model's stability envelope.
    """
    segs = [
        Segment("hold", 6.0, 25.0),
        _bridge(25.0, 85.0, rate=4.0),
        Segment("hold", 3.0, 85.0),
        _bridge(85.0, 100.0, rate=2.5),
        Segment("hold", 5.0, 100.0),
        _bridge(100.0, 57.0, rate=8.0),
    ]
    cur = 57.0
    for r in (1.0, 1.2, 0.9, 1.3, 0.8, 1.1):
        for seg, off in _structure_block(r):
            if cur != off:
                segs.append(_bridge(cur, off))
            segs.append(seg)
            cur = off
    return ExcitationSpec(segments=tuple(segs))


CAMPAIGNS = {
    "p100-campaign": p100_campaign,
    "structure-campaign": structure_campaign,
}


_BASE_COLUMNS = ("time_s", "throttle_pct", "thrust_n")
_OPT_COLUMNS = ("thrust_dot", "thrust_ddot")


def write_timeseries_csv(path, ts: TimeSeries) -> None:
    """Write a dataset CSV with shortest round-trip float formatting."""
    cols = [ts.t, ts.u, ts.T]
    header = list(_BASE_COLUMNS)
    if ts.T_dot is not None:
        header.append("thrust_dot")
        cols.append(ts.T_dot)
    if ts.T_ddot is not None:
        header.append("thrust_ddot")
        cols.append(ts.T_ddot)
    lists = [c.tolist() for c in cols]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*lists):
            fh.write(",".join(repr(x) for x in row) + "\n")


def read_timeseries_csv(path) -> TimeSeries:
    """Read a dataset CSV, reporting the offending row on malformed input."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MalformedFile("empty dataset file", line=1)
    header = [h.strip() for h in lines[0].split(",")]
    if tuple(header[:3]) != _BASE_COLUMNS or \
            tuple(header[3:]) not in ((), ("thrust_dot",), ("thrust_dot", "thrust_ddot")):
        raise MalformedFile(f"unexpected header {lines[0]!r}", line=1)
    ncol = len(header)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != ncol:
            raise MalformedFile(
                f"row {lineno}: expected {ncol} columns, got {len(parts)}", line=lineno)
        try:
            rows.append([float(x) for x in parts])
        except ValueError:
            raise MalformedFile(f"row {lineno}: bad float in {line!r}",
                                line=lineno) from None
    if not rows:
        raise MalformedFile("dataset has a header but no rows", line=1)
    data = np.array(rows)
    kw = {}
    if ncol >= 4:
        kw["T_dot"] = data[:, 3]
    if ncol >= 5:
        kw["T_ddot"] = data[:, 4]
    return TimeSeries(t=data[:, 0], u=data[:, 1], T=data[:, 2], **kw)
