"""Second-order thrust dynamics of small turbojets.

The model treats thrust T (N) and its rate Td (N/s) as state and throttle
u (%) as input:

    Tdd = f(T, Td) + g(T, Td) * v(u)

    f = K_T*T + K_TT*T^2 + K_D*Td + K_DD*Td^2 + K_TD*T*Td + c
    g = B_U + B_T*T + B_D*Td
    v = u + B_UU*u^2

f collects the unforced drift, g the input gain, and v a quadratic throttle
map that captures the non-linearity of the fuel valve.  Bundled parameter
presets come from bench identification of two engines (nominal 100 N and
220 N, both with a 25..100 % throttle range).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from .errors import MalformedFile, NoEquilibriumInBracket

__all__ = [
    "JetParams",
    "EngineSpec",
    "ThrustState",
    "InversionResult",
    "PARAM_KEYS",
    "PRESETS",
    "ENGINES",
    "drift",
    "input_gain",
    "input_map",
    "invert_input_map",
    "thrust_accel",
    "equilibrium_thrust",
    "params_to_text",
    "params_from_text",
    "save_params",
    "load_params",
]


@dataclass(frozen=True)
class JetParams:
    """Coefficients of the thrust dynamics, in N, N/s and % units."""

    K_T: float
    K_TT: float
    K_D: float
    K_DD: float
    K_TD: float
    c: float
    B_U: float
    B_T: float
    B_D: float
    B_UU: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in PARAM_KEYS], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "JetParams":
        vals = [float(x) for x in arr]
        if len(vals) != len(PARAM_KEYS):
            raise MalformedFile(f"expected {len(PARAM_KEYS)} parameters, got {len(vals)}")
        return cls(*vals)


PARAM_KEYS = tuple(f.name for f in fields(JetParams))


@dataclass(frozen=True)
class EngineSpec:
    """Actuator envelope of one engine."""

    name: str
    max_thrust: float       # N, nominal static thrust
    throttle_min: float = 25.0   # %
    throttle_max: float = 100.0  # %


class ThrustState(NamedTuple):
    """Thrust (N) and thrust rate (N/s).  No sign constraint: transients
    and identified models may undershoot zero."""

    T: float
    T_dot: float


class InversionResult(NamedTuple):
    """Throttle command with saturation bookkeeping.

    saturation is -1 (clamped low), 0 (interior) or +1 (clamped high).
    discriminant_negative marks a demanded v outside the image of the
    throttle map; the returned u is then the nearest saturated endpoint.
    """

    u: float
    saturation: int
    discriminant_negative: bool = False


ENGINES = {
    "p100rx": EngineSpec("p100rx", 100.0),
    "p220rxi": EngineSpec("p220rxi", 220.0),
}

# Bench-identified coefficient sets for the two engines.  The -ekf sets come
# from the joint state and parameter filter, the -ls sets from the iterated
# batch least-squares fit on the same data.
PRESETS = {
    "p100rx-ekf": JetParams(
        K_T=-1.460, K_TT=-0.059, K_D=-2.430, K_DD=0.0787, K_TD=0.1188,
        c=-19.92, B_U=0.4317, B_T=0.0116, B_D=-0.026, B_UU=0.0314,
    ),
    "p220rxi-ekf": JetParams(
        K_T=-0.280, K_TT=-0.010, K_D=0.5883, K_DD=0.0421, K_TD=0.0058,
        c=-7.839, B_U=0.1874, B_T=0.0137, B_D=-0.032, B_UU=0.0074,
    ),
    "p100rx-ls": JetParams(
        K_T=-0.617, K_TT=-0.015, K_D=-0.737, K_DD=-0.002, K_TD=0.0020,
        c=-5.631, B_U=0.2175, B_T=0.0090, B_D=-0.001, B_UU=0.0078,
    ),
    "p220rxi-ls": JetParams(
        K_T=0.2027, K_TT=-0.003, K_D=-0.196, K_DD=0.0023, K_TD=-0.002,
        c=20.624, B_U=-1.364, B_T=-0.002, B_D=0.0067, B_UU=-0.015,
    ),
}

PRESET_ENGINE = {
    "p100rx-ekf": "p100rx",
    "p100rx-ls": "p100rx",
    "p220rxi-ekf": "p220rxi",
    "p220rxi-ls": "p220rxi",
}


def drift(state, p: JetParams):
    """Unforced part f(T, Td) of the thrust acceleration (N/s^2).

    Accepts scalars or numpy arrays in state; broadcasts elementwise.
    """
    T, Td = state[0], state[1]
    return (p.K_T * T + p.K_TT * T * T + p.K_D * Td + p.K_DD * Td * Td
            + p.K_TD * T * Td + p.c)


def input_gain(state, p: JetParams):
    """Input gain g(T, Td) multiplying the mapped throttle (N/s^2 per v-unit)."""
    T, Td = state[0], state[1]
    return p.B_U + p.B_T * T + p.B_D * Td


def input_map(u, b_uu: float):
    """Quadratic throttle map v(u) = u + B_UU * u^2."""
    return u + b_uu * u * u


_LINEAR_B_UU = 1e-12


def invert_input_map(v: float, b_uu: float, spec: EngineSpec) -> InversionResult:
    """Throttle u solving v(u) = v, clamped to the engine's throttle range.

    Uses the positive root of the quadratic; falls back to the linear map
    when |b_uu| is below 1e-12.  A demanded v whose discriminant is negative
    lies outside the image of the map, the result is then the nearest
    saturated endpoint with the discriminant_negative marker set.
    """
    disc_neg = False
    if abs(b_uu) < _LINEAR_B_UU:
        u_raw = v
    else:
        disc = 1.0 + 4.0 * b_uu * v
        if disc < 0.0:
            disc_neg = True
            u_raw = spec.throttle_max if b_uu < 0.0 else spec.throttle_min
        else:
            u_raw = (-1.0 + math.sqrt(disc)) / (2.0 * b_uu)
    # a root a rounding error past the rail is the rail, not saturation
    rail_tol = 1e-9
    if u_raw <= spec.throttle_min:
        sat = -1 if u_raw < spec.throttle_min - rail_tol else 0
        return InversionResult(spec.throttle_min, sat, disc_neg)
    if u_raw >= spec.throttle_max:
        sat = 1 if u_raw > spec.throttle_max + rail_tol else 0
        return InversionResult(spec.throttle_max, sat, disc_neg)
    return InversionResult(u_raw, 0, disc_neg)


def thrust_accel(state, u, p: JetParams):
    """Full thrust acceleration Tdd = f + g * v(u) (N/s^2)."""
    return drift(state, p) + input_gain(state, p) * input_map(u, p.B_UU)


def equilibrium_thrust(u: float, p: JetParams, spec: EngineSpec,
                       bracket: tuple[float, float] | None = None,
                       scan_points: int = 512) -> float:
    """Steady-state thrust for a held throttle, by bracketed bisection.

    The default bracket is [-0.1, 1.5] times the nominal max thrust: the
    upper margin because identified models can slightly exceed the nominal
    rating, the lower one because some identified sets put the idle
    equilibrium marginally below zero.  The bracket is scanned from the top
    so the returned root is the largest (the stable one for these models).

    Raises NoEquilibriumInBracket when the scan finds no sign change.
    """
    if bracket is None:
        bracket = (-0.1 * spec.max_thrust, 1.5 * spec.max_thrust)
    lo, hi = bracket

    def accel_at(T: float) -> float:
        return thrust_accel((T, 0.0), u, p)

    grid = np.linspace(lo, hi, scan_points + 1)
    vals = np.array([accel_at(T) for T in grid])
    a = b = None
    for i in range(scan_points - 1, -1, -1):
        if vals[i] == 0.0:
            return float(grid[i])
        if vals[i] * vals[i + 1] < 0.0:
            a, b = float(grid[i]), float(grid[i + 1])
            break
    if a is None:
        raise NoEquilibriumInBracket(
            f"no steady state for u={u:.6g} inside [{lo:.6g}, {hi:.6g}]")

    fa = accel_at(a)
    while b - a > 1e-12:
        mid = 0.5 * (a + b)
        fm = accel_at(mid)
        if fm == 0.0:
            return mid
        if fa * fm < 0.0:
            b = mid
        else:
            a, fa = mid, fm
    root = 0.5 * (a + b)
    if abs(accel_at(root)) > 1e-8:
        raise NoEquilibriumInBracket(
            f"bisection stalled at T={root:.6g} with residual {accel_at(root):.3g}")
    return root


def params_to_text(p: JetParams) -> str:
    """Serialize parameters, one 'key = value' line per coefficient."""
    return "".join(f"{k} = {float(getattr(p, k))!r}\n" for k in PARAM_KEYS)


def params_from_text(text: str) -> JetParams:
    """Parse the flat key-value parameter format.

    Blank lines and '#' comments are allowed.  Duplicate, unknown or missing
    keys raise MalformedFile with the offending line number where one exists.
    """
    values: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise MalformedFile(f"line {lineno}: expected 'key = value'", line=lineno)
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in PARAM_KEYS:
            raise MalformedFile(f"line {lineno}: unknown parameter {key!r}", line=lineno)
        if key in values:
            raise MalformedFile(f"line {lineno}: duplicate parameter {key!r}", line=lineno)
        try:
            values[key] = float(val.strip())
        except ValueError:
            raise MalformedFile(
                f"line {lineno}: bad float {val.strip()!r}", line=lineno) from None
    missing = [k for k in PARAM_KEYS if k not in values]
    if missing:
        raise MalformedFile(f"missing parameters: {', '.join(missing)}")
    return JetParams(**values)


def save_params(path, p: JetParams) -> None:
    with open(path, "w") as fh:
        fh.write(params_to_text(p))


def load_params(path) -> JetParams:
    with open(path) as fh:
        return params_from_text(fh.read())


def resolve_params(name_or_path: str) -> JetParams:
    """Look up a bundled preset by name, else load a params file."""
    if name_or_path in PRESETS:
        return PRESETS[name_or_path]
    return load_params(name_or_path)
