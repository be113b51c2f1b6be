"""Propulsion sizing for thrust-vectoring legged robots that hover.

Everything here is a small fixed point: the propellant that lifts the robot
is itself weight that needs lifting.  For batteries the full pack mass is
carried for the whole flight, giving m = W*k/(1-k); burned fuel leaves the
vehicle, and charging the average remaining fuel (half the tank) gives
m = W*k/(1-k/2).  k is the propellant mass per kilogram-force of sustained
lift for the requested endurance.  The naive variants (m = W*k) ignore the
self-lift coupling and are kept for comparison.

Default constants describe an electric ducted fan around 13 kgf of thrust
burning about 1 kW per kgf, a 210 Wh/kg battery, and a 22 kgf turbojet
burning 0.0218 kg of kerosene per minute per kgf of lift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleEndurance, InvalidValue

__all__ = [
    "PropulsionSpec",
    "ELECTRIC_FAN",
    "TURBOJET",
    "battery_mass",
    "fuel_mass",
    "engine_count",
    "mass_table",
    "engine_count_table",
]


@dataclass(frozen=True)
class PropulsionSpec:
    """Constants of one propulsion technology.

    thrust_per_engine is in kgf.  power_per_kgf (kW/kgf) and energy_density
    (Wh/kg) drive electric sizing; fuel_flow_per_kgf (l/min per kgf) and
    fuel_density (kg/l) drive jet sizing.
    """

    kind: str
    thrust_per_engine: float
    power_per_kgf: float = 0.0
    energy_density: float = 0.0
    fuel_flow_per_kgf: float = 0.0
    fuel_density: float = 0.0

    def __post_init__(self):
        if self.kind not in ("electric", "jet"):
            raise InvalidValue(f"unknown propulsion kind {self.kind!r}")
        if self.thrust_per_engine <= 0.0:
            raise InvalidValue("thrust_per_engine must be positive")


ELECTRIC_FAN = PropulsionSpec(kind="electric", thrust_per_engine=13.0,
                              power_per_kgf=1.0, energy_density=210.0)

# 0.6 l/min at the 22 kgf rating with 0.8 kg/l kerosene puts the burn
# constant at 0.0218 kg per minute per kgf of lift.
TURBOJET = PropulsionSpec(kind="jet", thrust_per_engine=22.0,
                          fuel_flow_per_kgf=0.02725, fuel_density=0.8)


def _check_inputs(weight_kg: float, minutes: float) -> None:
    if not weight_kg > 0.0:
        raise InvalidValue(f"weight must be positive, got {weight_kg}")
    if not minutes > 0.0:
        raise InvalidValue(f"endurance must be positive, got {minutes}")


def battery_mass(weight_kg: float, minutes: float,
                 spec: PropulsionSpec = ELECTRIC_FAN,
                 naive: bool = False) -> float:
    """Battery mass (kg) to hover weight_kg for the given minutes.

    k is the battery mass per kgf of lift; the pack must also lift itself,
    so m = W*k/(1-k).  Hover longer than the k=1 horizon (12.6 min at the
    default constants) and no finite battery suffices: InfeasibleEndurance.
    """
    _check_inputs(weight_kg, minutes)
    if spec.power_per_kgf <= 0.0 or spec.energy_density <= 0.0:
        raise InvalidValue("spec lacks electric constants")
    k = spec.power_per_kgf * minutes * (1000.0 / 60.0) / spec.energy_density
    if naive:
        return weight_kg * k
    if k >= 1.0:
        raise InfeasibleEndurance(
            f"{minutes:.6g} min demands k={k:.4g} >= 1; battery cannot lift itself")
    return weight_kg * k / (1.0 - k)


def fuel_mass(weight_kg: float, minutes: float,
              spec: PropulsionSpec = TURBOJET,
              naive: bool = False) -> float:
    """Fuel mass (kg) to hover weight_kg for the given minutes.

    Fuel burns off, so on average half the tank rides along:
    m = W*k/(1-k/2), infeasible at k >= 2.
    """
    _check_inputs(weight_kg, minutes)
    if spec.fuel_flow_per_kgf <= 0.0 or spec.fuel_density <= 0.0:
        raise InvalidValue("spec lacks fuel constants")
    k = spec.fuel_flow_per_kgf * spec.fuel_density * minutes
    if naive:
        return weight_kg * k
    if k >= 2.0:
        raise InfeasibleEndurance(
            f"{minutes:.6g} min demands k={k:.4g} >= 2; tank cannot lift itself")
    return weight_kg * k / (1.0 - 0.5 * k)


def engine_count(weight_kg: float, spec: PropulsionSpec) -> int:
    """Engines needed to hover: ceil of weight over per-engine thrust."""
    if not weight_kg > 0.0:
        raise InvalidValue(f"weight must be positive, got {weight_kg}")
    return math.ceil(weight_kg / spec.thrust_per_engine)


def mass_table(weights, minutes, spec: PropulsionSpec,
               naive: bool = False) -> np.ndarray:
    """Propellant mass grid, rows over weights and columns over endurances.

    Infeasible cells come back as inf rather than raising, so a table can
    show the feasibility boundary.
    """
    fn = battery_mass if spec.kind == "electric" else fuel_mass
    out = np.empty((len(weights), len(minutes)))
    for i, w in enumerate(weights):
        for j, m in enumerate(minutes):
            try:
                out[i, j] = fn(w, m, spec, naive=naive)
            except InfeasibleEndurance:
                out[i, j] = math.inf
    return out


def engine_count_table(weights, spec: PropulsionSpec) -> list[int]:
    return [engine_count(w, spec) for w in weights]
