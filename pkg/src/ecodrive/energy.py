"""Instantaneous fuel and CO2 rates from (speed, acceleration).

Fuel follows the comprehensive power-based model: resistance and inertial
load give instantaneous power, fuel rate is a quadratic in power with a
constant idle floor whenever power is non-positive. CO2 follows the
HBEFA-style cubic in (v, a) used by common microsimulators; its
coefficients ship in an editable text file so other vehicle classes can
be swapped in.

Units: power in kW, fuel in L/s, CO2 in mg/s.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .dynamics import VehicleState

GRAVITY = 9.8066


class EnergyConfigError(ValueError):
    """A coefficient file is missing or malformed."""


@dataclass
class EnergyParams:
    """Calibrated constants of the power-based fuel model (gasoline passenger car)."""

    alpha0: float = 0.00078      # idle fuel rate, L/s
    alpha1: float = 0.000006
    alpha2: float = 1.9556e-05
    m: float = 3152.0            # vehicle mass, kg
    eta: float = 0.92            # driveline efficiency
    rho: float = 1.23            # air density, kg/m^3
    c0: float = 1.75             # rolling resistance (road/tire condition)
    c1: float = 0.033
    c2: float = 4.575
    Ca: float = 0.98             # altitude correction factor
    Cd: float = 0.6              # drag coefficient
    Af: float = 3.28             # frontal area, m^2
    G: float = 0.0               # roadway grade

    def __post_init__(self) -> None:
        for name in ("alpha0", "m", "eta", "rho", "Af"):
            if getattr(self, name) <= 0:
                raise ValueError(f"EnergyParams.{name} must be > 0")


@dataclass
class Co2Coeffs:
    """Cubic CO2 rate coefficients: k0 + k1*v*a + k2*v*a^2 + k3*v + k4*v^2 + k5*v^3 [mg/s].

    The unclamped polynomial doubles as an engine-power surrogate: braking
    drives the v*a term negative, and a negative value means no emission.
    """

    k0: float = 0.0
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    k4: float = 0.0
    k5: float = 0.0


def resistance(v: float, p: EnergyParams) -> float:
    """Total driving resistance at speed ``v``, in newtons.

    Aerodynamic drag + speed-dependent and constant rolling resistance +
    grade load.
    """
    return (
        (p.rho / 25.92) * p.Cd * p.Ca * p.Af * v * v
        + GRAVITY * p.m * (p.c0 / 1000.0) * p.c1 * v
        + GRAVITY * p.m * (p.c0 / 1000.0) * p.c2
        + GRAVITY * p.m * p.G
    )


def power(v: float, a: float, p: EnergyParams) -> float:
    """Instantaneous power demand at the wheels, in kW (negative while braking)."""
    return (resistance(v, p) + 1.04 * p.m * a) / (3600.0 * p.eta) * v


def fuel_rate(v: float, a: float, p: EnergyParams) -> float:
    """Instantaneous fuel rate in L/s; idle floor alpha0 whenever power < 0."""
    P = power(v, a, p)
    if P < 0.0:
        return p.alpha0
    return p.alpha0 + p.alpha1 * P + p.alpha2 * P * P


def co2_rate(v: float, a: float, coeffs: Co2Coeffs) -> float:
    """Instantaneous CO2 rate in mg/s; zero when the power surrogate is negative."""
    e = (
        coeffs.k0
        + coeffs.k1 * v * a
        + coeffs.k2 * v * a * a
        + coeffs.k3 * v
        + coeffs.k4 * v * v
        + coeffs.k5 * v * v * v
    )
    return max(0.0, e)


def accumulate(state: VehicleState, dt: float, p: EnergyParams, coeffs: Co2Coeffs) -> VehicleState:
    """Rectangle-rule energy accumulation over one step at the vehicle's current (vel, accel)."""
    state.cumulative_fuel += fuel_rate(state.vel, state.accel, p) * dt
    state.cumulative_co2 += co2_rate(state.vel, state.accel, coeffs) * dt / 1e6
    return state


# --------------------------------------------------------------------------
# Coefficient files (same key/value text format as the scenario config)
# --------------------------------------------------------------------------

DEFAULT_CO2_FILE = "co2_hbefa_pc_g_eu4.cfg"


def _read_section(path: Path, section: str) -> configparser.SectionProxy:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not path.exists():
        raise EnergyConfigError(f"coefficient file not found: {path}")
    parser.read(path)
    if section not in parser:
        raise EnergyConfigError(f"missing [{section}] section in {path}")
    return parser[section]


def load_energy_params(path: str | Path) -> EnergyParams:
    """Load fuel-model constants from a coefficient file ([energy] section)."""
    sec = _read_section(Path(path), "energy")
    kwargs = {k: sec.getfloat(k) for k in sec}
    try:
        return EnergyParams(**kwargs)
    except TypeError as exc:
        raise EnergyConfigError(f"bad [energy] key in {path}: {exc}") from exc


def load_co2_coeffs(path: str | Path | None = None) -> Co2Coeffs:
    """Load CO2 coefficients from a file ([co2] section), or the shipped defaults."""
    if path is None:
        ref = resources.files("ecodrive").joinpath("data", DEFAULT_CO2_FILE)
        with resources.as_file(ref) as real:
            return load_co2_coeffs(real)
    sec = _read_section(Path(path), "co2")
    kwargs = {k: sec.getfloat(k) for k in sec}
    try:
        return Co2Coeffs(**kwargs)
    except TypeError as exc:
        raise EnergyConfigError(f"bad [co2] key in {path}: {exc}") from exc
