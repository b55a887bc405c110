"""Device geometry to simulation parameters.

Membrane mechanics (effective mass, Duffing coefficient, mode frequency) and
the Taylor expansion of the potential of two finite line electrodes below the
membrane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np
from scipy.optimize import brentq

from .spectral import HBAR, UnitSystem

# mass printed with the device parameters; the formula gives 1e-18 scale
PRINTED_MASS_KG = 1.9e-12


@dataclass(frozen=True)
class MembraneGeometry:
    length: float
    width: float
    thickness: float
    mass_density: float
    young_modulus: float
    tension: float | None = None  # line tension, N/m

    def __post_init__(self):
        for name in ("length", "width", "thickness", "mass_density", "young_modulus"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.tension is not None and not self.tension > 0:
            raise ValueError("tension must be positive when given")

    @property
    def areal_density(self) -> float:
        return self.mass_density * self.thickness


# single-layer graphene drum
GRAPHENE_MEMBRANE = MembraneGeometry(
    length=5e-6, width=1e-6, thickness=3.35e-10, mass_density=2.26e3, young_modulus=1.02e12
)
REFERENCE_OMEGA = 2 * math.pi * 2e6


@dataclass(frozen=True)
class ElasticParams:
    mass: float
    beta: float
    omega: float

    def units(self) -> UnitSystem:
        return UnitSystem(mass=self.mass, omega=self.omega, beta=self.beta)


def elastic_params(geom: MembraneGeometry, mode: int = 1, omega: float | None = None) -> ElasticParams:
    """Effective mass, Duffing coefficient and frequency of flexural mode ``mode``.

    With pinned edges m = rho*h*L*w/2 and beta = (Y h w / 8 L^3)(n pi)^4. The
    frequency is ``omega`` when given, else sqrt(T/mu) * n*pi/L from the tension.
    """
    if mode < 1:
        raise ValueError("mode index starts at 1")
    mass = 0.5 * geom.mass_density * geom.thickness * geom.length * geom.width
    beta = geom.young_modulus * geom.thickness * geom.width / (8 * geom.length**3) * (mode * math.pi) ** 4
    if omega is None:
        if geom.tension is None:
            raise ValueError("either omega or the membrane tension is required")
        omega = math.sqrt(geom.tension / geom.areal_density) * mode * math.pi / geom.length
    if not omega > 0:
        raise ValueError("omega must be positive")
    return ElasticParams(mass=mass, beta=beta, omega=omega)


def duffing_gamma(mass: float, omega: float, beta: float) -> float:
    """gamma = beta*hbar / (16 m^2 omega^3)."""
    if mass <= 0 or omega <= 0 or beta <= 0:
        raise ValueError("mass, omega and beta must be positive")
    return beta * HBAR / (16.0 * mass**2 * omega**3)


def reference_units() -> UnitSystem:
    """Units of the 5 um x 1 um graphene drum at 2 MHz."""
    return elastic_params(GRAPHENE_MEMBRANE, omega=REFERENCE_OMEGA).units()


def control_mapping(alpha2: float, unit: UnitSystem) -> float:
    """zeta = -2 alpha2 / (m omega^2) - 1."""
    return -2.0 * alpha2 / (unit.mass * unit.omega**2) - 1.0


def alpha2_for_zeta(zeta: float, unit: UnitSystem) -> float:
    """Inverse of :func:`control_mapping`."""
    return -(1.0 + zeta) * unit.mass * unit.omega**2 / 2.0


# ---------------------------------------------------------------- electrodes


@dataclass(frozen=True)
class ElectrodeGeometry:
    """Two rods of length 2a at x = +-b, a distance z0 below the membrane.

    ``half_length`` may be ``math.inf`` for infinitely long rods, in which case
    only the z-dependent part of the potential (finite up to a constant) is
    meaningful.
    """

    half_length: float
    half_separation: float
    standoff: float
    potential: float = 1.0

    def __post_init__(self):
        if not self.half_length > 0:
            raise ValueError("half_length must be positive")
        if not (self.half_separation > 0 and math.isfinite(self.half_separation)):
            raise ValueError("half_separation must be positive and finite")
        if not (self.standoff > 0 and math.isfinite(self.standoff)):
            raise ValueError("standoff must be positive and finite")


def electrode_potential(geom: ElectrodeGeometry, z, x: float = 0.0):
    """Potential of the electrode pair at (x, 0, z), in units of V0."""
    z = np.asarray(z, dtype=float)
    a = geom.half_length
    out = 0.0
    for s in (-1.0, 1.0):
        rho2 = (x + s * geom.half_separation) ** 2 + (z - geom.standoff) ** 2
        if math.isinf(a):
            out = out - np.log(rho2)
        else:
            R = np.sqrt(a * a + rho2)
            out = out + np.log((R + a) ** 2 / rho2)
    return geom.potential * out


# truncated power series helpers; arrays hold coefficients c_0..c_N


def _series_mul(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.convolve(p, q)[: len(p)]


def _series_div(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p)
    for k in range(len(p)):
        out[k] = (p[k] - np.dot(out[:k], q[k:0:-1])) / q[0]
    return out


def _series_sqrt(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p)
    out[0] = math.sqrt(p[0])
    for k in range(1, len(p)):
        out[k] = (p[k] - np.dot(out[1:k], out[k - 1 : 0 : -1])) / (2 * out[0])
    return out


def _series_log(p: np.ndarray) -> np.ndarray:
    if p[0] <= 0:
        raise ValueError("log argument must be positive at the expansion point")
    out = np.zeros_like(p)
    out[0] = math.log(p[0])
    for k in range(1, len(p)):
        i = np.arange(1, k)
        out[k] = (p[k] - np.dot(i * out[1:k], p[k - 1 : 0 : -1]) / k) / p[0]
    return out


def _rod_series(a: float, b: float, z0: float, order: int) -> np.ndarray:
    """Taylor coefficients of one rod's log term around z = 0."""
    rho2 = np.zeros(order + 1)
    rho2[0] = b * b + z0 * z0
    if order >= 1:
        rho2[1] = -2.0 * z0
    if order >= 2:
        rho2[2] = 1.0
    if rho2[0] <= 0:
        raise ValueError("electrode geometry puts a rod at the expansion point")
    if math.isinf(a):
        return -_series_log(rho2)
    R2 = rho2.copy()
    R2[0] += a * a
    R = _series_sqrt(R2)
    Rpa = R.copy()
    Rpa[0] += a
    # R - a = rho^2 / (R + a) avoids cancellation when a >> rho
    return _series_log(Rpa) - _series_log(_series_div(rho2, Rpa))


def _coeffs_series(geom: ElectrodeGeometry, order: int) -> np.ndarray:
    a, b, z0 = geom.half_length, geom.half_separation, geom.standoff
    # the pair is symmetric in x, so at x = 0 both rods contribute equally
    return 2.0 * geom.potential * _rod_series(a, b, z0, order)


def _coeffs_mpmath(geom: ElectrodeGeometry, order: int, dps: int = 40) -> np.ndarray:
    a, b, z0, V0 = geom.half_length, geom.half_separation, geom.standoff, geom.potential
    with mpmath.workdps(dps):
        if math.isinf(a):
            f = lambda z: -2 * mpmath.log(b**2 + (z - z0) ** 2)
        else:
            A = mpmath.mpf(a)

            def f(z):
                rho2 = b**2 + (z - z0) ** 2
                R = mpmath.sqrt(A**2 + rho2)
                return 2 * mpmath.log((R + A) ** 2 / rho2)

        coeffs = mpmath.taylor(f, 0, order)
        return np.array([float(c) for c in coeffs]) * V0


@dataclass(frozen=True)
class ElectrostaticCoefficients:
    """alpha_j for j = 1..max_order, absolute and as alpha_j z0^j / V0."""

    orders: tuple
    absolute: tuple
    normalized: tuple
    geometry: ElectrodeGeometry

    def __getitem__(self, j: int) -> float:
        return self.absolute[self.orders.index(j)]

    def to_dict(self) -> dict:
        return {
            "orders": list(self.orders),
            "alpha": list(self.absolute),
            "alpha_normalized": list(self.normalized),
        }


def electrostatic_coeffs(geom: ElectrodeGeometry, max_order: int = 4, method: str = "series") -> ElectrostaticCoefficients:
    """Taylor coefficients of V_e(0, z) = sum_j alpha_j z^j about z = 0.

    ``method`` is "series" (power-series arithmetic on the closed form, exact
    up to rounding) or "mpmath" (high-precision numerical differentiation).
    """
    if not 1 <= max_order <= 6:
        raise ValueError("max_order must be between 1 and 6")
    if method == "series":
        c = _coeffs_series(geom, max_order)
    elif method == "mpmath":
        c = _coeffs_mpmath(geom, max_order)
    else:
        raise ValueError(f"unknown method {method!r}")
    orders = tuple(range(1, max_order + 1))
    absolute = tuple(float(c[j]) for j in orders)
    normalized = tuple(float(c[j] * geom.standoff**j / geom.potential) for j in orders)
    return ElectrostaticCoefficients(orders, absolute, normalized, geom)


def alpha3_root(half_length: float, standoff: float, bracket: tuple[float, float] | None = None) -> float:
    """Half-separation b at which alpha_3 vanishes."""
    lo, hi = bracket if bracket is not None else (0.05 * standoff, 2.0 * standoff)

    def a3(b):
        g = ElectrodeGeometry(half_length, b, standoff)
        return electrostatic_coeffs(g, 3).normalized[2]

    return brentq(a3, lo, hi, xtol=1e-15 * standoff, rtol=4 * np.finfo(float).eps)


def alpha_table(half_length: float, standoff: float, b_over_z0, max_order: int = 4) -> list[dict]:
    """Rows of normalized alpha_j against b/z0 at fixed a and z0."""
    rows = []
    for r in np.asarray(b_over_z0, dtype=float):
        g = ElectrodeGeometry(half_length, r * standoff, standoff)
        c = electrostatic_coeffs(g, max_order)
        row = {"b_over_z0": float(r)}
        row.update({f"alpha{j}": v for j, v in zip(c.orders, c.normalized)})
        rows.append(row)
    return rows


def design_report(
    membrane: MembraneGeometry = GRAPHENE_MEMBRANE,
    omega: float | None = REFERENCE_OMEGA,
    electrode_half_length_over_z0: float = 10.0,
    b_over_z0=None,
    zetas=(-1.0, -2.5e-4, 0.0, 3e-4),
) -> dict:
    """Parameter summary: mechanics, dimensionless scales, alpha_j table."""
    el = elastic_params(membrane, omega=omega)
    unit = el.units()
    if b_over_z0 is None:
        b_over_z0 = np.round(np.linspace(0.1, 20.0, 200), 6)
    z0 = 1.0
    root = alpha3_root(electrode_half_length_over_z0 * z0, z0)
    root_long = alpha3_root(math.inf, z0)
    return {
        "mass_kg": el.mass,
        "mass_printed_kg": PRINTED_MASS_KG,
        "mass_note": "formula value; the printed device mass carries exponent -12",
        "beta_J_per_m4": el.beta,
        "omega_rad_per_s": el.omega,
        "gamma": unit.gamma,
        "z_zpm_m": unit.z_zpm,
        "hbar_omega_over_kB_K": unit.temperature_unit,
        "alpha3_root_b_over_z0": root,
        "alpha3_root_long_rod_b_over_z0": root_long,
        "inverse_sqrt3": 1 / math.sqrt(3),
        "a_over_z0": electrode_half_length_over_z0,
        "alpha_table": alpha_table(electrode_half_length_over_z0 * z0, z0, b_over_z0),
        "zeta_to_alpha2_J_per_m2": {str(z): alpha2_for_zeta(z, unit) for z in zetas},
    }
