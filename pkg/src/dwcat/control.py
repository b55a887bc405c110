"""Control ramps and counterdiabatic drive Hamiltonians."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .spectral import EigenSystem, position_operator

RAMP_KINDS = ("linear", "sqrt", "sine", "gap_adapted")

# tolerance on the stage window, relative to its duration
_WINDOW_SLACK = 1e-12


@dataclass(frozen=True)
class RampSchedule:
    kind: str
    zeta_start: float
    zeta_end: float
    duration: float
    t_start: float = 0.0

    def __post_init__(self):
        if self.kind not in RAMP_KINDS:
            raise ValueError(f"unknown ramp kind {self.kind!r}; expected one of {RAMP_KINDS}")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.kind == "gap_adapted":
            if self.zeta_start >= 0 or self.zeta_end >= 0:
                raise ValueError("gap_adapted ramps need zeta_start, zeta_end < 0")

    @property
    def t_end(self) -> float:
        return self.t_start + self.duration

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "zeta_start": self.zeta_start,
            "zeta_end": self.zeta_end,
            "duration": self.duration,
            "t_start": self.t_start,
        }

    def __call__(self, t: float) -> tuple[float, float]:
        return ramp_value(self, t)


def ramp_value(schedule: RampSchedule, t: float) -> tuple[float, float]:
    """Return (zeta, dzeta/dtau) at absolute time ``t``.

    * linear: affine in t.
    * sqrt: zeta_start + d*sqrt(s), s the normalized time. The rate diverges at s = 0.
    * sine: zeta_start + d*sin(pi s/2)**2, with zero rate at both ends.
    * gap_adapted: zeta = -exp(-lam*t'), so dzeta/dt is proportional to |zeta|.
      This is a constant log-rate sweep from zeta_start to zeta_end.
    """
    slack = _WINDOW_SLACK * schedule.duration
    if t < schedule.t_start - slack or t > schedule.t_end + slack:
        raise ValueError(
            f"t={t} outside stage window [{schedule.t_start}, {schedule.t_end}]"
        )
    T = schedule.duration
    s = min(max((t - schedule.t_start) / T, 0.0), 1.0)
    # snap onto the endpoints so boundary values are exact
    if s < _WINDOW_SLACK:
        s = 0.0
    elif s > 1.0 - _WINDOW_SLACK:
        s = 1.0
    z0, z1 = schedule.zeta_start, schedule.zeta_end
    d = z1 - z0
    kind = schedule.kind
    if kind == "linear":
        return z0 + d * s, d / T
    if kind == "sqrt":
        rate = d / (2.0 * T * math.sqrt(s)) if s > 0 else math.copysign(math.inf, d)
        return z0 + d * math.sqrt(s), rate
    if kind == "sine":
        # sin(pi) is 1.2e-16 in floating point; the drive must vanish exactly
        rate = 0.0 if s in (0.0, 1.0) else d * math.pi / (2 * T) * math.sin(math.pi * s)
        return z0 + d * math.sin(0.5 * math.pi * s) ** 2, rate
    # gap_adapted
    lam = math.log(z0 / z1) / T
    zeta = z0 * math.exp(-lam * T * s)
    if s == 1.0:
        zeta = z1
    return zeta, -lam * zeta


@dataclass(frozen=True)
class TransitionSet:
    pairs: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        pairs = tuple(sorted({(int(n), int(m)) for n, m in self.pairs}))
        for n, m in pairs:
            if n >= m:
                raise ValueError(f"pair ({n}, {m}) must satisfy n < m")
            if n % 2 or m % 2:
                raise ValueError(f"pair ({n}, {m}) must join even levels")
        object.__setattr__(self, "pairs", pairs)

    @classmethod
    def up_to(cls, level: int) -> "TransitionSet":
        """All even pairs (n, m) with n < m <= level; empty below 2."""
        levels = range(0, level + 1, 2)
        return cls(tuple(itertools.combinations(levels, 2)))

    @property
    def highest(self) -> int:
        return max((m for _, m in self.pairs), default=0)

    def __bool__(self) -> bool:
        return bool(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True, eq=False)
class DriveHamiltonian:
    matrix: np.ndarray
    zeta: float
    zeta_dot: float


def _to_eigen(eig: EigenSystem, op: np.ndarray) -> np.ndarray:
    return eig.states.conj().T @ op @ eig.states


def cd_full(eig: EigenSystem, dH_dt: np.ndarray, *, degeneracy_tol: float = 1e-12) -> DriveHamiltonian:
    """Transitionless-driving term i sum_{n!=m} |n><n|dH|m><m| / (E_m - E_n).

    ``dH_dt`` is given in the eigensystem's basis, in units of hbar*omega^2.
    The result is returned in the same basis.
    """
    dH = _to_eigen(eig, np.asarray(dH_dt))
    E = eig.energies
    diff = E[None, :] - E[:, None]  # E_m - E_n at [n, m]
    near = np.abs(diff) < degeneracy_tol
    np.fill_diagonal(near, False)
    if np.any(near & (np.abs(dH) >= 1e-14)):
        n, m = np.argwhere(near & (np.abs(dH) >= 1e-14))[0]
        raise ValueError(f"degenerate levels ({n}, {m}) coupled by dH/dt")
    safe = np.where(np.abs(diff) < degeneracy_tol, np.inf, diff)
    coeff = 1j * dH / safe
    np.fill_diagonal(coeff, 0.0)
    mat = eig.states @ coeff @ eig.states.conj().T
    return DriveHamiltonian(0.5 * (mat + mat.conj().T), eig.zeta, math.nan)


def cd_eigen_coefficients(eig: EigenSystem, zeta_dot: float, transitions: TransitionSet) -> np.ndarray:
    """Drive matrix elements in the instantaneous eigenbasis."""
    K = np.zeros((eig.dim, eig.dim), dtype=complex)
    if zeta_dot == 0 or not transitions:
        return K
    x2 = eig.position_squared()
    E = eig.energies
    for n, m in transitions.pairs:
        if m >= eig.dim:
            raise IndexError(f"transition ({n}, {m}) beyond dim {eig.dim}")
        delta = E[m] - E[n]
        if abs(delta) < 1e-12:
            raise ValueError(f"vanishing gap for transition ({n}, {m})")
        # dH/dtau = -(zeta_dot/4) x^2 in units hbar*omega
        el = -0.25j * zeta_dot * x2[n, m] / delta
        K[n, m] += el
        K[m, n] += np.conj(el)
    return K


def cd_even_truncated(eig: EigenSystem, zeta_dot: float, transitions: TransitionSet) -> DriveHamiltonian:
    """Counterdiabatic drive restricted to the listed even-level transitions."""
    K = cd_eigen_coefficients(eig, zeta_dot, transitions)
    mat = eig.states @ K @ eig.states.conj().T
    return DriveHamiltonian(0.5 * (mat + mat.conj().T), eig.zeta, zeta_dot)


def zeta_derivative_operator(eig: EigenSystem) -> np.ndarray:
    """dH/dzeta = -x^2/4 in the eigensystem's basis (units hbar*omega)."""
    return -0.25 * position_operator(eig.basis, power=2)
