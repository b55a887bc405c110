"""Cavity output spectrum as a fingerprint of the mechanical populations.

Each populated level n contributes a Lorentzian line for every other level m,
centred at Omega = E_n - E_m (= -delta_mn) with weight

    kappa g^2 |x_mn|^2 / (kappa^2/4 + delta_mn^2) * rho_nn

and half-width Gamma_mn. Frequencies are in units of omega and Omega = 0 is
the cavity resonance.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import find_peaks

from .dynamics import BathParams, _rate_factors
from .spectral import EigenSystem

FLOOR_WIDTH = 1e-6
DEFAULT_AXIS = (-0.2, 0.2, 4001)


@dataclass(frozen=True)
class CavityParams:
    kappa: float = 1.0
    g: float = 0.1

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.g < 0:
            raise ValueError("g must be non-negative")


@dataclass(frozen=True)
class SpectrumLine:
    m: int
    n: int
    delta: float  # delta_mn = E_m - E_n
    weight: float  # integrated area, population included
    width: float  # half-width actually drawn
    rate: float  # Gamma_mn before the floor

    @property
    def center(self) -> float:
        return -self.delta


@dataclass(eq=False)
class SpectrumResult:
    omega_axis: np.ndarray
    values: np.ndarray
    lines: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["omega", "S"])
            for o, s in zip(self.omega_axis, self.values):
                w.writerow([repr(float(o)), repr(float(s))])

    @staticmethod
    def load_csv(path) -> tuple[np.ndarray, np.ndarray]:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return data[:, 0], data[:, 1]

    def lines_to_json(self, path) -> None:
        Path(path).write_text(json.dumps([asdict(l) for l in self.lines], indent=1))

    @staticmethod
    def load_lines(path) -> list[SpectrumLine]:
        return [SpectrumLine(**d) for d in json.loads(Path(path).read_text())]


def decoherence_rate(eig: EigenSystem, m: int, n: int, bath: BathParams) -> float:
    """Gamma_mn = (|delta_mn|/Q) |x_mn|^2 times N (m < n) or N + 1 (m > n)."""
    if m == n:
        raise ValueError("decoherence rate needs m != n")
    if bath.closed:
        return 0.0
    delta = abs(float(eig.energies[m] - eig.energies[n]))
    up, down = _rate_factors(np.array([delta]), bath.reduced_temperature)
    factor = up[0] if m < n else down[0]
    return float(factor * abs(eig.position()[m, n]) ** 2 / bath.quality_factor)


def _rates(eig: EigenSystem, K: int, bath: BathParams) -> np.ndarray:
    G = np.zeros((K, K))
    if bath.closed:
        return G
    E = eig.energies[:K]
    x2 = np.abs(eig.position()[:K, :K]) ** 2
    delta = np.abs(E[:, None] - E[None, :])
    up, down = _rate_factors(delta, bath.reduced_temperature)
    lower = np.tril(np.ones((K, K), dtype=bool), -1)  # m > n at [m, n]
    G = np.where(lower, down, up) * x2 / bath.quality_factor
    np.fill_diagonal(G, 0.0)
    return G


def lorentzian(omega, center: float, half_width: float) -> np.ndarray:
    return (half_width / math.pi) / ((np.asarray(omega) - center) ** 2 + half_width**2)


def default_axis() -> np.ndarray:
    lo, hi, n = DEFAULT_AXIS
    return np.linspace(lo, hi, n)


def output_spectrum(
    populations,
    eig: EigenSystem,
    cavity: CavityParams = CavityParams(),
    bath: BathParams = BathParams(),
    omega_axis=None,
    floor: float = FLOOR_WIDTH,
    population_cutoff: float = 0.0,
) -> SpectrumResult:
    """Sum of population-weighted transition Lorentzians."""
    p = np.asarray(populations, dtype=float)
    if p.ndim != 1 or len(p) > eig.dim:
        raise ValueError("populations must be a vector no longer than the eigensystem")
    if np.any(p < -1e-8):
        raise ValueError("populations must be non-negative")
    axis = default_axis() if omega_axis is None else np.asarray(omega_axis, dtype=float)
    if not np.all(np.isfinite(axis)):
        raise ValueError("frequency axis must be finite")
    K = len(p)
    E = eig.energies[:K]
    x2 = np.abs(eig.position()[:K, :K]) ** 2
    G = _rates(eig, K, bath)
    kappa, g = cavity.kappa, cavity.g
    values = np.zeros_like(axis)
    lines = []
    for n in range(K):
        if p[n] <= population_cutoff:
            continue
        for m in range(K):
            if m == n:
                continue
            delta = float(E[m] - E[n])
            weight = kappa * g**2 * x2[m, n] / (kappa**2 / 4 + delta**2) * p[n]
            rate = float(G[m, n])
            width = max(rate, floor)
            lines.append(SpectrumLine(m, n, delta, float(weight), width, rate))
            if weight > 0:
                values += weight * lorentzian(axis, -delta, width)
    return SpectrumResult(axis, np.clip(values, 0.0, None), lines)


def find_sidebands(result: SpectrumResult, count: int = 3, side: str = "negative",
                   exclude_center: float | None = None) -> np.ndarray:
    """Positions of the ``count`` tallest local maxima on one side of Omega = 0.

    Peaks within ``exclude_center`` of the origin (default two grid spacings)
    belong to the near-degenerate doublet line and are skipped.
    """
    axis, S = result.omega_axis, result.values
    if exclude_center is None:
        exclude_center = 2.0 * float(np.min(np.diff(axis)))
    idx, _ = find_peaks(S)
    keep = axis[idx] < -exclude_center if side == "negative" else axis[idx] > exclude_center
    idx = idx[keep]
    order = np.argsort(S[idx])[::-1][:count]
    return axis[idx[order]]
