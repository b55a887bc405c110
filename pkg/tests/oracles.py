"""Reference implementations that share no code with the package.

They work on a uniform position grid (sinc discrete variable representation)
rather than in an oscillator basis, so agreement is a genuine cross-check.
Units match the package: hbar = omega = 1 and x in zero-point units. With
the canonical momentum p = -i d/dx the kinetic energy is p^2 = -d^2/dx^2
(the package writes it as P^2/4 with the quadrature P = i(b^dag - b)).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
from scipy.integrate import trapezoid


def dvr_hamiltonian(zeta: float, gamma: float, cubic: float = 0.0, half_width: float = 90.0, points: int = 1201):
    x = np.linspace(-half_width, half_width, points)
    dx = x[1] - x[0]
    i = np.arange(points)
    d = i[:, None] - i[None, :]
    with np.errstate(divide="ignore"):
        T = np.where(d == 0, np.pi**2 / 3.0, 2.0 * (-1.0) ** d / np.where(d == 0, 1, d) ** 2)
    T /= dx**2
    V = -0.25 * zeta * x**2 + gamma * x**4 + cubic * x**3
    return x, T + np.diag(V)


def dvr_spectrum(zeta: float, gamma: float, cubic: float = 0.0, levels: int = 26, **grid):
    x, H = dvr_hamiltonian(zeta, gamma, cubic, **grid)
    E, V = scipy.linalg.eigh(H, subset_by_index=(0, levels - 1))
    dx = x[1] - x[0]
    return x, E, V / np.sqrt(dx)  # columns are wavefunctions psi(x)


def wigner_direct(psi, x, xs, ps):
    """W(x, p) = (1/pi) int psi*(x + y) psi(x - y) exp(2 i p y) dy for a real-axis wavefunction."""
    dx = x[1] - x[0]
    out = np.zeros((len(xs), len(ps)))
    y = np.arange(-len(x), len(x) + 1) * dx / 2.0
    for a, x0 in enumerate(xs):
        f1 = np.interp(x0 + y, x, psi.real, left=0, right=0) + 1j * np.interp(x0 + y, x, psi.imag, left=0, right=0)
        f2 = np.interp(x0 - y, x, psi.real, left=0, right=0) + 1j * np.interp(x0 - y, x, psi.imag, left=0, right=0)
        g = np.conj(f1) * f2
        for b, p0 in enumerate(ps):
            out[a, b] = np.real(trapezoid(g * np.exp(2j * p0 * y), y)) / np.pi
    return out


def uhlmann_fidelity(rho, sigma) -> float:
    s = scipy.linalg.sqrtm(rho)
    return float(np.real(np.trace(scipy.linalg.sqrtm(s @ sigma @ s))))


def random_density(rng, dim: int, rank: int | None = None) -> np.ndarray:
    rank = dim if rank is None else rank
    G = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = G @ G.conj().T
    return rho / np.trace(rho).real
