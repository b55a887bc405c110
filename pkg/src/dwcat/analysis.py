"""State scoring: Uhlmann fidelity, Wigner grids, level populations."""

from __future__ import annotations

import csv
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import gammaln

from .spectral import EigenSystem, ScaledBasis, hermite_functions, parity_operator
from .states import DensityMatrix, as_matrix

# eigenvalues above this (negative) floor are treated as integrator noise
_CLIP = -1e-8
# matches the positivity monitor of the integrator
_NEGATIVE_TOL = -1e-4
_PURE = 1 - 1e-9
_ROUNDING = 64 * np.finfo(float).eps


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    w = np.where(w < _CLIP, 0.0, np.clip(w, 0.0, None))
    # eigenvalues at rounding level would contribute sqrt(eps) noise
    w[w < _ROUNDING * max(w.max(), 0.0)] = 0.0
    return (v * np.sqrt(w)) @ v.conj().T


def _check_state(m: np.ndarray, name: str) -> None:
    w = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
    if w[0] < _NEGATIVE_TOL:
        raise ValueError(f"{name} has eigenvalue {w[0]:.3e} below {_NEGATIVE_TOL}")


def _pure_vector(m: np.ndarray) -> np.ndarray | None:
    purity = float(np.real(np.vdot(m.conj().T, m)))
    if purity <= _PURE:
        return None
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    return v[:, -1]


def fidelity(rho, sigma) -> float:
    """Uhlmann fidelity tr sqrt(sqrt(rho) sigma sqrt(rho)), unsquared.

    If either argument is pure (purity above 1 - 1e-9) this reduces to
    sqrt(<psi|other|psi>).
    """
    a = as_matrix(rho)
    b = as_matrix(sigma)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch {a.shape} vs {b.shape}")
    _check_state(a, "rho")
    _check_state(b, "sigma")
    for pure, other in ((b, a), (a, b)):
        psi = _pure_vector(pure)
        if psi is not None:
            overlap = float(np.real(np.vdot(psi, other @ psi)))
            return math.sqrt(min(max(overlap, 0.0), 1.0))
    return fidelity_general(a, b)


def fidelity_general(rho, sigma) -> float:
    """Matrix-square-root evaluation with no pure-state shortcut.

    F is the trace norm of sqrt(rho) sqrt(sigma), which equals
    tr sqrt(sqrt(rho) sigma sqrt(rho)) and is symmetric by construction.
    """
    a = as_matrix(rho)
    b = as_matrix(sigma)
    s = np.linalg.svd(_psd_sqrt(a) @ _psd_sqrt(b), compute_uv=False)
    return float(min(s.sum(), 1.0 + 1e-10))


def purity(rho) -> float:
    m = as_matrix(rho)
    return float(np.real(np.vdot(m.conj().T, m)))


def parity_expectation(rho) -> float:
    m = as_matrix(rho)
    return float(np.real(np.trace(parity_operator(m.shape[0]) @ m)))


def populations(rho, eig: EigenSystem) -> np.ndarray:
    """Diagonal of rho in the instantaneous eigenbasis ``eig``."""
    if isinstance(rho, DensityMatrix) and rho.basis is not None and not rho.basis.same_frame(eig.basis):
        rho = rho.in_basis(eig.basis)
    m = as_matrix(rho)
    if m.shape[0] != eig.states.shape[0]:
        raise ValueError("state and eigensystem dimensions differ")
    V = eig.states
    return np.real(np.einsum("in,ij,jn->n", V.conj(), m, V))


def position_density(rho, basis: ScaledBasis, x) -> np.ndarray:
    """<x|rho|x> with x in z_zpm units."""
    m = as_matrix(rho)
    phi = hermite_functions(m.shape[0], np.asarray(x, dtype=float), basis.omega0)
    return np.real(np.einsum("mi,mn,ni->i", phi, m, phi))


@dataclass(eq=False)
class WignerGrid:
    """W(x, p) sampled on a rectangular grid.

    ``x_axis`` is in units of z_zpm and ``p_axis`` in units of hbar/z_zpm, a
    canonical pair with [x, p] = i, so W(0, 0) = <parity>/pi.
    ``values[i, j]`` is W(x_axis[i], p_axis[j]).
    """

    x_axis: np.ndarray
    p_axis: np.ndarray
    values: np.ndarray
    covers_support: bool = True
    meta: dict = field(default_factory=dict)

    def integral(self) -> float:
        return float(trapezoid(trapezoid(self.values, self.p_axis, axis=1), self.x_axis))

    def marginal_x(self) -> np.ndarray:
        return trapezoid(self.values, self.p_axis, axis=1)

    def value_at(self, x: float, p: float) -> float:
        i = int(np.argmin(np.abs(self.x_axis - x)))
        j = int(np.argmin(np.abs(self.p_axis - p)))
        return float(self.values[i, j])

    def to_csv(self, path) -> None:
        X, P = np.meshgrid(self.x_axis, self.p_axis, indexing="ij")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "p", "W"])
            for row in zip(X.ravel(), P.ravel(), self.values.ravel()):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "WignerGrid":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        x = np.unique(data[:, 0])
        p = np.unique(data[:, 1])
        return cls(x, p, data[:, 2].reshape(len(x), len(p)))

    # binary layout, little endian:
    #   b"WGRD", uint32 version, uint32 nx, uint32 np,
    #   float64 x_min, x_max, p_min, p_max, then nx*np float64 row-major values
    _MAGIC = b"WGRD"
    _HEADER = struct.Struct("<4sIII4d")

    def to_binary(self, path) -> None:
        header = self._HEADER.pack(
            self._MAGIC, 1, len(self.x_axis), len(self.p_axis),
            self.x_axis[0], self.x_axis[-1], self.p_axis[0], self.p_axis[-1],
        )
        Path(path).write_bytes(header + np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path) -> "WignerGrid":
        raw = Path(path).read_bytes()
        magic, version, nx, npts, x0, x1, p0, p1 = cls._HEADER.unpack_from(raw)
        if magic != cls._MAGIC or version != 1:
            raise ValueError(f"{path}: not a Wigner grid file")
        values = np.frombuffer(raw, dtype="<f8", offset=cls._HEADER.size).reshape(nx, npts)
        return cls(np.linspace(x0, x1, nx), np.linspace(p0, p1, npts), values.copy())


def _momentum_scale_density(m: np.ndarray, omega0: float, p: np.ndarray) -> np.ndarray:
    """Momentum distribution, p in units of hbar/z_zpm."""
    # <p|n> is (-i)^n times a Hermite function of P0 = p sqrt(2/omega0)
    phi = hermite_functions(m.shape[0], 2.0 * p / omega0, omega0)
    c = ((-1j) ** np.arange(m.shape[0]))[:, None] * phi
    return np.real(np.einsum("mi,mn,ni->i", c, m, c.conj())) * 2.0 / omega0


def _wigner_fock(m: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Wigner function of a Fock-basis density matrix at complex points alpha.

    Convention alpha = (X + iP)/sqrt(2) with [X, P] = i. Generalized Laguerre
    polynomials are generated by upward recurrence in n for each offset k.
    """
    dim = m.shape[0]
    B = 4.0 * np.abs(alpha) ** 2
    two_a = 2.0 * alpha
    W = np.zeros(alpha.shape)
    for k in range(dim):
        # diagonal k: entries rho[n, n+k]
        coeffs = np.diagonal(m, offset=k)
        if not np.any(np.abs(coeffs) > 0):
            continue
        L_prev = np.ones_like(B)
        L_cur = 1.0 + k - B
        acc = np.zeros(alpha.shape, dtype=complex)
        for n in range(dim - k):
            if n == 0:
                L_n = L_prev
            elif n == 1:
                L_n = L_cur
            else:
                L_next = ((2 * (n - 1) + 1 + k - B) * L_cur - (n - 1 + k) * L_prev) / n
                L_prev, L_cur = L_cur, L_next
                L_n = L_cur
            c = coeffs[n]
            if c == 0:
                continue
            norm = math.exp(0.5 * (gammaln(n + 1) - gammaln(n + k + 1)))
            acc += c * (-1) ** n * norm * L_n
        term = acc * two_a**k
        W += np.real(term) if k == 0 else 2.0 * np.real(term)
    return W * np.exp(-0.5 * B) / math.pi


def wigner(
    rho,
    basis: ScaledBasis | None = None,
    x_range: tuple[float, float] = (-60.0, 60.0),
    p_range: tuple[float, float] = (-0.5, 0.5),
    resolution: int | tuple[int, int] = 241,
    coverage_tol: float = 1e-3,
) -> WignerGrid:
    """Wigner quasiprobability of ``rho`` on an (x, p) grid.

    Evaluated in the Fock basis of the scaled oscillator and relabelled to
    x = z/z_zpm and p in units of hbar/z_zpm. ``covers_support`` is False
    when more than ``coverage_tol`` of either marginal lies off the grid.
    """
    if basis is None:
        if not isinstance(rho, DensityMatrix) or rho.basis is None:
            raise ValueError("a basis is required")
        basis = rho.basis
    m = as_matrix(rho)
    nx, npts = (resolution, resolution) if np.isscalar(resolution) else resolution
    x = np.linspace(*x_range, int(nx))
    p = np.linspace(*p_range, int(npts))
    r = basis.omega0
    X0 = x * math.sqrt(r / 2.0)
    P0 = p * math.sqrt(2.0 / r)
    alpha = (X0[:, None] + 1j * P0[None, :]) / math.sqrt(2.0)
    W = _wigner_fock(m, alpha)

    # fraction of the position and momentum distributions inside the grid
    xs = np.linspace(min(x_range[0], -1.0), max(x_range[1], 1.0), 4001)
    p_grid = np.linspace(p_range[0], p_range[1], 4001)
    px = _momentum_scale_density(m, r, p_grid)
    inside_x = float(trapezoid(position_density(m, basis, xs), xs))
    inside_p = float(trapezoid(px, p_grid))
    covers = min(inside_x, inside_p) >= 1.0 - coverage_tol
    if not covers:
        warnings.warn(
            f"Wigner grid holds only {inside_x:.4f} (x) and {inside_p:.4f} (p) of the state",
            stacklevel=2,
        )
    meta = {"x_coverage": inside_x, "p_coverage": inside_p, "omega0": r}
    return WignerGrid(x, p, W, covers_support=covers, meta=meta)
