"""Double-well Hamiltonian in a scaled oscillator basis.

Internally hbar = omega = 1. Energies are in units of hbar*omega, times in
1/omega and positions in units of the zero-point amplitude z_zpm, so the
Hamiltonian reads

    H = p^2/4 - zeta x^2/4 + gamma x^4 + V_3,    x = z / z_zpm.

It is represented in the Fock basis of an auxiliary oscillator of frequency
omega0 = r*omega. There x = (b + b^dag)/sqrt(r).

The cubic asymmetry V_3 = (xi/3) X^3, in units of hbar*omega_c, is written in
the quadrature X = sqrt(omega_c) x of a reference oscillator omega_c, by
default the double-well basis frequency sqrt(5e-4). In that basis it is
literally (xi/3)(b + b^dag)^3. Measured in bare z_zpm units, xi = 0.01 would
be a cubic that overwhelms the quartic confinement for all |x| < 1e5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import constants

HBAR = constants.hbar
K_B = constants.k

# reference oscillator in which the cubic coefficient xi is quoted
CUBIC_REFERENCE_OMEGA0 = math.sqrt(5e-4)

# extra Fock levels used when projecting polynomial operators onto the basis
_PAD = 4


@dataclass(frozen=True)
class UnitSystem:
    """Physical scales of the resonator and their dimensionless combinations."""

    mass: float
    omega: float
    beta: float

    def __post_init__(self):
        if self.mass <= 0 or self.omega <= 0 or self.beta <= 0:
            raise ValueError("mass, omega and beta must be positive")

    @property
    def gamma(self) -> float:
        return self.beta * HBAR / (16.0 * self.mass**2 * self.omega**3)

    @property
    def z_zpm(self) -> float:
        return math.sqrt(HBAR / (2.0 * self.mass * self.omega))

    @property
    def temperature_unit(self) -> float:
        """hbar*omega/k_B in kelvin."""
        return HBAR * self.omega / K_B

    def time_to_dimensionless(self, seconds: float) -> float:
        return seconds * self.omega

    def time_to_seconds(self, tau: float) -> float:
        return tau / self.omega


@dataclass(frozen=True)
class BasisPolicy:
    c1: float = 2.0
    c2: float = 5e-4
    zeta_switch: float = -2.5e-4
    dim: int = 50

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("c1 and c2 must be positive")
        if self.zeta_switch >= 0:
            raise ValueError("zeta_switch must be negative")
        if self.dim < 2:
            raise ValueError("dim must be at least 2")


@dataclass(frozen=True)
class ScaledBasis:
    dim: int
    theta: float
    zeta_ref: float
    omega0: float
    capped: bool = False

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dim must be at least 2")
        if self.theta <= 0 or self.omega0 <= 0:
            raise ValueError("theta and omega0 must be positive")

    def same_frame(self, other: "ScaledBasis") -> bool:
        return self.dim == other.dim and math.isclose(
            self.omega0, other.omega0, rel_tol=1e-14, abs_tol=0.0
        )


@dataclass(frozen=True)
class PotentialParams:
    zeta: float
    gamma: float
    xi: float = 0.0
    cubic_omega0: float = CUBIC_REFERENCE_OMEGA0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.zeta < -1:
            raise ValueError(f"zeta must be >= -1, got {self.zeta}")
        if self.cubic_omega0 <= 0:
            raise ValueError("cubic_omega0 must be positive")

    @property
    def cubic_coefficient(self) -> float:
        """Coefficient of x^3 (x in z_zpm units) in H / (hbar omega)."""
        return self.xi / 3.0 * self.cubic_omega0**2.5

    def at(self, zeta: float) -> "PotentialParams":
        return PotentialParams(zeta=zeta, gamma=self.gamma, xi=self.xi, cubic_omega0=self.cubic_omega0)


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Instantaneous eigenpairs of the double-well Hamiltonian.

    ``energies`` are in units of hbar*omega (not hbar*omega0) and the columns
    of ``states`` are expressed in ``basis``.
    """

    energies: np.ndarray
    states: np.ndarray
    parities: tuple
    zeta: float
    basis: ScaledBasis
    params: PotentialParams | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return len(self.energies)

    def position(self) -> np.ndarray:
        """<m|x|n> in z_zpm units."""
        if "x" not in self._cache:
            x = position_operator(self.basis)
            self._cache["x"] = self.states.conj().T @ x @ self.states
        return self._cache["x"]

    def position_squared(self) -> np.ndarray:
        """<m|x^2|n> in z_zpm^2 units."""
        if "x2" not in self._cache:
            x2 = position_operator(self.basis, power=2)
            self._cache["x2"] = self.states.conj().T @ x2 @ self.states
        return self._cache["x2"]

    def ground_state(self) -> np.ndarray:
        return self.states[:, 0]

    def to_dict(self, levels: int | None = None) -> dict:
        k = self.dim if levels is None else min(levels, self.dim)
        return {
            "zeta": self.zeta,
            "omega0": self.basis.omega0,
            "theta": self.basis.theta,
            "dim": self.basis.dim,
            "energies": [float(e) for e in self.energies[:k]],
            "parities": list(self.parities[:k]),
        }


def build_basis(zeta: float, policy: BasisPolicy) -> ScaledBasis:
    """Pick the oscillator basis used at control value ``zeta``.

    For ``zeta <= policy.zeta_switch`` the basis follows theta = c1, so
    omega0 = sqrt(c1 |zeta|). Above the switch theta*|zeta| is pinned to c2,
    which keeps omega0 finite through zeta = 0.
    """
    if zeta < -1:
        raise ValueError(f"zeta must be >= -1, got {zeta}")
    if policy.dim < 2:
        raise ValueError("dim must be at least 2")
    if zeta <= policy.zeta_switch:
        return ScaledBasis(
            dim=policy.dim,
            theta=policy.c1,
            zeta_ref=zeta,
            omega0=math.sqrt(policy.c1 * abs(zeta)),
        )
    theta = policy.c2 / abs(zeta) if zeta != 0 else math.inf
    return ScaledBasis(
        dim=policy.dim,
        theta=theta,
        zeta_ref=zeta,
        omega0=math.sqrt(policy.c2),
        capped=True,
    )


def ladder_operators(basis: ScaledBasis) -> tuple[np.ndarray, np.ndarray]:
    b = np.diag(np.sqrt(np.arange(1, basis.dim, dtype=float)), 1)
    return b, b.T.copy()


def _padded_quadrature(dim: int) -> np.ndarray:
    b = np.diag(np.sqrt(np.arange(1, dim + _PAD, dtype=float)), 1)
    return b + b.T


def position_operator(basis: ScaledBasis, power: int = 1) -> np.ndarray:
    """Matrix of x**power (x in z_zpm units), exactly projected onto the basis."""
    dim = basis.dim
    q = _padded_quadrature(dim)
    out = np.linalg.matrix_power(q, power)[:dim, :dim]
    return out / basis.omega0 ** (power / 2.0)


def parity_operator(dim: int) -> np.ndarray:
    return np.diag((-1.0) ** np.arange(dim))


def build_hamiltonian(params: PotentialParams, basis: ScaledBasis) -> np.ndarray:
    """H / (hbar omega0) in the scaled basis.

    Polynomials in b + b^dag are formed in a slightly larger Fock space and
    then cropped. This gives the exact matrix elements of the projected
    operator, which the truncated products would spoil near the cutoff.
    """
    if not math.isclose(basis.zeta_ref, params.zeta, rel_tol=1e-12, abs_tol=1e-15):
        raise ValueError(
            f"basis built for zeta={basis.zeta_ref}, params have zeta={params.zeta}"
        )
    dim = basis.dim
    n = dim + _PAD
    b = np.diag(np.sqrt(np.arange(1, n, dtype=float)), 1)
    q = b + b.T
    p2 = -(b - b.T) @ (b - b.T)
    q2 = q @ q
    zeta = params.zeta
    if basis.capped:
        c2 = basis.omega0**2
        h = p2 / 4 - zeta * q2 / (4 * c2) + params.gamma * (q2 @ q2) / c2**1.5
    else:
        scale = basis.theta * abs(zeta)
        h = (
            p2 / 4
            - np.sign(zeta) * q2 / (4 * basis.theta)
            + params.gamma * (q2 @ q2) / scale**1.5
        )
    if params.xi:
        h = h + params.cubic_coefficient * (q2 @ q) / basis.omega0**2.5
    h = h[:dim, :dim]
    return 0.5 * (h + h.T)


def hamiltonian_in_omega(params: PotentialParams, basis: ScaledBasis) -> np.ndarray:
    """H / (hbar omega) for ``params`` represented in an arbitrary scaled basis.

    Unlike :func:`build_hamiltonian` this does not require the basis to match
    ``params.zeta``; it is what the time integrator uses in a fixed frame.
    """
    dim = basis.dim
    r = basis.omega0
    n = dim + _PAD
    b = np.diag(np.sqrt(np.arange(1, n, dtype=float)), 1)
    q = b + b.T
    p2 = -(b - b.T) @ (b - b.T)
    q2 = q @ q
    h = r * p2 / 4 - params.zeta * q2 / (4 * r) + params.gamma * (q2 @ q2) / r**2
    if params.xi:
        h = h + params.cubic_coefficient * (q2 @ q) / r**1.5
    h = h[:dim, :dim]
    return 0.5 * (h + h.T)


def _fix_phases(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs), axis=0)
    lead = vecs[idx, np.arange(vecs.shape[1])]
    return vecs * (np.abs(lead) / lead)[None, :]


def eigensystem(
    H: np.ndarray,
    params: PotentialParams,
    basis: ScaledBasis,
    *,
    parity_threshold: float = 0.99,
) -> EigenSystem:
    """Diagonalize ``H`` (units hbar*omega0) and label parities.

    When ``H`` commutes with parity the even and odd blocks are diagonalized
    separately, so near-degenerate doublets never mix.
    """
    H = np.asarray(H)
    if not np.allclose(H, H.conj().T, rtol=0, atol=1e-12 * max(np.abs(H).max(), 1.0)):
        raise ValueError("Hamiltonian is not Hermitian")
    dim = H.shape[0]
    even = np.arange(0, dim, 2)
    odd = np.arange(1, dim, 2)
    symmetric = np.abs(H[np.ix_(even, odd)]).max(initial=0.0) == 0.0
    try:
        if symmetric:
            e_even, v_even = np.linalg.eigh(H[np.ix_(even, even)])
            e_odd, v_odd = np.linalg.eigh(H[np.ix_(odd, odd)])
            energies = np.concatenate([e_even, e_odd])
            states = np.zeros((dim, dim), dtype=H.dtype)
            states[np.ix_(even, np.arange(len(even)))] = v_even
            states[np.ix_(odd, np.arange(len(even), dim))] = v_odd
            # stable sort keeps even before odd on exact ties
            order = np.argsort(energies, kind="stable")
            energies, states = energies[order], states[:, order]
        else:
            energies, states = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"diagonalization failed at zeta={params.zeta}") from exc
    states = _fix_phases(states)
    pdiag = (-1.0) ** np.arange(dim)
    expect = np.real(np.einsum("in,i,in->n", states.conj(), pdiag, states))
    parities = tuple(
        "even" if p > parity_threshold else "odd" if p < -parity_threshold else "undefined"
        for p in expect
    )
    return EigenSystem(
        energies=energies * basis.omega0,
        states=states,
        parities=parities,
        zeta=params.zeta,
        basis=basis,
        params=params,
    )


def diagonalize(params: PotentialParams, policy: BasisPolicy) -> EigenSystem:
    """Build the policy basis for ``params.zeta`` and diagonalize there."""
    basis = build_basis(params.zeta, policy)
    return eigensystem(build_hamiltonian(params, basis), params, basis)


def relative_error(E_high, E_low) -> np.ndarray:
    """Per-level relative discrepancy |E_H - E_L| / |E_H + E_L|.

    Levels whose sum vanishes cannot be compared and come back as NaN.
    """
    E_high = np.asarray(E_high, dtype=float)
    E_low = np.asarray(E_low, dtype=float)
    if len(E_high) < len(E_low):
        raise ValueError("E_high must be at least as long as E_low")
    n = len(E_low)
    num = np.abs(E_high[:n] - E_low)
    den = np.abs(E_high[:n] + E_low)
    with np.errstate(divide="ignore", invalid="ignore"):
        eps = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)
    return eps


def gap(eig: EigenSystem, m: int, n: int) -> float:
    """Transition frequency delta_mn = E_m - E_n in units of omega."""
    if not (0 <= m < eig.dim and 0 <= n < eig.dim):
        raise IndexError(f"levels ({m}, {n}) outside 0..{eig.dim - 1}")
    return float(eig.energies[m] - eig.energies[n])


def align_signs(prev: np.ndarray, new: np.ndarray, overlap: np.ndarray | None = None) -> np.ndarray:
    """Flip columns of ``new`` so each has non-negative overlap with ``prev``.

    ``overlap`` is the basis overlap <prev basis|new basis>; identity if None.
    """
    if overlap is None:
        ov = np.einsum("in,in->n", prev.conj(), new)
    else:
        ov = np.einsum("in,ij,jn->n", prev.conj(), overlap, new)
    phase = np.where(np.abs(ov) > 0, ov.conj() / np.maximum(np.abs(ov), 1e-300), 1.0)
    return new * phase[None, :]


def hermite_functions(nmax: int, x: np.ndarray, omega0: float = 1.0) -> np.ndarray:
    """Fock wavefunctions <x|n> of the omega0 oscillator, x in z_zpm units.

    Returns an array of shape (nmax, len(x)), normalized so that
    sum_x |<x|n>|^2 dx = 1.
    """
    x = np.asarray(x, dtype=float)
    y = x * math.sqrt(omega0 / 2.0)
    out = np.empty((nmax, x.size))
    out[0] = math.pi**-0.25 * np.exp(-(y**2) / 2)
    if nmax > 1:
        out[1] = math.sqrt(2.0) * y * out[0]
    for k in range(2, nmax):
        out[k] = math.sqrt(2.0 / k) * y * out[k - 1] - math.sqrt((k - 1) / k) * out[k - 2]
    return out * (omega0 / 2.0) ** 0.25


def basis_overlap(a: ScaledBasis, b: ScaledBasis, points: int | None = None) -> np.ndarray:
    """Overlap matrix <n_a|m_b> between two scaled bases."""
    if a.same_frame(b):
        return np.eye(a.dim)
    lo = min(a.omega0, b.omega0)
    # classical turning point of the highest level, with margin
    extent = 1.3 * math.sqrt(4.0 * max(a.dim, b.dim) / lo) + 10.0 / math.sqrt(lo)
    if points is None:
        hi = max(a.omega0, b.omega0)
        points = int(min(200_000, max(4000, 40 * extent * math.sqrt(hi * max(a.dim, b.dim)))))
    x = np.linspace(-extent, extent, points)
    dx = x[1] - x[0]
    fa = hermite_functions(a.dim, x, a.omega0)
    fb = hermite_functions(b.dim, x, b.omega0)
    return (fa * dx) @ fb.T
