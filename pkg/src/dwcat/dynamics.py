"""Open-system evolution of the resonator through the preparation protocol.

Dimensionless master equation in tau = omega t:

    d rho/d tau = -i [H_DW + H_drv, rho] + (1/2) [x, rho A^dag - A rho]

with x in z_zpm units and the thermal jump operator

    A = sum_{m>n} (delta_mn / Q) x_mn [ N(delta_mn) |m><n| + (N(delta_mn)+1) |n><m| ]

built from the instantaneous eigenpairs. For a harmonic mode this gives the
energy relaxation rate omega/Q toward the Bose occupation.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .analysis import fidelity, purity
from .control import RampSchedule, TransitionSet, cd_eigen_coefficients
from .spectral import (
    BasisPolicy,
    EigenSystem,
    PotentialParams,
    UnitSystem,
    align_signs,
    basis_overlap,
    build_basis,
    diagonalize,
    eigensystem,
    hamiltonian_in_omega,
    position_operator,
)
from .states import DensityMatrix, InvariantViolation, NumericalAbort

log = logging.getLogger(__name__)

STAGE2_MODES = ("adiabatic", "evolve")


@dataclass(frozen=True)
class BathParams:
    """Thermal environment. ``quality_factor = inf`` switches dissipation off."""

    temperature: float = 0.0
    quality_factor: float = math.inf
    unit: UnitSystem | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if not self.quality_factor > 0:
            raise ValueError("quality_factor must be positive")
        if self.temperature > 0 and self.unit is None:
            raise ValueError("a UnitSystem is required at finite temperature")

    @property
    def closed(self) -> bool:
        return math.isinf(self.quality_factor)

    @property
    def reduced_temperature(self) -> float:
        """k_B T / (hbar omega)."""
        if self.temperature == 0:
            return 0.0
        return self.temperature / self.unit.temperature_unit

    def to_dict(self) -> dict:
        return {"temperature": self.temperature, "quality_factor": self.quality_factor}


def thermal_occupation(delta: float, bath: BathParams) -> float:
    """Bose occupation 1/(exp(hbar delta omega / k_B T) - 1)."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    theta = bath.reduced_temperature
    if theta == 0:
        return 0.0
    y = delta / theta
    return math.exp(-y) / -math.expm1(-y)


def _rate_factors(delta: np.ndarray, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """delta*N(delta) and delta*(N(delta)+1), finite as delta -> 0."""
    delta = np.asarray(delta, dtype=float)
    if theta == 0:
        return np.zeros_like(delta), np.clip(delta, 0.0, None)
    y = np.clip(delta, 0.0, None) / theta
    small = y < 1e-8
    safe = np.where(small, 1.0, y)
    down_up = np.where(small, 1.0 - 0.5 * y, safe * np.exp(-safe) / -np.expm1(-safe)) * theta
    return down_up, down_up + np.clip(delta, 0.0, None)


def jump_operator_eigen(eig: EigenSystem, bath: BathParams, levels: int | None = None) -> np.ndarray:
    """Jump operator in the instantaneous eigenbasis, restricted to ``levels``."""
    K = eig.dim if levels is None else min(levels, eig.dim)
    A = np.zeros((K, K), dtype=complex)
    if bath.closed:
        return A
    E = eig.energies[:K]
    x = eig.position()[:K, :K]
    m, n = np.tril_indices(K, -1)  # m > n
    up, down = _rate_factors(E[m] - E[n], bath.reduced_temperature)
    Q = bath.quality_factor
    A[m, n] = up * x[m, n] / Q
    A[n, m] = down * x[m, n] / Q
    return A


def jump_operator(eig: EigenSystem, bath: BathParams) -> np.ndarray:
    """Jump operator expressed in the eigensystem's scaled basis."""
    V = eig.states
    return V @ jump_operator_eigen(eig, bath) @ V.conj().T


def rhs(rho, H_total: np.ndarray, A: np.ndarray | None, z_op: np.ndarray | None) -> np.ndarray:
    """-i[H, rho] + (1/2)[x, rho A^dag - A rho]."""
    r = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    if H_total.shape != r.shape:
        raise ValueError(f"dimension mismatch: H {H_total.shape}, rho {r.shape}")
    out = -1j * (H_total @ r - r @ H_total)
    if A is not None:
        if A.shape != r.shape or z_op.shape != r.shape:
            raise ValueError("dissipator operators do not match rho")
        Y = r @ A.conj().T - A @ r
        out = out + 0.5 * (z_op @ Y - Y @ z_op)
    return out


@dataclass(frozen=True)
class StepPolicy:
    """Integrator settings.

    ``refresh`` is the spacing of the eigensystem refresh grid in integrator
    steps (0.5 puts a refresh on every RK4 stage time); operators are
    interpolated linearly in between. ``frame`` selects the fixed scaled
    basis or the instantaneous eigenbasis truncated to ``levels`` states.
    """

    max_phase: float = 0.05
    max_step: float = 0.5
    min_step: float = 1e-7
    refresh: float = 0.5
    stride: int = 20
    check_convergence: bool = False
    convergence_tol: float = 1e-4
    max_halvings: int = 3
    frame: str = "fixed"
    levels: int = 26
    check_invariants: bool = True
    trace_tol: float = 1e-7
    hermiticity_tol: float = 1e-9
    positivity_floor: float = -1e-4
    steps: int | None = None

    def __post_init__(self):
        if self.frame not in ("fixed", "adiabatic"):
            raise ValueError(f"unknown frame {self.frame!r}")
        if not (self.max_phase > 0 and self.max_step > 0 and self.refresh > 0):
            raise ValueError("max_phase, max_step and refresh must be positive")
        if self.stride < 1:
            raise ValueError("stride must be at least 1")
        if self.levels < 2:
            raise ValueError("levels must be at least 2")

    def to_dict(self) -> dict:
        return asdict(self)


STAGE3_STEPPING = StepPolicy()
STAGE2_STEPPING = StepPolicy(frame="adiabatic", refresh=10.0, max_step=2e-3)


@dataclass(eq=False)
class Trajectory:
    times: np.ndarray
    zetas: np.ndarray
    states: list
    fidelity_to_instantaneous_ground: np.ndarray
    populations: np.ndarray
    purities: np.ndarray
    final_state: DensityMatrix
    meta: dict = field(default_factory=dict)

    @property
    def final_fidelity(self) -> float:
        return float(self.fidelity_to_instantaneous_ground[-1])

    def extend(self, other: "Trajectory") -> "Trajectory":
        """Append a later stage, dropping its duplicated first sample."""
        k = min(self.populations.shape[1], other.populations.shape[1])
        skip = 1 if len(self.times) and len(other.times) and other.times[0] <= self.times[-1] else 0
        stages = self.meta.get("stages", [self.meta]) + other.meta.get("stages", [other.meta])
        return Trajectory(
            times=np.concatenate([self.times, other.times[skip:]]),
            zetas=np.concatenate([self.zetas, other.zetas[skip:]]),
            states=self.states + other.states[skip:],
            fidelity_to_instantaneous_ground=np.concatenate(
                [self.fidelity_to_instantaneous_ground, other.fidelity_to_instantaneous_ground[skip:]]
            ),
            populations=np.vstack([self.populations[:, :k], other.populations[skip:, :k]]),
            purities=np.concatenate([self.purities, other.purities[skip:]]),
            final_state=other.final_state,
            meta={"stages": stages},
        )

    def rows(self) -> list[dict]:
        out = []
        for i, t in enumerate(self.times):
            row = {
                "time": float(t),
                "zeta": float(self.zetas[i]),
                "fidelity": float(self.fidelity_to_instantaneous_ground[i]),
                "purity": float(self.purities[i]),
            }
            row.update({f"p{n}": float(p) for n, p in enumerate(self.populations[i])})
            out.append(row)
        return out

    def to_csv(self, path) -> None:
        rows = self.rows()
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            for row in rows:
                w.writerow({k: repr(v) for k, v in row.items()})

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps({"samples": self.rows(), "meta": _jsonable(self.meta)}, indent=1))

    @staticmethod
    def load_rows(path) -> list[dict]:
        """Read the sample table back from a CSV or JSON export."""
        path = Path(path)
        if path.suffix == ".json":
            return json.loads(path.read_text())["samples"]
        with open(path, newline="") as fh:
            return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


# ------------------------------------------------------------------ stepping


def _rk4(f, y, t, h):
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + (0.5 * h) * k1)
    k3 = f(t + 0.5 * h, y + (0.5 * h) * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class _RefreshGrid:
    """Operators rebuilt on a uniform time grid and interpolated in between."""

    def __init__(self, t0: float, t1: float, count: int, build):
        self.t0 = t0
        self.t1 = t1
        self.count = count
        self.spacing = (t1 - t0) / count
        self.build = build
        self.cache: dict[int, tuple] = {}
        self.builds = 0

    def node(self, j: int) -> tuple:
        if j not in self.cache:
            t = self.t1 if j >= self.count else self.t0 + j * self.spacing
            self.cache[j] = self.build(j, t)
            self.builds += 1
            for k in [k for k in self.cache if k < j - 2]:
                del self.cache[k]
        return self.cache[j]

    def at(self, t: float) -> tuple:
        u = (t - self.t0) / self.spacing
        j = int(math.floor(u + 1e-9))
        w = u - j
        j = min(max(j, 0), self.count)
        if abs(w) < 1e-9 or j == self.count:
            return self.node(j)
        a, b = self.node(j), self.node(j + 1)
        return tuple(_lerp(x, y, w) for x, y in zip(a, b))


def _lerp(x, y, w: float):
    if x is None:
        return None
    if isinstance(x, (np.ndarray, float, complex)):
        return (1.0 - w) * x + w * y
    # non-numeric payloads (eigensystems) are taken from the nearer node
    return x if w < 0.5 else y


def _ground_density(eig: EigenSystem) -> np.ndarray:
    g = eig.states[:, 0]
    return np.outer(g, g.conj())


def _check(rho: np.ndarray, stepping: StepPolicy, t: float, step: int) -> None:
    if not stepping.check_invariants:
        return
    try:
        DensityMatrix(rho).check(
            herm_tol=stepping.hermiticity_tol,
            trace_tol=stepping.trace_tol,
            min_eig=stepping.positivity_floor,
        )
    except InvariantViolation as exc:
        exc.diagnostics.update({"time": t, "step": step})
        raise


def _step_count(duration: float, width: float, stepping: StepPolicy) -> int:
    if stepping.steps is not None:
        return int(stepping.steps)
    h = min(stepping.max_step, stepping.max_phase / max(width, 1e-300))
    n = max(1, math.ceil(duration / h - 1e-9))
    if duration / n < stepping.min_step:
        raise NumericalAbort(f"step size {duration / n:.3e} below the floor {stepping.min_step:.1e}")
    return n


def _sample_rate(schedule: RampSchedule, count: int = 9) -> list[tuple[float, float]]:
    ts = np.linspace(schedule.t_start, schedule.t_end, count)
    return [schedule(float(t)) for t in ts]


def _evolve_fixed(rho0: DensityMatrix, schedule, transitions, bath, params, stepping, n_steps):
    basis = rho0.basis
    r = basis.omega0
    H0 = hamiltonian_in_omega(params.at(0.0), basis)
    dHdz = -0.25 * position_operator(basis, power=2)
    x_op = position_operator(basis)
    dissipative = not bath.closed
    driven = bool(transitions)
    if driven and schedule.kind == "sqrt":
        raise ValueError("the sqrt ramp has an unbounded rate at its start; counterdiabatic drive undefined")

    def eig_at(zeta: float) -> EigenSystem:
        return eigensystem((H0 + zeta * dHdz) / r, params.at(zeta), basis)

    def build(j, t):
        zeta, _ = schedule(t)
        eig = eig_at(zeta)
        V = eig.states
        unit_drive = None
        if driven:
            unit_drive = V @ cd_eigen_coefficients(eig, 1.0, transitions) @ V.conj().T
        A = V @ jump_operator_eigen(eig, bath) @ V.conj().T if dissipative else None
        return unit_drive, A

    grid = None
    if driven or dissipative:
        count = max(1, math.ceil(n_steps / stepping.refresh - 1e-9))
        grid = _RefreshGrid(schedule.t_start, schedule.t_end, count, build)

    def hamiltonian(t):
        zeta, zdot = schedule(t)
        H = H0 + zeta * dHdz
        A = None
        if grid is not None:
            unit_drive, A = grid.at(t)
            if unit_drive is not None:
                H = H + zdot * unit_drive
        return H, A

    m0 = rho0.matrix
    pure = bath.closed and purity(m0) > 1 - 1e-12
    if pure:
        w, v = np.linalg.eigh(m0)
        y = v[:, -1].astype(complex)

        def f(t, psi):
            H, _ = hamiltonian(t)
            return -1j * (H @ psi)

        to_rho = lambda psi: np.outer(psi, psi.conj())
    else:
        y = m0.astype(complex)

        def f(t, rho):
            H, A = hamiltonian(t)
            return rhs(rho, H, A, x_op if A is not None else None)

        to_rho = lambda rho: rho

    h = schedule.duration / n_steps
    samples = []

    def record(step, t, y):
        rho = to_rho(y)
        _check(rho, stepping, t, step)
        zeta, _ = schedule(t)
        eig = eig_at(zeta)
        samples.append((t, zeta, rho, eig))

    record(0, schedule.t_start, y)
    for k in range(n_steps):
        t = schedule.t_start + k * h
        y = _rk4(f, y, t, h)
        if (k + 1) % stepping.stride == 0 or k + 1 == n_steps:
            record(k + 1, schedule.t_start + (k + 1) * h if k + 1 < n_steps else schedule.t_end, y)
    meta = {"frame": "fixed", "steps": n_steps, "step": h, "pure_state_path": pure,
            "refreshes": 0 if grid is None else grid.builds}
    return samples, basis, meta


def _evolve_adiabatic(rho0: DensityMatrix, schedule, transitions, bath, params, stepping, n_steps, policy):
    K = stepping.levels
    driven = bool(transitions)
    if driven and schedule.kind == "sqrt":
        raise ValueError("the sqrt ramp has an unbounded rate at its start; counterdiabatic drive undefined")
    if transitions and transitions.highest >= K:
        raise ValueError("transition set exceeds the tracked levels")
    nodes: dict[int, EigenSystem] = {}

    def eig_node(j, t):
        zeta, _ = schedule(t)
        eig = diagonalize(params.at(zeta), policy)
        if j - 1 in nodes:
            prev = nodes[j - 1]
            S = basis_overlap(prev.basis, eig.basis)
            states = align_signs(prev.states, eig.states, S)
            eig = EigenSystem(eig.energies, states, eig.parities, eig.zeta, eig.basis, eig.params)
        nodes[j] = eig
        for k in [k for k in nodes if k < j - 2]:
            del nodes[k]
        return eig

    def build(j, t):
        if j > 0 and j - 1 not in nodes:
            grid.node(j - 1)
        eig = eig_node(j, t)
        E = eig.energies[:K]
        x2 = eig.position_squared()[:K, :K]
        d = E[None, :] - E[:, None]  # E_m - E_n at [n, m]
        np.fill_diagonal(d, 1.0)
        gauge = -0.25j * x2 / d  # i <n|dH/dzeta|m> / (E_m - E_n)
        np.fill_diagonal(gauge, 0.0)
        drive = cd_eigen_coefficients(eig, 1.0, transitions)[:K, :K] if driven else 0.0
        A = jump_operator_eigen(eig, bath, K) if not bath.closed else None
        xk = eig.position()[:K, :K].astype(complex) if A is not None else None
        return np.diag(E).astype(complex), drive - gauge, A, xk, eig

    count = max(1, math.ceil(n_steps / stepping.refresh - 1e-9))
    grid = _RefreshGrid(schedule.t_start, schedule.t_end, count, build)

    def f(t, rho):
        D, G, A, xk, _ = grid.at(t)
        _, zdot = schedule(t)
        return rhs(rho, D + zdot * G, A, xk)

    eig0 = grid.node(0)[4]
    S = basis_overlap(eig0.basis, rho0.basis) if rho0.basis is not None else np.eye(eig0.dim)
    V = eig0.states[:, :K].conj().T @ S
    y = V @ rho0.matrix @ V.conj().T
    lost = 1.0 - float(np.real(np.trace(y)))
    if lost > 1e-6:
        warnings.warn(f"initial state has {lost:.2e} weight outside the tracked levels", stacklevel=3)
    y = y / np.trace(y)

    h = schedule.duration / n_steps
    samples = []

    def record(step, t, y):
        _check(y, stepping, t, step)
        eig = grid.at(t)[4]
        zeta, _ = schedule(t)
        samples.append((t, zeta, y, eig))

    record(0, schedule.t_start, y)
    for k in range(n_steps):
        t = schedule.t_start + k * h
        y = _rk4(f, y, t, h)
        if (k + 1) % stepping.stride == 0 or k + 1 == n_steps:
            tk = schedule.t_start + (k + 1) * h if k + 1 < n_steps else schedule.t_end
            # sample eigensystems only on refresh nodes
            j = round((tk - grid.t0) / grid.spacing)
            if abs((tk - grid.t0) / grid.spacing - j) < 1e-6:
                record(k + 1, tk, y)
    meta = {"frame": "adiabatic", "steps": n_steps, "step": h, "levels": K, "refreshes": grid.builds}
    return samples, None, meta


def _to_trajectory(samples, frame_basis, meta, K: int | None) -> Trajectory:
    times, zetas, states, fids, pops, purs = [], [], [], [], [], []
    for t, zeta, rho, eig in samples:
        if frame_basis is None:
            # eigenframe: rho is K x K in the eigenbasis of ``eig``
            k = rho.shape[0]
            Vk = eig.states[:, :k]
            full = Vk @ rho @ Vk.conj().T
            dm = DensityMatrix(full, eig.basis)
            p = np.real(np.diag(rho))
            F = math.sqrt(min(max(p[0], 0.0), 1.0))
        else:
            dm = DensityMatrix(rho, frame_basis)
            V = eig.states
            p = np.real(np.einsum("in,ij,jn->n", V.conj(), rho, V))
            g0 = eig.states[:, 0]
            F = math.sqrt(min(max(float(np.real(np.vdot(g0, rho @ g0))), 0.0), 1.0))
        times.append(t)
        zetas.append(zeta)
        states.append(dm)
        fids.append(F)
        pops.append(p if K is None else p[:K])
        purs.append(purity(rho))
    width = min(len(p) for p in pops)
    return Trajectory(
        times=np.array(times),
        zetas=np.array(zetas),
        states=states,
        fidelity_to_instantaneous_ground=np.array(fids),
        populations=np.array([p[:width] for p in pops]),
        purities=np.array(purs),
        final_state=states[-1],
        meta=meta,
    )


def _spectral_width(schedule, transitions, bath, params, basis, stepping, policy) -> float:
    width = 0.0
    drive = 0.0
    for zeta, zdot in _sample_rate(schedule):
        if stepping.frame == "fixed":
            eig = eigensystem(hamiltonian_in_omega(params.at(zeta), basis) / basis.omega0, params.at(zeta), basis)
            E = eig.energies
        else:
            eig = diagonalize(params.at(zeta), policy)
            E = eig.energies[: stepping.levels]
        width = max(width, float(E[-1] - E[0]))
        if transitions and math.isfinite(zdot):
            K = cd_eigen_coefficients(eig, zdot, transitions)
            drive = max(drive, float(np.linalg.norm(K, 2)))
        if stepping.frame == "adiabatic" and math.isfinite(zdot):
            x2 = eig.position_squared()[: stepping.levels, : stepping.levels]
            d = E[None, :] - E[:, None]
            np.fill_diagonal(d, np.inf)
            drive = max(drive, float(np.linalg.norm(0.25 * zdot * x2 / d, 2)))
    return width + drive


def evolve(
    rho0: DensityMatrix,
    schedule: RampSchedule,
    transitions: TransitionSet,
    bath: BathParams,
    params: PotentialParams,
    stepping: StepPolicy = STAGE3_STEPPING,
    policy: BasisPolicy = BasisPolicy(),
) -> Trajectory:
    """Integrate the master equation along ``schedule``.

    In the fixed frame ``rho0.basis`` is used throughout. The adiabatic frame
    follows the instantaneous eigenbasis (each built in its policy basis) and
    keeps ``stepping.levels`` states; there the inertial coupling
    -i zeta_dot <n|d_zeta m> is added explicitly and the listed drive terms
    cancel the corresponding entries of it.
    """
    if stepping.frame == "fixed" and rho0.basis is None:
        raise ValueError("fixed-frame evolution needs a state with a basis")
    if stepping.frame == "fixed" and rho0.basis.dim != rho0.dim:
        raise ValueError("state and basis dimensions differ")
    ref_basis = rho0.basis if rho0.basis is not None else build_basis(schedule.zeta_start, policy)
    width = _spectral_width(schedule, transitions, bath, params, ref_basis, stepping, policy)
    n_steps = _step_count(schedule.duration, width, stepping)

    def run(n):
        if stepping.frame == "fixed":
            samples, fb, meta = _evolve_fixed(rho0, schedule, transitions, bath, params, stepping, n)
            return _to_trajectory(samples, fb, meta, None)
        samples, fb, meta = _evolve_adiabatic(rho0, schedule, transitions, bath, params, stepping, n, policy)
        return _to_trajectory(samples, fb, meta, stepping.levels)

    traj = run(n_steps)
    traj.meta.update({"schedule": schedule.to_dict(), "transitions": [list(p) for p in transitions.pairs],
                      "bath": bath.to_dict(), "xi": params.xi, "spectral_width": width})
    if stepping.check_convergence:
        history = [(n_steps, traj.final_fidelity)]
        converged = False
        n = n_steps
        for _ in range(stepping.max_halvings):
            n *= 2
            finer = run(n)
            history.append((n, finer.final_fidelity))
            delta = abs(finer.final_fidelity - traj.final_fidelity)
            finer.meta.update({k: v for k, v in traj.meta.items() if k not in finer.meta})
            traj = finer
            if delta < stepping.convergence_tol:
                converged = True
                break
        if not converged:
            warnings.warn("step halving did not converge the final fidelity", stacklevel=2)
        traj.meta["convergence"] = {
            "history": [[int(a), float(b)] for a, b in history],
            "change": abs(history[-1][1] - history[-2][1]),
            "converged": converged,
        }
    return traj


# -------------------------------------------------------------- initial data


def effective_beta(occupation: float) -> float:
    """Inverse temperature (in 1/hbar omega) of a harmonic mode with mean occupation N0."""
    if occupation < 0:
        raise ValueError("occupation must be non-negative")
    if occupation == 0:
        return math.inf
    return math.log1p(1.0 / occupation)


def initial_thermal_state(eig: EigenSystem, occupation: float) -> DensityMatrix:
    """Diagonal Gibbs state in ``eig``'s eigenbasis with harmonic mean occupation N0.

    The effective temperature is fixed by the harmonic relation
    N0 = 1/(exp(beta) - 1) and applied to the actual level spacings.
    """
    beta = effective_beta(occupation)
    p = np.zeros(eig.dim)
    if math.isinf(beta):
        p[0] = 1.0
    else:
        p = np.exp(-beta * (eig.energies - eig.energies[0]))
        p /= p.sum()
    V = eig.states
    return DensityMatrix((V * p) @ V.conj().T, eig.basis)


def gibbs_state(eig: EigenSystem, bath: BathParams) -> DensityMatrix:
    """exp(-H/k_B T)/Z built from the eigenpairs of ``eig``."""
    theta = bath.reduced_temperature
    p = np.zeros(eig.dim)
    if theta == 0:
        p[0] = 1.0
    else:
        p = np.exp(-(eig.energies - eig.energies[0]) / theta)
        p /= p.sum()
    V = eig.states
    return DensityMatrix((V * p) @ V.conj().T, eig.basis)


def hold(rho: DensityMatrix, params: PotentialParams, bath: BathParams, duration: float,
         stepping: StepPolicy = StepPolicy(refresh=50.0)) -> Trajectory:
    """Evolve at constant zeta = params.zeta (no drive) for ``duration``."""
    zeta = params.zeta
    schedule = RampSchedule("linear", zeta, zeta, duration)
    return evolve(rho, schedule, TransitionSet(), bath, params, stepping)


# ------------------------------------------------------------------ protocol


def _default_units() -> UnitSystem:
    from .device import reference_units

    return reference_units()


@dataclass(frozen=True)
class ProtocolConfig:
    """Inputs of the three-stage preparation. Times are in 1/omega."""

    zeta_c: float = -2.5e-4
    zeta_f: float = 3e-4
    dt1: float = 1.0
    dt2: float = 110.0
    stage2_ramp: str = "gap_adapted"
    stage3_ramp: str = "sine"
    transitions: TransitionSet = TransitionSet.up_to(4)
    initial_occupation: float = 0.0
    temperature: float = 0.015
    quality_factor: float = 1e6
    xi: float = 0.0
    unit: UnitSystem = field(default_factory=_default_units)
    policy: BasisPolicy = BasisPolicy()
    stage2_mode: str = "adiabatic"
    stage2_stepping: StepPolicy = STAGE2_STEPPING
    stage3_stepping: StepPolicy = STAGE3_STEPPING

    def __post_init__(self):
        if not self.zeta_c < 0 < self.zeta_f:
            raise ValueError("need zeta_c < 0 < zeta_f")
        if not (self.dt1 > 0 and self.dt2 > 0):
            raise ValueError("stage durations must be positive")
        if self.stage2_mode not in STAGE2_MODES:
            raise ValueError(f"stage2_mode must be one of {STAGE2_MODES}")
        if self.initial_occupation < 0:
            raise ValueError("initial_occupation must be non-negative")

    @property
    def bath(self) -> BathParams:
        return BathParams(self.temperature, self.quality_factor, self.unit)

    @property
    def params(self) -> PotentialParams:
        return PotentialParams(zeta=-1.0, gamma=self.unit.gamma, xi=self.xi)

    def replace(self, **changes) -> "ProtocolConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "zeta_c": self.zeta_c,
            "zeta_f": self.zeta_f,
            "dt1": self.dt1,
            "dt2": self.dt2,
            "stage2_ramp": self.stage2_ramp,
            "stage3_ramp": self.stage3_ramp,
            "transitions": [list(p) for p in self.transitions.pairs],
            "initial_occupation": self.initial_occupation,
            "initial_ground_population": initial_ground_population(self.initial_occupation),
            "temperature": self.temperature,
            "quality_factor": self.quality_factor,
            "xi": self.xi,
            "unit": {"mass": self.unit.mass, "omega": self.unit.omega, "beta": self.unit.beta},
            "gamma": self.unit.gamma,
            "policy": asdict(self.policy),
            "stage2_mode": self.stage2_mode,
            "stage2_stepping": self.stage2_stepping.to_dict(),
            "stage3_stepping": self.stage3_stepping.to_dict(),
        }


def initial_ground_population(occupation: float) -> dict:
    """Ground probability of the initial state under two conventions."""
    beta = effective_beta(occupation)
    gibbs = 1.0 if math.isinf(beta) else -math.expm1(-beta)
    return {"gibbs": gibbs, "one_minus_n": max(0.0, 1.0 - occupation)}


def _adiabatic_handoff(rho: DensityMatrix, eig_start: EigenSystem, eig_end: EigenSystem) -> DensityMatrix:
    """Carry eigen-label populations (and coherences) from one eigensystem to another."""
    m = eig_start.states.conj().T @ rho.matrix @ eig_start.states
    V = eig_end.states
    return DensityMatrix(V @ m @ V.conj().T, eig_end.basis)


def run_protocol(config: ProtocolConfig) -> Trajectory:
    """Thermal start at zeta = -1, ramp to zeta_c, then the driven ramp to zeta_f.

    ``stage2_mode = "adiabatic"`` hands the eigen-populations over to zeta_c
    unchanged (ideal stage-2 ramp). ``"evolve"`` integrates the stage-2 ramp
    in the instantaneous eigenframe and records the fidelity reached at t_c.
    """
    params = config.params
    policy = config.policy
    bath = config.bath
    eig_start = diagonalize(params.at(-1.0), policy)
    rho = initial_thermal_state(eig_start, config.initial_occupation)
    eig_c = diagonalize(params.at(config.zeta_c), policy)

    if config.stage2_mode == "adiabatic":
        rho_c = _adiabatic_handoff(rho, eig_start, eig_c)
        F_c = fidelity(rho_c.matrix, _ground_density(eig_c))
        p0 = np.real(np.diag(eig_start.states.conj().T @ rho.matrix @ eig_start.states))
        stage2 = Trajectory(
            times=np.array([0.0, config.dt1]),
            zetas=np.array([-1.0, config.zeta_c]),
            states=[rho, rho_c],
            fidelity_to_instantaneous_ground=np.array([fidelity(rho.matrix, _ground_density(eig_start)), F_c]),
            populations=np.vstack([p0, p0]),
            purities=np.array([purity(rho.matrix), purity(rho_c.matrix)]),
            final_state=rho_c,
            meta={"stage": 2, "mode": "adiabatic"},
        )
    else:
        schedule2 = RampSchedule(config.stage2_ramp, -1.0, config.zeta_c, config.dt1)
        stage2 = evolve(rho, schedule2, TransitionSet(), bath, params, config.stage2_stepping, policy)
        stage2.meta.update({"stage": 2, "mode": "evolve"})
        rho_c = stage2.final_state.in_basis(eig_c.basis)
    stage2.meta["fidelity_at_tc"] = float(stage2.fidelity_to_instantaneous_ground[-1])

    schedule3 = RampSchedule(config.stage3_ramp, config.zeta_c, config.zeta_f, config.dt2, t_start=config.dt1)
    if config.stage3_stepping.frame == "fixed":
        basis3 = build_basis(config.zeta_f, policy)
        rho_c = rho_c.in_basis(basis3)
    stage3 = evolve(rho_c, schedule3, config.transitions, bath, params, config.stage3_stepping, policy)
    stage3.meta["stage"] = 3
    out = stage2.extend(stage3)
    out.meta["config"] = config.to_dict()
    out.meta["fidelity_at_tc"] = stage2.meta["fidelity_at_tc"]
    out.meta["final_fidelity"] = stage3.final_fidelity
    return out


def target_state(config: ProtocolConfig, xi: float | None = None) -> tuple[DensityMatrix, EigenSystem]:
    """Ground state at zeta_f in the stage-3 basis (``xi`` overrides the config)."""
    p = PotentialParams(config.zeta_f, config.unit.gamma, config.xi if xi is None else xi)
    eig = diagonalize(p, config.policy)
    return DensityMatrix(_ground_density(eig), eig.basis), eig
