"""Density matrices with their basis, invariant checks and persistence."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import ScaledBasis, basis_overlap


class NumericalAbort(RuntimeError):
    """Integration stopped because its numerical contract could not be met."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InvariantViolation(NumericalAbort):
    """A density matrix left its admissible region during integration."""


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    matrix: np.ndarray
    basis: ScaledBasis | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"density matrix must be square, got shape {m.shape}")
        if self.basis is not None and self.basis.dim != m.shape[0]:
            raise ValueError("basis dimension does not match matrix")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_pure(cls, psi, basis: ScaledBasis | None = None) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()), basis)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))

    @property
    def purity(self) -> float:
        m = self.matrix
        return float(np.real(np.vdot(m.conj().T, m)))

    def hermiticity_error(self) -> float:
        return float(np.abs(self.matrix - self.matrix.conj().T).max())

    def min_eigenvalue(self) -> float:
        h = 0.5 * (self.matrix + self.matrix.conj().T)
        return float(np.linalg.eigvalsh(h)[0])

    def check(self, herm_tol: float = 1e-10, trace_tol: float = 1e-8, min_eig: float = -1e-6) -> dict:
        """Verify the invariants and return the measured values.

        Raises InvariantViolation when any of them is out of tolerance.
        """
        diag = {
            "trace_error": abs(self.trace - 1.0),
            "hermiticity_error": self.hermiticity_error(),
            "min_eigenvalue": self.min_eigenvalue(),
        }
        if diag["trace_error"] > trace_tol:
            raise InvariantViolation(f"trace drifted by {diag['trace_error']:.3e}", diag)
        if diag["hermiticity_error"] > herm_tol:
            raise InvariantViolation(f"hermiticity error {diag['hermiticity_error']:.3e}", diag)
        if diag["min_eigenvalue"] < min_eig:
            raise InvariantViolation(f"negative eigenvalue {diag['min_eigenvalue']:.3e}", diag)
        return diag

    def in_basis(self, basis: ScaledBasis) -> "DensityMatrix":
        """Re-express the state in another scaled basis (truncating if smaller)."""
        if self.basis is None:
            raise ValueError("state has no basis attached")
        if self.basis.same_frame(basis):
            return DensityMatrix(self.matrix, basis)
        S = basis_overlap(basis, self.basis)
        return DensityMatrix(S @ self.matrix @ S.conj().T, basis)


def as_matrix(rho) -> np.ndarray:
    if isinstance(rho, DensityMatrix):
        return rho.matrix
    return np.asarray(rho)


def save_state(path, rho: DensityMatrix, **extra) -> None:
    """Write a density matrix and its basis to a ``.npz`` archive."""
    b = rho.basis
    meta = {} if b is None else {
        "basis_dim": b.dim, "basis_theta": b.theta, "basis_zeta_ref": b.zeta_ref,
        "basis_omega0": b.omega0, "basis_capped": b.capped,
    }
    np.savez(path, matrix=rho.matrix, **meta, **{k: np.asarray(v) for k, v in extra.items()})


def load_state(path) -> tuple[DensityMatrix, dict]:
    """Inverse of :func:`save_state`; returns the state and any extra arrays."""
    with np.load(path) as data:
        fields = {k: data[k] for k in data.files}
    matrix = fields.pop("matrix")
    basis = None
    if "basis_dim" in fields:
        basis = ScaledBasis(
            dim=int(fields.pop("basis_dim")),
            theta=float(fields.pop("basis_theta")),
            zeta_ref=float(fields.pop("basis_zeta_ref")),
            omega0=float(fields.pop("basis_omega0")),
            capped=bool(fields.pop("basis_capped")),
        )
    return DensityMatrix(matrix, basis), fields
