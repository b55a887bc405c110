import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import ZETA_F
from oracles import dvr_spectrum, random_density, uhlmann_fidelity, wigner_direct
from dwcat.analysis import (
    WignerGrid,
    fidelity,
    fidelity_general,
    parity_expectation,
    populations,
    position_density,
    purity,
    wigner,
)
from dwcat.spectral import ScaledBasis
from dwcat.states import DensityMatrix


@given(st.integers(0, 2**32 - 1), st.integers(2, 8), st.integers(1, 8), st.integers(1, 8))
def test_fidelity_matches_oracle_and_is_symmetric(seed, dim, ra, rb):
    rng = np.random.default_rng(seed)
    a = random_density(rng, dim, min(ra, dim))
    b = random_density(rng, dim, min(rb, dim))
    F = fidelity(a, b)
    assert F == pytest.approx(fidelity(b, a), abs=1e-10)
    assert 0.0 <= F <= 1.0 + 1e-10
    if min(ra, rb, dim) == dim:  # full rank: sqrtm is well conditioned
        assert F == pytest.approx(uhlmann_fidelity(a, b), abs=1e-8)


def test_pure_shortcut_agrees_with_general():
    rng = np.random.default_rng(3)
    psi = rng.normal(size=6) + 1j * rng.normal(size=6)
    pure = DensityMatrix.from_pure(psi).matrix
    mixed = random_density(rng, 6)
    assert fidelity(pure, mixed) == pytest.approx(fidelity_general(pure, mixed), abs=1e-7)
    # unsquared convention: F(psi, phi) = |<psi|phi>|
    phi = rng.normal(size=6) + 0j
    expected = abs(np.vdot(psi, phi)) / np.linalg.norm(psi) / np.linalg.norm(phi)
    assert fidelity(pure, DensityMatrix.from_pure(phi).matrix) == pytest.approx(expected, abs=1e-12)


def test_fidelity_identical_and_orthogonal():
    rho = np.diag([0.5, 0.5, 0.0])
    assert fidelity(rho, rho) == pytest.approx(1.0, abs=1e-10)
    assert fidelity(np.diag([1.0, 0, 0]), np.diag([0, 0.5, 0.5])) == pytest.approx(0.0, abs=1e-12)


def test_fidelity_rejects_bad_input():
    with pytest.raises(ValueError):
        fidelity(np.eye(2) / 2, np.eye(3) / 3)
    with pytest.raises(ValueError):
        fidelity(np.diag([1.01, -0.01]), np.eye(2) / 2)
    # tiny integrator negativity is tolerated
    assert fidelity(np.diag([1 + 1e-6, -1e-6]), np.diag([1.0, 0.0])) == pytest.approx(1.0, abs=1e-5)


def test_purity_parity_populations(eig_f):
    rho = DensityMatrix.from_pure(eig_f.states[:, 0], eig_f.basis)
    assert purity(rho) == pytest.approx(1.0)
    assert parity_expectation(rho) == pytest.approx(1.0, abs=1e-12)
    p = populations(rho, eig_f)
    assert p[0] == pytest.approx(1.0) and np.allclose(p[1:], 0, atol=1e-14)
    odd = DensityMatrix.from_pure(eig_f.states[:, 1], eig_f.basis)
    assert parity_expectation(odd) == pytest.approx(-1.0, abs=1e-12)


def test_vacuum_wigner_closed_form():
    # Gaussian ground state of the unit oscillator: W = exp(-x^2/2 - 2 p^2) / pi
    basis = ScaledBasis(4, 1.0, -1.0, 1.0)
    rho = DensityMatrix(np.diag([1.0, 0, 0, 0]), basis)
    g = wigner(rho, x_range=(-8, 8), p_range=(-4, 4), resolution=(81, 41))
    X, P = np.meshgrid(g.x_axis, g.p_axis, indexing="ij")
    assert np.allclose(g.values, np.exp(-X**2 / 2 - 2 * P**2) / np.pi, atol=1e-14)


@pytest.mark.filterwarnings("ignore:Wigner grid holds only")
def test_fock_one_negative_at_origin():
    # W_n(0, 0) = (-1)^n / pi
    basis = ScaledBasis(6, 1.0, -1.0, 0.7)
    for n in range(6):
        rho = np.zeros((6, 6))
        rho[n, n] = 1
        g = wigner(DensityMatrix(rho, basis), x_range=(-1, 1), p_range=(-1, 1), resolution=3)
        assert g.value_at(0, 0) == pytest.approx((-1) ** n / np.pi, abs=1e-13)


@pytest.fixture(scope="module")
def cat(eig_f):
    return DensityMatrix.from_pure(eig_f.states[:, 0], eig_f.basis)


@pytest.fixture(scope="module")
def cat_grid(cat):
    return wigner(cat, resolution=241)


def test_cat_wigner_against_direct_integration(cat_grid, gamma):
    # Wigner transform of the grid-oracle ground state
    x, E, V = dvr_spectrum(ZETA_F, gamma, half_width=90.0, points=1201)
    xs = np.array([-35.0, -20.0, 0.0, 12.5, 35.0])
    ps = np.array([0.0, 0.025, 0.05, 0.125])
    ref = wigner_direct(V[:, 0], x, xs, ps)
    ours = np.array([[cat_grid.value_at(a, b) for b in ps] for a in xs])
    # value_at snaps to the grid: use exact grid nodes only
    assert np.all(np.min(np.abs(cat_grid.x_axis[:, None] - xs), axis=0) < 1e-9)
    assert np.all(np.min(np.abs(cat_grid.p_axis[:, None] - ps), axis=0) < 1e-9)
    assert np.allclose(ours, ref, atol=2e-5)


def test_cat_wigner_invariants(cat, cat_grid):
    g = cat_grid
    assert g.covers_support
    assert g.integral() == pytest.approx(1.0, abs=0.01)
    # parity of the even ground state is exactly +1
    assert math.pi * g.value_at(0, 0) == pytest.approx(parity_expectation(cat), abs=1e-3)
    # interference fringes make the cat non-classical
    assert g.values.min() < -0.1
    # marginal reproduces the position density at 241^2 points
    rho_x = position_density(cat, cat.basis, g.x_axis)
    assert np.max(np.abs(g.marginal_x() - rho_x)) < 0.01
    # lobes near the well minima x = +-sqrt(zeta / 8 gamma)
    peak = g.x_axis[np.argmax(rho_x)]
    assert abs(abs(peak) - math.sqrt(ZETA_F / (8 * 3.0859e-8))) < 2.0


def test_wigner_coverage_flag(cat):
    with pytest.warns(UserWarning):
        g = wigner(cat, x_range=(-20, 20), resolution=41)
    assert not g.covers_support and g.meta["x_coverage"] < 0.9


def test_wigner_grid_round_trips(tmp_path, cat):
    g = wigner(cat, resolution=(31, 21))
    g.to_csv(tmp_path / "w.csv")
    g.to_binary(tmp_path / "w.bin")
    for back in (WignerGrid.from_csv(tmp_path / "w.csv"), WignerGrid.from_binary(tmp_path / "w.bin")):
        assert np.array_equal(back.values, g.values)
        assert np.allclose(back.x_axis, g.x_axis, rtol=0, atol=1e-12)
        assert np.allclose(back.p_axis, g.p_axis, rtol=0, atol=1e-12)
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + bytes(60))
    with pytest.raises(ValueError):
        WignerGrid.from_binary(tmp_path / "bad.bin")


def test_wigner_requires_basis():
    with pytest.raises(ValueError):
        wigner(np.eye(2) / 2)
