import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dwcat.analysis import populations
from dwcat.control import RampSchedule, TransitionSet
from dwcat.device import reference_units
from dwcat.dynamics import (
    BathParams,
    ProtocolConfig,
    StepPolicy,
    Trajectory,
    _rate_factors,
    effective_beta,
    evolve,
    gibbs_state,
    hold,
    initial_ground_population,
    initial_thermal_state,
    jump_operator,
    jump_operator_eigen,
    rhs,
    run_protocol,
    target_state,
    thermal_occupation,
)
from dwcat.spectral import BasisPolicy, PotentialParams, diagonalize, position_operator
from dwcat.states import InvariantViolation, NumericalAbort, DensityMatrix

UNIT = reference_units()
CLOSED = dict(temperature=0.0, quality_factor=math.inf)


def odd_population(rho: DensityMatrix) -> float:
    # the scaled oscillator bases are all centred at x = 0, so parity is (-1)^n
    return float(np.real(np.diagonal(rho.matrix)[1::2].sum()))


# ------------------------------------------------------------------- bath


def test_bath_validation():
    with pytest.raises(ValueError):
        BathParams(-1.0)
    with pytest.raises(ValueError):
        BathParams(0.0, 0.0)
    with pytest.raises(ValueError):
        BathParams(0.01, 1e6)  # a unit system is needed to reduce T
    assert BathParams().closed and not BathParams(0.0, 1e6).closed


def test_reduced_temperature():
    # k_B T / hbar omega with omega = 2 pi 2 MHz: 15 mK -> 156.3
    b = BathParams(0.015, 1e6, UNIT)
    assert b.reduced_temperature == pytest.approx(0.015 / 9.598e-5, rel=1e-3)


@given(st.floats(1e-6, 10), st.floats(1e-3, 1e3))
def test_rate_factors_detailed_balance(delta, theta):
    up, down = _rate_factors(np.array([delta]), theta)
    n = math.exp(-delta / theta) / -math.expm1(-delta / theta)
    assert up[0] == pytest.approx(delta * n, rel=1e-10)
    assert down[0] - up[0] == pytest.approx(delta, rel=1e-10)
    assert up[0] / down[0] == pytest.approx(math.exp(-delta / theta), rel=1e-10)


def test_rate_factors_limits():
    up, down = _rate_factors(np.array([0.0, 1.0]), 2.0)
    # delta N(delta) -> theta as delta -> 0
    assert up[0] == pytest.approx(2.0) and down[0] == pytest.approx(2.0)
    up, down = _rate_factors(np.array([0.5]), 0.0)
    assert up[0] == 0.0 and down[0] == 0.5


def test_thermal_occupation():
    b = BathParams(0.015, 1e6, UNIT)
    th = b.reduced_temperature
    assert thermal_occupation(0.1, b) == pytest.approx(1 / math.expm1(0.1 / th), rel=1e-12)
    assert thermal_occupation(0.1, BathParams()) == 0.0


def test_jump_operator_structure(eig_c):
    b = BathParams(0.015, 1e3, UNIT)
    A = jump_operator_eigen(eig_c, b, levels=10)
    x = eig_c.position()[:10, :10]
    E = eig_c.energies[:10]
    for m in range(1, 10):
        for n in range(m):
            d = E[m] - E[n]
            N = 1 / math.expm1(d / b.reduced_temperature)
            assert A[m, n] == pytest.approx(d * N * x[m, n] / 1e3, rel=1e-9, abs=1e-300)
            assert A[n, m] == pytest.approx(d * (N + 1) * x[m, n] / 1e3, rel=1e-9, abs=1e-300)
    assert np.all(np.diag(A) == 0)
    assert not np.any(jump_operator_eigen(eig_c, BathParams()))


def test_gibbs_state_is_exact_fixed_point(gamma):
    # detailed balance makes rho A^dag - A rho vanish for the Gibbs state
    eig = diagonalize(PotentialParams(-0.01, gamma), BasisPolicy(dim=30))
    b = BathParams(0.003, 50.0, UNIT)
    G = gibbs_state(eig, b).matrix
    A = jump_operator(eig, b)
    H = np.diag(eig.energies)
    H = eig.states @ H @ eig.states.conj().T
    z = position_operator(eig.basis)
    assert np.max(np.abs(rhs(G, H, A, z))) < 1e-13


def test_harmonic_relaxation_rate(gamma):
    # damped oscillator: <n>(t) = exp(-t/Q) at T = 0; the early
    # transient negativity of this non-secular form is ~0.3/Q, so the floor is relaxed
    p = PotentialParams(-1.0, gamma)
    eig = diagonalize(p, BasisPolicy(dim=14))
    rho = DensityMatrix.from_pure(eig.states[:, 1], eig.basis)
    Q = 100.0
    tr = hold(rho, p, BathParams(0.0, Q), Q, StepPolicy(refresh=50.0, positivity_floor=-1e-2))
    n = populations(tr.final_state, eig) @ np.arange(14)
    assert n == pytest.approx(math.exp(-1.0), abs=2e-5)


def test_thermal_relaxation_reaches_gibbs(gamma):
    p = PotentialParams(-1.0, gamma)
    eig = diagonalize(p, BasisPolicy(dim=8))
    b = BathParams(UNIT.temperature_unit / math.log(3.0), 4.0, UNIT)  # N = 1/2
    rho = initial_thermal_state(eig, 1.5)
    tr = hold(rho, p, b, 25 * 4.0)
    G = gibbs_state(eig, b).matrix
    D = 0.5 * np.abs(np.linalg.eigvalsh(tr.final_state.matrix - G)).sum()
    assert D < 0.02


def test_initial_state_conventions(eig_c):
    # N0 = 0.2 gives beta = ln 6 and ground weight 5/6
    assert effective_beta(0.2) == pytest.approx(math.log(6.0))
    assert initial_ground_population(0.2)["gibbs"] == pytest.approx(5 / 6)
    assert initial_ground_population(0.2)["one_minus_n"] == pytest.approx(0.8)
    rho = initial_thermal_state(eig_c, 0.0)
    assert populations(rho, eig_c)[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        effective_beta(-0.1)


# -------------------------------------------------------------- integrator


def test_step_policy_validation():
    with pytest.raises(ValueError):
        StepPolicy(frame="rotating")
    with pytest.raises(ValueError):
        StepPolicy(max_phase=0)
    with pytest.raises(ValueError):
        StepPolicy(stride=0)


def test_step_underflow_aborts(eig_f, gamma):
    rho = DensityMatrix.from_pure(eig_f.states[:, 0], eig_f.basis)
    with pytest.raises(NumericalAbort):
        hold(rho, PotentialParams(3e-4, gamma), BathParams(), 10.0, StepPolicy(min_step=1.0))


def test_protocol_config_validation():
    with pytest.raises(ValueError):
        ProtocolConfig(zeta_c=1e-4)
    with pytest.raises(ValueError):
        ProtocolConfig(dt2=0.0)
    with pytest.raises(ValueError):
        ProtocolConfig(stage2_mode="magic")


@pytest.fixture(scope="module")
def closed_cd():
    return run_protocol(ProtocolConfig(**CLOSED, initial_occupation=0.2))


@pytest.fixture(scope="module")
def closed_cd_ground():
    return run_protocol(ProtocolConfig(**CLOSED))


@pytest.fixture(scope="module")
def closed_nocd():
    return run_protocol(ProtocolConfig(**CLOSED, transitions=TransitionSet()))


@pytest.fixture(scope="module")
def open_short():
    return run_protocol(ProtocolConfig(dt2=12.566))


@pytest.mark.parametrize("name", ["closed_cd", "closed_nocd", "open_short"])
def test_trajectory_invariants(name, request):
    tr = request.getfixturevalue(name)
    assert np.all(np.diff(tr.times) > 0)
    for rho in tr.states:
        assert abs(rho.trace - 1) < 1e-7
        assert rho.hermiticity_error() < 1e-9
        assert rho.min_eigenvalue() >= -1e-4


def test_unitary_limit_purity(closed_cd):
    # mixed start (N0 = 0.2), no bath: purity must not move
    p = closed_cd.purities
    assert p[0] < 0.9
    assert np.max(np.abs(p - p[0])) < 1e-6


@pytest.mark.parametrize("name", ["closed_cd_ground", "closed_nocd"])
def test_parity_conservation(name, request):
    tr = request.getfixturevalue(name)
    assert max(odd_population(rho) for rho in tr.states) < 1e-6


def test_parity_sectors_conserved_for_mixed_start(closed_cd):
    odd = np.array([odd_population(rho) for rho in closed_cd.states])
    assert odd[0] > 0.1
    assert np.max(np.abs(odd - odd[0])) < 1e-6


def test_dissipation_lowers_purity(open_short):
    assert open_short.purities[-1] < open_short.purities[0] - 1e-3


def test_fixed_and_adiabatic_frames_agree():
    # two independent integrations of stage 3: fixed scaled basis vs
    # instantaneous eigenframe with the inertial term written out
    cfg = ProtocolConfig(dt2=12.566)
    F_fixed = run_protocol(cfg).final_fidelity
    F_adiab = run_protocol(cfg.replace(stage3_stepping=StepPolicy(frame="adiabatic", refresh=0.5))).final_fidelity
    assert F_fixed == pytest.approx(F_adiab, abs=1e-8)


def test_stage2_evolution_matches_fixed_basis_oracle():
    # fixed-frame integration in a dim 120/160/200 scaled basis
    # (omega0 = 0.178/0.12/0.1) converges to F(t_c) = 0.5067297 for dt1 = 1
    tr = run_protocol(ProtocolConfig(**CLOSED, stage2_mode="evolve", dt1=1.0, dt2=1.2566))
    assert tr.meta["fidelity_at_tc"] == pytest.approx(0.5067297, abs=1e-3)


def test_step_halving_convergence():
    cfg = ProtocolConfig(dt2=12.566, stage3_stepping=StepPolicy(check_convergence=True))
    conv = run_protocol(cfg).meta["stages"][-1]["convergence"]
    assert conv["converged"] and conv["change"] < 1e-4


def test_sqrt_ramp_with_drive_is_rejected():
    with pytest.raises(ValueError):
        run_protocol(ProtocolConfig(**CLOSED, stage3_ramp="sqrt"))


def test_sqrt_ramp_without_drive_runs():
    tr = run_protocol(ProtocolConfig(**CLOSED, stage3_ramp="sqrt", transitions=TransitionSet(), dt2=12.566))
    assert 0 < tr.final_fidelity < 1


def test_asymmetric_run_aborts_with_diagnostics():
    # the ad hoc dissipator leaves the positive cone once the wells are tilted
    with pytest.raises(InvariantViolation) as err:
        run_protocol(ProtocolConfig(xi=0.01, dt2=1.2566))
    d = err.value.diagnostics
    assert d["min_eigenvalue"] < -1e-4 and "time" in d and "step" in d


def test_target_state(eig_f):
    cfg = ProtocolConfig()
    rho, eig = target_state(cfg)
    assert np.allclose(eig.energies, eig_f.energies)
    assert rho.purity == pytest.approx(1.0)
    rho_asym, _ = target_state(cfg, xi=0.01)
    assert np.abs(np.vdot(rho.matrix, rho_asym.matrix)) < 0.99


def test_trajectory_serialization(tmp_path, open_short):
    tr = open_short
    tr.to_csv(tmp_path / "t.csv")
    tr.to_json(tmp_path / "t.json")
    rows = Trajectory.load_rows(tmp_path / "t.csv")
    assert len(rows) == len(tr.times)
    assert rows[-1]["fidelity"] == tr.final_fidelity
    data = json.loads((tmp_path / "t.json").read_text())
    assert data["meta"]["final_fidelity"] == tr.final_fidelity


def test_evolve_requires_basis_in_fixed_frame(gamma):
    with pytest.raises(ValueError):
        evolve(DensityMatrix(np.eye(4) / 4), RampSchedule("linear", -1, -0.5, 1.0), TransitionSet(),
               BathParams(), PotentialParams(-1, gamma))
