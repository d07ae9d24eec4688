import math

import numpy as np
import pytest

from oracles import dense_hamiltonian, evolve_dense, expm_taylor
from robust_shuttle import HBAR_MEV_NS
from robust_shuttle.algebra import is_unitary
from robust_shuttle.controls import PulseTable, sample_pulses
from robust_shuttle.model import HamiltonianParams, boundary_states, check_density_matrix, ensemble_grid
from robust_shuttle.optimizer import init_coefficients
from robust_shuttle.propagation import (
    aggregate_fidelity,
    backward_costates,
    evolve,
    fidelity,
    step_propagator,
    transfer_loss,
)

HB = HBAR_MEV_NS


def random_pulses(rng, k=40, dt=1.0, scale=0.03):
    return PulseTable(dt, rng.uniform(-scale, scale, k), rng.uniform(-scale, scale, k))


def test_zero_hamiltonian_is_identity():
    np.testing.assert_allclose(step_propagator(HamiltonianParams(0, 0, 0), 1.0), np.eye(3), atol=1e-15)


def rabi_pulse_amplitude(dt, hbar=HB):
    # (2 W / hbar) dt = pi  -> complete 1 <-> 2 swap
    return math.pi * hbar / (2 * dt)


def test_two_level_swap():
    dt = 1.0
    w = rabi_pulse_amplitude(dt)
    u = step_propagator(HamiltonianParams(0.0, w, 0.0), dt)
    rho_i, _ = boundary_states()
    rho = u @ rho_i @ u.conj().T
    np.testing.assert_allclose(np.diag(rho).real, [0, 1, 0], atol=1e-12)
    traj = evolve(PulseTable(dt, [w], [0.0]), 0.0)
    assert traj.states[1][1, 1].real == pytest.approx(1.0, abs=1e-12)


def test_two_level_rabi_curve():
    w = 0.004
    for dt in (0.1, 0.2, 0.35):
        traj = evolve(PulseTable(dt, [w], [0.0]), 0.0)
        assert traj.states[1][1, 1].real == pytest.approx(math.sin(w * dt / HB) ** 2, abs=1e-12)


def test_step_propagator_matches_series(rng):
    for _ in range(200):
        d, w12, w23 = rng.uniform(1, 5), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)
        u = step_propagator(HamiltonianParams(d, w12, w23), 1.0)
        ref = expm_taylor(-1j * dense_hamiltonian(d, w12, w23, traceless=True) / HB)
        np.testing.assert_allclose(u, ref, atol=1e-10, rtol=0)
        assert is_unitary(u)


def test_step_propagator_degenerate_route():
    u = step_propagator(HamiltonianParams(2.72, 0.0, 0.0), 1.0)
    ref = expm_taylor(-1j * dense_hamiltonian(2.72, 0, 0, traceless=True) / HB)
    np.testing.assert_allclose(u, ref, atol=1e-10)
    with pytest.raises(ValueError):
        step_propagator(HamiltonianParams(1, 0, 0), 0.0)


def test_zero_pulses_are_stationary():
    pt = PulseTable(1.0, np.zeros(10), np.zeros(10))
    rho_i, rho_t = boundary_states()
    traj = evolve(pt, 2.72)
    for rho in traj.states:
        np.testing.assert_allclose(rho, rho_i, atol=1e-15)
    lam = backward_costates(pt, 2.72)
    for l in lam.lambdas:
        np.testing.assert_allclose(l, rho_t, atol=1e-15)


def test_single_step_costate():
    pt = PulseTable(1.0, [0.02], [-0.01])
    _, rho_t = boundary_states()
    u = step_propagator(HamiltonianParams(2.0, 0.02, -0.01), 1.0)
    lam = backward_costates(pt, 2.0)
    np.testing.assert_allclose(lam.lambdas[0], u.conj().T @ rho_t @ u, atol=1e-14)


def test_trajectory_invariants_and_telescoping(rng):
    for _ in range(10):
        pt = random_pulses(rng)
        delta = rng.uniform(1, 5)
        traj = evolve(pt, delta)
        lam = backward_costates(pt, delta, trajectory=traj)
        overlaps = np.einsum("kij,kji->k", lam.lambdas, traj.states).real
        j = fidelity(traj.final_state)
        np.testing.assert_allclose(overlaps, j, atol=1e-12, rtol=0)
        for u in traj.propagators:
            assert np.linalg.norm(u.conj().T @ u - np.eye(3)) <= 1e-12
        for rho, l in zip(traj.states, lam.lambdas):
            check_density_matrix(rho)
            assert abs(np.trace(rho @ rho).real - 1) <= 1e-10
            pops = np.diag(rho)
            assert np.all(np.abs(pops.imag) < 1e-15)
            assert np.all(pops.real > -1e-12) and np.all(pops.real < 1 + 1e-12)
            assert abs(pops.real.sum() - 1) <= 1e-12
            np.testing.assert_allclose(l, l.conj().T, atol=1e-12)
            assert abs(np.trace(l) - 1) <= 1e-12


def test_evolve_matches_dense_oracle(rng):
    pt = random_pulses(rng, k=25)
    ref = evolve_dense(3.1, pt.omega12, pt.omega23, pt.dt, HB)
    np.testing.assert_allclose(evolve(pt, 3.1).states, ref, atol=1e-10)


def test_full_and_traceless_agree(rng):
    pt = random_pulses(rng)
    a = evolve(pt, 2.5, traceless=True).states
    b = evolve(pt, 2.5, traceless=False).states
    np.testing.assert_allclose(a, b, atol=1e-10)


@pytest.mark.parametrize("s", [10, 100])
def test_substep_refinement(rng, s):
    pt = random_pulses(rng, k=100)
    fine = PulseTable(pt.dt / s, np.repeat(pt.omega12, s), np.repeat(pt.omega23, s))
    np.testing.assert_allclose(evolve(fine, 2.72).final_state, evolve(pt, 2.72).final_state,
                               atol=1e-10, rtol=0)


def test_costates_reject_foreign_trajectory(rng):
    pt = random_pulses(rng)
    traj = evolve(pt, 2.0)
    with pytest.raises(ValueError):
        backward_costates(pt, 2.1, trajectory=traj)


def test_fidelity_examples():
    rho_i, rho_t = boundary_states()
    assert fidelity(rho_i) == 0.0
    assert fidelity(rho_t) == 1.0
    assert fidelity(np.eye(3) / 3) == pytest.approx(1 / 3)


def test_loss_is_two_minus_two_fidelity(rng):
    traj = evolve(random_pulses(rng), 2.72)
    for rho in traj.states[::7]:
        assert transfer_loss(rho) == pytest.approx(2 - 2 * fidelity(rho), abs=1e-12)


def test_aggregate_fidelity(rng):
    coeffs = init_coefficients(3, 0.01, 10)
    pt = sample_pulses(coeffs, 100, 100.0)
    single = fidelity(evolve(pt, 2.72).final_state)
    assert aggregate_fidelity(ensemble_grid(2.72, 0, 1), pt) == single
    same = ensemble_grid(2.72, 0.0, 5)
    assert aggregate_fidelity(same, pt) == pytest.approx(5 * single, rel=1e-14)
    spread = ensemble_grid(2.72, 0.544, 11)
    assert 0 <= aggregate_fidelity(spread, pt) <= 11
