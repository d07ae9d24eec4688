import numpy as np
import pytest
from scipy.integrate import quad

from oracles import conjugation_integral_simpson, dense_hamiltonian
from robust_shuttle import HBAR_MEV_NS
from robust_shuttle.algebra import eig_hermitian3
from robust_shuttle.controls import FourierCoefficients, PulseTable, basis_matrix
from robust_shuttle.gradient import (
    PHI_SERIES_THRESHOLD,
    PulseGradient,
    coefficient_gradient,
    evaluate_ensemble,
    finite_difference_gradient,
    integral_conjugation,
    phi_matrix,
    pulse_gradient,
    relative_l2_error,
)
from robust_shuttle.model import (
    HamiltonianParams,
    closed_form_eig,
    ensemble_grid,
    hamiltonian,
    su3_basis,
)
from robust_shuttle.propagation import backward_costates, evolve, fidelity, step_eigensystems

HB = HBAR_MEV_NS
X = su3_basis()


def member_fidelity(w12, w23, dt, delta, hbar=HB):
    return fidelity(evolve(PulseTable(dt, w12, w23), delta, hbar).final_state)


def pulse_fd(pt, delta, h=1e-6, hbar=HB):
    k = pt.k_steps

    def f(x):
        return member_fidelity(x[:k], x[k:], pt.dt, delta, hbar)

    return finite_difference_gradient(f, np.concatenate([pt.omega12, pt.omega23]), h)


def analytic(pt, delta, hbar=HB):
    traj = evolve(pt, delta, hbar)
    return pulse_gradient(traj, backward_costates(pt, delta, hbar, trajectory=traj), pt)


# --- Phi matrix ----------------------------------------------------------------

def test_phi_degenerate_limit():
    np.testing.assert_array_equal(phi_matrix([0.3, 0.3, 0.3], 2.0), np.full((3, 3), 2.0))


def test_phi_full_period():
    dt = 0.5
    phi = phi_matrix([0.0, 2 * np.pi / dt, 0.0], dt)
    assert abs(phi[0, 1]) < 1e-15 and abs(phi[1, 0]) < 1e-15
    assert phi[0, 2] == dt


def quad_phi(wa, wb, dt):
    re = quad(lambda t: np.cos((wb - wa) * t), 0, dt, epsabs=1e-13, epsrel=1e-12, limit=500)[0]
    im = quad(lambda t: np.sin((wb - wa) * t), 0, dt, epsabs=1e-13, epsrel=1e-12, limit=500)[0]
    return re + 1j * im


def test_phi_matches_quadrature(rng):
    for _ in range(30):
        w = rng.uniform(-20, 20, 3)
        dt = rng.uniform(0.05, 1.5)
        phi = phi_matrix(w, dt)
        for a in range(3):
            for b in range(3):
                assert abs(phi[a, b] - quad_phi(w[a], w[b], dt)) < 1e-10


def test_phi_structure(rng):
    w = rng.uniform(-1e3, 1e3, 3)
    phi = phi_matrix(w, 1.0)
    np.testing.assert_array_equal(np.diag(phi), 1.0)
    np.testing.assert_allclose(phi, phi.conj().T, atol=1e-15)
    assert np.all(np.abs(phi) <= 1.0 + 1e-15)


@pytest.mark.parametrize("factor", [0.9, 1.1])
def test_phi_continuous_across_series_threshold(factor):
    dt = 1.0
    x = PHI_SERIES_THRESHOLD * factor
    phi = phi_matrix([0.0, x / dt, 0.0], dt)[0, 1]
    exact = complex(np.sin(x), 2 * np.sin(x / 2) ** 2) / x
    assert abs(phi - exact) < 1e-15


# --- conjugation integral ---------------------------------------------------

def test_integral_commuting_cases(rng):
    dt = 0.7
    zero = eig_hermitian3(np.zeros((3, 3)))
    np.testing.assert_allclose(integral_conjugation(zero, X.x1, dt), X.x1 * dt, atol=1e-15)
    eig = closed_form_eig(HamiltonianParams(2.3, 0.04, -0.02))
    np.testing.assert_allclose(integral_conjugation(eig, np.eye(3), dt), np.eye(3) * dt, atol=1e-14)


def test_integral_matches_simpson(rng):
    for i in range(12):
        d, w12, w23 = rng.uniform(1, 5), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)
        hbar = HB if i % 2 else 1.0
        x = X.x1 if i % 3 else X.x2
        eig = closed_form_eig(HamiltonianParams(d, w12, w23))
        got = integral_conjugation(eig, x, 1.0, hbar)
        ref = conjugation_integral_simpson(dense_hamiltonian(d, w12, w23, True), x, 1.0, hbar,
                                           points_per_rad=30)
        np.testing.assert_allclose(got, ref, atol=1e-8, rtol=0)


def test_integral_same_for_closed_and_generic(rng):
    p = HamiltonianParams(2.1, 0.05, 0.03)
    cf = closed_form_eig(p)
    gen = eig_hermitian3(hamiltonian(p, traceless=True))
    np.testing.assert_allclose(integral_conjugation(cf, X.x2, 1.0),
                               integral_conjugation(gen, X.x2, 1.0), atol=1e-10)


# --- pulse gradients --------------------------------------------------------

def test_zero_pulse_gradient_vanishes():
    pt = PulseTable(1.0, np.zeros(6), np.zeros(6))
    g = analytic(pt, 2.72)
    np.testing.assert_array_equal(g.d_omega23, 0.0)
    np.testing.assert_array_equal(g.d_omega12, 0.0)
    fd = pulse_fd(pt, 2.72)
    assert np.abs(fd).max() < 1e-8


def test_pulse_gradient_matches_finite_differences(rng):
    for _ in range(5):
        pt = PulseTable(1.0, rng.uniform(-0.05, 0.05, 15), rng.uniform(-0.05, 0.05, 15))
        delta = rng.uniform(1, 5)
        g = analytic(pt, delta)
        fd = pulse_fd(pt, delta)
        assert relative_l2_error(np.concatenate([g.d_omega12, g.d_omega23]), fd) < 1e-6


def test_pulse_gradient_unit_hbar(rng):
    pt = PulseTable(1.0, rng.uniform(-0.5, 0.5, 10), rng.uniform(-0.5, 0.5, 10))
    g = analytic(pt, 2.72, hbar=1.0)
    fd = pulse_fd(pt, 2.72, hbar=1.0)
    assert relative_l2_error(np.concatenate([g.d_omega12, g.d_omega23]), fd) < 1e-6


def test_swap_point_gradient():
    # with omega23 = 0 nothing reaches site 3, so J is flat in omega12
    w = np.pi * HB / 2
    pt = PulseTable(1.0, [w], [0.0])
    g = analytic(pt, 0.0)
    assert abs(g.d_omega12[0]) < 1e-10
    assert abs(pulse_fd(pt, 0.0)[0]) < 1e-8


def test_pulse_gradient_rejects_mismatch(rng):
    pt = PulseTable(1.0, rng.uniform(-0.05, 0.05, 5), rng.uniform(-0.05, 0.05, 5))
    other = PulseTable(1.0, rng.uniform(-0.05, 0.05, 5), rng.uniform(-0.05, 0.05, 5))
    traj = evolve(pt, 2.0)
    with pytest.raises(ValueError):
        pulse_gradient(traj, backward_costates(pt, 2.5), pt)
    with pytest.raises(ValueError):
        pulse_gradient(traj, backward_costates(pt, 2.0, trajectory=traj), other)


def test_degenerate_steps_use_generic_route():
    pt = PulseTable(1.0, [0.0, 0.03, 0.0], [0.0, 0.02, 0.01])
    eig = step_eigensystems(2.72, pt.omega12, pt.omega23)
    assert eig.n_generic == 1
    g = analytic(pt, 2.72)
    fd = pulse_fd(pt, 2.72)
    assert relative_l2_error(np.concatenate([g.d_omega12, g.d_omega23]), fd) < 1e-6


# --- coefficient gradients ----------------------------------------------------

def test_constant_basis_chain_rule(rng):
    grads = [PulseGradient(rng.normal(size=8), rng.normal(size=8), d) for d in (1.0, 2.0)]
    cg = coefficient_gradient(grads, basis_matrix(8, 0))
    assert cg.dp[0] == pytest.approx(sum(g.d_omega12.sum() for g in grads))
    assert cg.dq[0] == pytest.approx(sum(g.d_omega23.sum() for g in grads))


def test_single_member_chain_rule(rng):
    g = PulseGradient(rng.normal(size=9), rng.normal(size=9), 2.0)
    basis = basis_matrix(9, 2)
    cg = coefficient_gradient([g], basis)
    np.testing.assert_array_equal(cg.dp, basis.T @ g.d_omega12)


def test_coefficient_gradient_against_fd(rng):
    k, horizon = 20, 20.0
    ens = ensemble_grid(2.4, 0.3, 3)
    coeffs = FourierCoefficients(rng.uniform(-0.05, 0.05, 7), rng.uniform(-0.05, 0.05, 7))
    ev = evaluate_ensemble(ens, coeffs, k, horizon)

    def f(x):
        c = FourierCoefficients(x[:7], x[7:])
        return evaluate_ensemble(ens, c, k, horizon, with_grad=False).value

    fd = finite_difference_gradient(f, np.concatenate([coeffs.p, coeffs.q]), 1e-6)
    assert relative_l2_error(ev.gradient.flat(), fd) < 1e-6


def test_ensemble_additivity(rng):
    k, horizon = 30, 30.0
    ens = ensemble_grid(2.72, 0.5, 4)
    coeffs = FourierCoefficients(rng.uniform(-0.03, 0.03, 9), rng.uniform(-0.03, 0.03, 9))
    total = evaluate_ensemble(ens, coeffs, k, horizon).gradient
    parts = [evaluate_ensemble(ensemble_grid(d, 0, 1), coeffs, k, horizon).gradient
             for d in ens.grid]
    np.testing.assert_allclose(total.dp, sum(p.dp for p in parts), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(total.dq, sum(p.dq for p in parts), rtol=1e-12, atol=1e-12)


def test_worker_count_does_not_change_results(rng):
    ens = ensemble_grid(2.72, 0.544, 11)
    coeffs = FourierCoefficients(rng.uniform(-0.01, 0.01, 21), rng.uniform(-0.01, 0.01, 21))
    a = evaluate_ensemble(ens, coeffs, 100, 100.0, workers=1)
    b = evaluate_ensemble(ens, coeffs, 100, 100.0, workers=8)
    assert a.value == b.value
    np.testing.assert_array_equal(a.gradient.dp, b.gradient.dp)
    np.testing.assert_array_equal(a.fidelities, b.fidelities)


# --- finite differences ------------------------------------------------------

def test_fd_on_simple_functions():
    np.testing.assert_array_equal(
        finite_difference_gradient(lambda x: float(x @ x), np.zeros(4), 1e-3), 0.0)
    c = np.array([1.5, -2.0, 0.25])
    np.testing.assert_allclose(finite_difference_gradient(lambda x: float(c @ x), np.ones(3), 0.5),
                               c, rtol=1e-15)
    with pytest.raises(ValueError):
        finite_difference_gradient(lambda x: 0.0, np.zeros(1), 0.0)
