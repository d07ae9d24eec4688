"""Analytic gradients of the ensemble fidelity.

For step ``k`` the derivative of ``J_n`` with respect to a pulse value is

    tr([rho(k+1), Lambda(k+1)] A(k)) / hbar,
    A(k) = int_0^dt exp(-i H tau / hbar) X exp(i H tau / hbar) dtau,

with ``X`` the generator multiplying that pulse in ``iH``.  ``A(k)`` is
evaluated in the step eigenbasis as ``T ((T^dagger X T) * Phi) T^dagger``,
where ``Phi[a, b] = int_0^dt exp(i (w_b - w_a) tau) dtau``.  Coefficient
gradients follow from the chain rule through the Fourier basis matrix.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import HBAR_MEV_NS
from .algebra import EigenDecomposition3, dagger
from .controls import FourierCoefficients, PulseTable, basis_matrix, sample_pulses
from .model import ClosedFormEig, UncertaintyEnsemble, su3_basis
from .propagation import Costates, Trajectory, backward_costates, evolve, fidelity

__all__ = [
    "CoefficientGradient",
    "EnsembleEvaluation",
    "PHI_SERIES_THRESHOLD",
    "PulseGradient",
    "coefficient_gradient",
    "evaluate_ensemble",
    "finite_difference_gradient",
    "integral_conjugation",
    "phi_matrix",
    "phi_matrices",
    "pulse_gradient",
    "relative_l2_error",
    "worker_count",
]

PHI_SERIES_THRESHOLD = 1e-6
"""Below this ``|w_b - w_a| dt`` (rad) Phi entries use a Taylor series."""

THREADS_ENV = "ROBUST_SHUTTLE_THREADS"

_IMAG_TOL = 1e-10


@dataclass(frozen=True)
class PulseGradient:
    """``dJ_n / dOmega12(k)`` and ``dJ_n / dOmega23(k)`` (fidelity per meV)."""

    d_omega12: np.ndarray
    d_omega23: np.ndarray
    detuning: float


@dataclass(frozen=True)
class CoefficientGradient:
    dp: np.ndarray
    dq: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.dp, self.dq])


def phi_matrices(freqs, dt: float) -> np.ndarray:
    """Stacked Phi matrices for eigen-frequencies ``freqs`` (rad/ns, shape ``(..., 3)``)."""
    freqs = np.asarray(freqs, dtype=float)
    diff = freqs[..., None, :] - freqs[..., :, None]  # [a, b] = w_b - w_a
    x = diff * dt
    small = np.abs(x) < PHI_SERIES_THRESHOLD
    safe = np.where(small, 1.0, diff)
    exact = np.expm1(1j * x) / (1j * safe)
    series = dt * (1.0 + 0.5j * x - x * x / 6.0)
    return np.where(small, series, exact)


def phi_matrix(freqs, dt: float) -> np.ndarray:
    """Phi matrix for three eigen-frequencies (rad/ns) over a step of length ``dt`` (ns)."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    freqs = np.asarray(freqs, dtype=float)
    if freqs.shape != (3,):
        raise ValueError(f"expected three frequencies, got shape {freqs.shape}")
    return phi_matrices(freqs, dt)


def _eig_parts(eig) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(eig, ClosedFormEig):
        return eig.gamma, eig.t_matrix
    if isinstance(eig, EigenDecomposition3):
        return eig.eigenvalues, eig.eigenvectors
    return eig.gamma, eig.t


def integral_conjugation(eig, direction, dt: float, hbar: float = HBAR_MEV_NS) -> np.ndarray:
    """``int_0^dt exp(-i H tau / hbar) X exp(i H tau / hbar) dtau`` in closed form.

    ``eig`` is any eigensystem of ``H`` (closed form, generic, or a stack of
    step eigensystems); energies are in meV and ``dt`` in ns.
    """
    gamma, t = _eig_parts(eig)
    phi = phi_matrices(np.asarray(gamma) / hbar, dt)
    t_h = dagger(t)
    return t @ ((t_h @ np.asarray(direction) @ t) * phi) @ t_h


def pulse_gradient(traj: Trajectory, costates: Costates, pulses: PulseTable) -> PulseGradient:
    """Per-step fidelity gradient for one ensemble member."""
    if traj.pulses is not pulses and not (
            traj.pulses.dt == pulses.dt
            and np.array_equal(traj.pulses.omega12, pulses.omega12)
            and np.array_equal(traj.pulses.omega23, pulses.omega23)):
        raise ValueError("trajectory was not computed from these pulses")
    if costates.detuning != traj.detuning or costates.hbar != traj.hbar or not (
            costates.pulses is traj.pulses
            or np.array_equal(costates.pulses.omega12, traj.pulses.omega12)
            and np.array_equal(costates.pulses.omega23, traj.pulses.omega23)):
        raise ValueError("trajectory and costates come from different runs")

    basis = su3_basis()
    rho = traj.states[1:]
    lam = costates.lambdas[1:]
    comm = rho @ lam - lam @ rho
    out = []
    for x in (basis.x1, basis.x2):
        a = integral_conjugation(traj.eig, x, pulses.dt, traj.hbar)
        g = np.einsum("kij,kji->k", comm, a) / traj.hbar
        scale = max(1.0, float(np.max(np.abs(g.real))))
        if np.max(np.abs(g.imag)) > _IMAG_TOL * scale:
            raise FloatingPointError(
                f"pulse gradient has imaginary residue {np.max(np.abs(g.imag)):.3e}")
        out.append(np.ascontiguousarray(g.real))
    return PulseGradient(d_omega12=out[0], d_omega23=out[1], detuning=traj.detuning)


def coefficient_gradient(pulse_grads: Sequence[PulseGradient], basis: np.ndarray) -> CoefficientGradient:
    """Chain rule ``dJ/dp = G^T sum_n dJ_n/dOmega12`` (and likewise for ``q``).

    Members are summed in ascending detuning order.
    """
    basis = np.asarray(basis, dtype=float)
    ordered = sorted(pulse_grads, key=lambda g: g.detuning)
    k = basis.shape[0]
    s12 = np.zeros(k)
    s23 = np.zeros(k)
    for g in ordered:
        if g.d_omega12.shape != (k,) or g.d_omega23.shape != (k,):
            raise ValueError("pulse gradient length does not match the basis rows")
        s12 = s12 + g.d_omega12
        s23 = s23 + g.d_omega23
    return CoefficientGradient(dp=basis.T @ s12, dq=basis.T @ s23)


def finite_difference_gradient(objective: Callable[[np.ndarray], float], point,
                               step: float = 1e-6) -> np.ndarray:
    """Central differences ``(f(x + h e_i) - f(x - h e_i)) / 2h`` for every component."""
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    x0 = np.array(point, dtype=float)
    grad = np.empty_like(x0)
    for i in range(x0.size):
        x = x0.copy()
        x.flat[i] = x0.flat[i] + step
        fp = objective(x)
        x.flat[i] = x0.flat[i] - step
        fm = objective(x)
        grad.flat[i] = (fp - fm) / (2.0 * step)
    return grad


def relative_l2_error(approx, reference) -> float:
    reference = np.asarray(reference, dtype=float)
    denom = float(np.linalg.norm(reference))
    err = float(np.linalg.norm(np.asarray(approx, dtype=float) - reference))
    return err / denom if denom > 0 else err


def worker_count(workers: int | None = None) -> int:
    """Worker threads for ensemble passes; ``ROBUST_SHUTTLE_THREADS`` caps the default."""
    if workers is None:
        env = os.environ.get(THREADS_ENV)
        workers = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(workers))


@dataclass(frozen=True)
class EnsembleEvaluation:
    """Objective value, per-member fidelities and (optionally) the coefficient gradient."""

    value: float
    fidelities: np.ndarray
    gradient: CoefficientGradient | None
    pulses: PulseTable


def _member(pulses: PulseTable, delta: float, hbar: float, with_grad: bool):
    traj = evolve(pulses, delta, hbar)
    fid = fidelity(traj.final_state)
    if not with_grad:
        return fid, None
    lam = backward_costates(pulses, delta, hbar, trajectory=traj)
    return fid, pulse_gradient(traj, lam, pulses)


def evaluate_ensemble(ensemble: UncertaintyEnsemble, coeffs: FourierCoefficients,
                      n_steps: int, horizon: float, hbar: float = HBAR_MEV_NS,
                      with_grad: bool = True, workers: int | None = None) -> EnsembleEvaluation:
    """Aggregate fidelity over the ensemble and its gradient in coefficient space.

    Members are independent and may be spread over threads; the reduction is
    always done in grid order, so the result does not depend on ``workers``.
    """
    pulses = sample_pulses(coeffs, n_steps, horizon)
    deltas = [float(d) for d in ensemble.grid]
    n_workers = min(worker_count(workers), len(deltas))
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(lambda d: _member(pulses, d, hbar, with_grad), deltas))
    else:
        results = [_member(pulses, d, hbar, with_grad) for d in deltas]

    fids = np.array([r[0] for r in results])
    value = 0.0
    for f in fids:
        value += f
    grad = None
    if with_grad:
        grad = coefficient_gradient([r[1] for r in results], basis_matrix(n_steps, coeffs.m_max))
    return EnsembleEvaluation(value=value, fidelities=fids, gradient=grad, pulses=pulses)
