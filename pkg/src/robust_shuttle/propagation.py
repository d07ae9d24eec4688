"""Piecewise-constant density-matrix propagation and fidelities.

Step ``k`` evolves with ``U(k) = exp(-i H(k) dt / hbar)``, built from the
eigensystem of the traceless step Hamiltonian.  Forward states satisfy
``rho(k+1) = U(k) rho(k) U(k)^dagger`` from ``rho(0) = rho_I``; costates run
backwards, ``Lambda(k) = U(k)^dagger Lambda(k+1) U(k)`` from
``Lambda(K) = rho_T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import HBAR_MEV_NS
from .algebra import dagger, eig_hermitian3
from .controls import PulseTable
from .model import (
    HamiltonianParams,
    UncertaintyEnsemble,
    boundary_states,
    closed_form_eig_batch,
    hamiltonian_batch,
)

__all__ = [
    "Costates",
    "StepEigensystems",
    "Trajectory",
    "aggregate_fidelity",
    "backward_costates",
    "evolve",
    "fidelity",
    "step_eigensystems",
    "step_propagator",
    "transfer_loss",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class StepEigensystems:
    """Per-step eigenvalues (meV, shape ``(K, 3)``) and eigenvectors (``(K, 3, 3)``)."""

    gamma: np.ndarray
    t: np.ndarray
    n_generic: int = 0


def step_eigensystems(delta, omega12, omega23, traceless: bool = True) -> StepEigensystems:
    """Eigensystems for a run of step Hamiltonians.

    The closed form is used wherever it is regular; the remaining steps go
    through the Jacobi solver.  ``traceless=False`` shifts the eigenvalues by
    ``delta / 3`` to describe the full Hamiltonian.
    """
    omega12 = np.atleast_1d(np.asarray(omega12, dtype=float))
    omega23 = np.atleast_1d(np.asarray(omega23, dtype=float))
    delta_b = np.broadcast_to(np.asarray(delta, dtype=float), omega12.shape)
    gamma, t, _, _, ok = closed_form_eig_batch(delta_b, omega12, omega23)
    bad = np.flatnonzero(~ok)
    if bad.size:
        h = hamiltonian_batch(delta_b[bad], omega12[bad], omega23[bad], traceless=True)
        for j, idx in enumerate(bad):
            eig = eig_hermitian3(h[j])
            gamma[idx] = eig.eigenvalues
            t[idx] = eig.eigenvectors
    if not traceless:
        gamma = gamma + (delta_b / 3.0)[..., None]
    return StepEigensystems(gamma=gamma, t=t, n_generic=int(bad.size))


def _propagators(eig: StepEigensystems, dt: float, hbar: float) -> np.ndarray:
    phases = np.exp(-1j * eig.gamma * (dt / hbar))
    return (eig.t * phases[..., None, :]) @ dagger(eig.t)


def step_propagator(params: HamiltonianParams, dt: float, hbar: float = HBAR_MEV_NS,
                    traceless: bool = True) -> np.ndarray:
    """``exp(-i H dt / hbar)`` for one constant-control step."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    eig = step_eigensystems(params.delta, params.omega12, params.omega23, traceless)
    return _propagators(eig, dt, hbar)[0]


@dataclass(frozen=True)
class Trajectory:
    """Forward states ``rho(0..K)`` and the step data that produced them."""

    states: np.ndarray
    propagators: np.ndarray
    eig: StepEigensystems
    detuning: float
    pulses: PulseTable
    hbar: float

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class Costates:
    """Backward-propagated targets ``Lambda(0..K)``."""

    lambdas: np.ndarray
    detuning: float
    pulses: PulseTable = field(repr=False)
    hbar: float = HBAR_MEV_NS


def evolve(pulses: PulseTable, delta: float, hbar: float = HBAR_MEV_NS,
           traceless: bool = True) -> Trajectory:
    """Propagate ``rho_I`` through every step of ``pulses`` at detuning ``delta``."""
    eig = step_eigensystems(delta, pulses.omega12, pulses.omega23, traceless)
    units = _propagators(eig, pulses.dt, hbar)
    units_h = dagger(units)
    rho_i, _ = boundary_states()
    states = np.empty((pulses.k_steps + 1, 3, 3), dtype=complex)
    states[0] = rho = rho_i
    for k in range(pulses.k_steps):
        rho = units[k] @ rho @ units_h[k]
        states[k + 1] = rho
    return Trajectory(states=_frozen(states), propagators=_frozen(units), eig=eig,
                      detuning=float(delta), pulses=pulses, hbar=hbar)


def backward_costates(pulses: PulseTable, delta: float, hbar: float = HBAR_MEV_NS,
                      trajectory: Trajectory | None = None) -> Costates:
    """Costates for ``pulses``; reuses the propagators of ``trajectory`` when given."""
    if trajectory is not None:
        if trajectory.pulses is not pulses or trajectory.detuning != float(delta) \
                or trajectory.hbar != hbar:
            raise ValueError("trajectory was computed for different pulses, detuning or hbar")
        units = trajectory.propagators
    else:
        eig = step_eigensystems(delta, pulses.omega12, pulses.omega23)
        units = _propagators(eig, pulses.dt, hbar)
    units_h = dagger(units)
    _, rho_t = boundary_states()
    lambdas = np.empty((pulses.k_steps + 1, 3, 3), dtype=complex)
    lambdas[-1] = lam = rho_t
    for k in range(pulses.k_steps - 1, -1, -1):
        lam = units_h[k] @ lam @ units[k]
        lambdas[k] = lam
    return Costates(lambdas=_frozen(lambdas), detuning=float(delta), pulses=pulses, hbar=hbar)


def fidelity(rho_final) -> float:
    """``tr(rho_T rho)``: the population left on the right-hand donor."""
    _, rho_t = boundary_states()
    return float(np.trace(rho_t @ np.asarray(rho_final)).real)


def transfer_loss(rho_final) -> float:
    """Squared Frobenius distance ``||rho_T - rho||_F^2``; equals ``2 - 2 J`` for pure states."""
    _, rho_t = boundary_states()
    d = rho_t - np.asarray(rho_final)
    return float(np.sum(np.abs(d) ** 2))


def aggregate_fidelity(ensemble: UncertaintyEnsemble, pulses: PulseTable,
                       hbar: float = HBAR_MEV_NS) -> float:
    """Sum of terminal fidelities over the ensemble detunings, in ascending order."""
    total = 0.0
    for delta in ensemble.grid:
        total += fidelity(evolve(pulses, delta, hbar).final_state)
    return total
