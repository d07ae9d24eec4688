"""Physical model of the three-donor chain.

Energies are in meV.  The chain Hamiltonian is

    H = [[0, -W12, 0], [-W12, D, -W23], [0, -W23, 0]]

with detuning ``D`` on the middle site and tunnelling amplitudes ``W12``,
``W23``.  The traceless form drops ``(D/3) I``, which only contributes a
global phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .algebra import EigenDecomposition3

__all__ = [
    "ClosedFormEig",
    "DegenerateHamiltonianError",
    "G_TOL",
    "H_TOL",
    "HamiltonianParams",
    "SuThreeBasis",
    "UncertaintyEnsemble",
    "boundary_states",
    "check_density_matrix",
    "closed_form_eig",
    "closed_form_eig_batch",
    "ensemble_grid",
    "hamiltonian",
    "hamiltonian_batch",
    "su3_basis",
]

H_TOL = 1e-9
G_TOL = 1e-9


class DegenerateHamiltonianError(ArithmeticError):
    """The closed-form eigendecomposition is singular here; use the generic solver."""


class SuThreeBasis(NamedTuple):
    x1: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    x4: np.ndarray
    x5: np.ndarray
    x6: np.ndarray
    x7: np.ndarray
    x8: np.ndarray


def su3_basis() -> SuThreeBasis:
    """The eight skew-Hermitian traceless generators used to expand ``iH``."""
    i = 1j
    return SuThreeBasis(
        x1=np.array([[0, i, 0], [i, 0, 0], [0, 0, 0]], dtype=complex),
        x2=np.array([[0, 0, 0], [0, 0, i], [0, i, 0]], dtype=complex),
        x3=np.array([[0, 0, 1], [0, 0, 0], [-1, 0, 0]], dtype=complex),
        x4=np.array([[0, 1, 0], [-1, 0, 0], [0, 0, 0]], dtype=complex),
        x5=np.array([[0, 0, 0], [0, 0, 1], [0, -1, 0]], dtype=complex),
        x6=np.array([[0, 0, i], [0, 0, 0], [i, 0, 0]], dtype=complex),
        x7=np.array([[i, 0, 0], [0, -i, 0], [0, 0, 0]], dtype=complex),
        x8=np.array([[i, 0, 0], [0, i, 0], [0, 0, -2 * i]], dtype=complex) / math.sqrt(3.0),
    )


@dataclass(frozen=True)
class HamiltonianParams:
    """Detuning and tunnelling amplitudes for one constant-control step (meV)."""

    delta: float
    omega12: float
    omega23: float

    def __post_init__(self):
        for name in ("delta", "omega12", "omega23"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")


def hamiltonian_batch(delta, omega12, omega23, traceless: bool = True) -> np.ndarray:
    """Stack of chain Hamiltonians, one per element of the broadcast inputs."""
    delta, omega12, omega23 = np.broadcast_arrays(
        np.asarray(delta, dtype=float), np.asarray(omega12, dtype=float),
        np.asarray(omega23, dtype=float))
    h = np.zeros(delta.shape + (3, 3), dtype=complex)
    h[..., 0, 1] = h[..., 1, 0] = -omega12
    h[..., 1, 2] = h[..., 2, 1] = -omega23
    h[..., 1, 1] = delta
    if traceless:
        shift = delta / 3.0
        for j in range(3):
            h[..., j, j] -= shift
    return h


def hamiltonian(params: HamiltonianParams, traceless: bool = False) -> np.ndarray:
    return hamiltonian_batch(params.delta, params.omega12, params.omega23, traceless)


def boundary_states() -> tuple[np.ndarray, np.ndarray]:
    """Electron on the left donor, and electron on the right donor."""
    rho_i = np.zeros((3, 3), dtype=complex)
    rho_t = np.zeros((3, 3), dtype=complex)
    rho_i[0, 0] = 1.0
    rho_t[2, 2] = 1.0
    return rho_i, rho_t


def check_density_matrix(rho, herm_tol=1e-12, trace_tol=1e-12, psd_tol=1e-10) -> np.ndarray:
    """Validate Hermiticity, unit trace and positivity; return ``rho`` as an array."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (3, 3):
        raise ValueError(f"density matrix must be 3x3, got {rho.shape}")
    if np.linalg.norm(rho - rho.conj().T) > herm_tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > trace_tol:
        raise ValueError(f"density matrix trace is {np.trace(rho)}, not 1")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -psd_tol:
        raise ValueError("density matrix has a negative eigenvalue")
    return rho


@dataclass(frozen=True)
class UncertaintyEnsemble:
    """Evenly spaced detunings covering ``[delta_star - delta_eps, delta_star + delta_eps]``."""

    delta_star: float
    delta_eps: float
    n_points: int
    grid: np.ndarray

    def __len__(self) -> int:
        return self.n_points


def ensemble_grid(delta_star: float, delta_eps: float, n: int) -> UncertaintyEnsemble:
    if n < 1:
        raise ValueError(f"ensemble needs at least one point, got n={n}")
    if delta_eps < 0:
        raise ValueError(f"delta_eps must be non-negative, got {delta_eps}")
    if n == 1:
        if delta_eps != 0:
            raise ValueError("a single-point ensemble requires delta_eps == 0")
        grid = np.array([float(delta_star)])
    else:
        # symmetric about delta_star so the odd-N midpoint is exact
        offsets = (2.0 * np.arange(n) - (n - 1)) / (n - 1)
        grid = delta_star + delta_eps * offsets
        grid[0] = delta_star - delta_eps
        grid[-1] = delta_star + delta_eps
    grid.setflags(write=False)
    return UncertaintyEnsemble(float(delta_star), float(delta_eps), int(n), grid)


@dataclass(frozen=True)
class ClosedFormEig:
    """Analytic eigensystem of the traceless step Hamiltonian.

    ``gamma`` holds ``(-D/3, (D + 3g)/6, (D - 3g)/6)`` and the columns of
    ``t_matrix`` are the matching unit eigenvectors.
    """

    gamma: np.ndarray
    t_matrix: np.ndarray
    g: float
    h: float

    def as_decomposition(self) -> EigenDecomposition3:
        return EigenDecomposition3(eigenvalues=self.gamma, eigenvectors=self.t_matrix)


def closed_form_eig_batch(delta, omega12, omega23):
    """Vectorised closed-form eigensystems.

    Returns ``(gamma, t, g, h, ok)`` where ``ok`` flags the entries away from
    the singular set (``h <= H_TOL`` or ``g - |D| <= G_TOL``).  Entries with
    ``ok == False`` are filled with finite placeholders and must not be used.
    """
    delta, w12, w23 = np.broadcast_arrays(
        np.asarray(delta, dtype=float), np.asarray(omega12, dtype=float),
        np.asarray(omega23, dtype=float))
    h = np.hypot(w12, w23)
    g = np.sqrt(delta * delta + 4.0 * h * h)
    abs_d = np.abs(delta)
    # g - |D| without cancellation
    g_minus_abs = np.where(g + abs_d > 0, 4.0 * h * h / np.where(g + abs_d > 0, g + abs_d, 1.0), 0.0)
    ok = (h > H_TOL) & (g_minus_abs > G_TOL)
    g_plus_d = np.where(delta >= 0, g + abs_d, g_minus_abs)
    g_minus_d = np.where(delta >= 0, g_minus_abs, g + abs_d)

    safe_h = np.where(ok, h, 1.0)
    safe_g = np.where(ok, g, 1.0)
    gp = np.where(ok, g_plus_d, 1.0)
    gm = np.where(ok, g_minus_d, 1.0)
    n2 = np.sqrt(safe_g * gp / 2.0)
    n3 = np.sqrt(safe_g * gm / 2.0)

    t = np.zeros(delta.shape + (3, 3), dtype=complex)
    t[..., 0, 0] = -w23 / safe_h
    t[..., 2, 0] = w12 / safe_h
    t[..., 0, 1] = w12 / n2
    t[..., 1, 1] = -np.sqrt(gp / (2.0 * safe_g))
    t[..., 2, 1] = w23 / n2
    t[..., 0, 2] = w12 / n3
    t[..., 1, 2] = np.sqrt(gm / (2.0 * safe_g))
    t[..., 2, 2] = w23 / n3
    # columns are unit length analytically; renormalise away rounding
    norms = np.linalg.norm(t, axis=-2, keepdims=True)
    t /= np.where(norms > 0, norms, 1.0)
    t[~ok] = np.eye(3)

    gamma = np.stack([-delta / 3.0, (delta + 3.0 * g) / 6.0, (delta - 3.0 * g) / 6.0], axis=-1)
    return gamma, t, g, h, ok


def closed_form_eig(params: HamiltonianParams) -> ClosedFormEig:
    """Closed-form eigendecomposition of the traceless Hamiltonian.

    Raises
    ------
    DegenerateHamiltonianError
        When ``h <= H_TOL`` or ``g - |D| <= G_TOL``; the caller should fall back
        to :func:`robust_shuttle.algebra.eig_hermitian3`.
    """
    gamma, t, g, h, ok = closed_form_eig_batch(params.delta, params.omega12, params.omega23)
    if not bool(ok):
        raise DegenerateHamiltonianError(
            f"closed form is singular for {params} (h={float(h):.3e}, g={float(g):.3e}); "
            "use the generic eigensolver"
        )
    return ClosedFormEig(gamma=gamma, t_matrix=t, g=float(g), h=float(h))
