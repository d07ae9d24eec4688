"""Small complex 3x3 matrix helpers.

Everything here works on plain ``numpy`` arrays of shape ``(3, 3)`` (or
stacks of them where noted).  The Hermitian eigensolver is a cyclic complex
Jacobi iteration; it serves both as the fallback for degenerate step
Hamiltonians and as an independent check on the closed-form decomposition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "EigenDecomposition3",
    "NotHermitianError",
    "dagger",
    "eig_hermitian3",
    "frobenius_norm_sq",
    "hadamard",
    "is_hermitian",
    "is_unitary",
]

_JACOBI_MAX_SWEEPS = 50
_TINY = np.finfo(float).tiny


class NotHermitianError(ValueError):
    """Raised when a matrix handed to the Hermitian eigensolver is not Hermitian."""


@dataclass(frozen=True)
class EigenDecomposition3:
    """Eigenvalues (ascending, meV) and column eigenvectors of a 3x3 Hermitian matrix."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        t = self.eigenvectors
        return (t * self.eigenvalues) @ t.conj().T


def _as_matrix3(a) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.shape[-2:] != (3, 3):
        raise ValueError(f"expected 3x3 matrix, got shape {a.shape}")
    return a


def dagger(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose over the last two axes."""
    return np.swapaxes(np.conj(a), -1, -2)


def hadamard(a, b) -> np.ndarray:
    """Entrywise product of two 3x3 matrices."""
    a = _as_matrix3(a)
    b = _as_matrix3(b)
    return a * b


def frobenius_norm_sq(a) -> float:
    """``tr(A A^dagger)``, the sum of squared entry magnitudes."""
    a = _as_matrix3(a)
    return float(np.sum(a.real**2 + a.imag**2))


def is_hermitian(a, tol: float = 1e-12) -> bool:
    a = _as_matrix3(a)
    return float(np.linalg.norm(a - dagger(a))) <= tol


def is_unitary(u, tol: float = 1e-12) -> bool:
    u = _as_matrix3(u)
    return float(np.linalg.norm(dagger(u) @ u - np.eye(3))) <= tol


def _fix_phases(vecs: np.ndarray) -> np.ndarray:
    # make the largest-magnitude entry of each column real and positive
    out = vecs.copy()
    for j in range(3):
        col = out[:, j]
        i = int(np.argmax(np.abs(col)))
        out[:, j] = col * (abs(col[i]) / col[i])
    return out


def eig_hermitian3(h, tol: float = 1e-12) -> EigenDecomposition3:
    """Diagonalise a 3x3 Hermitian matrix by cyclic complex Jacobi rotations.

    Eigenvalues come back in ascending order.  Each eigenvector column is
    rotated by a global phase so that its largest-magnitude component is real
    and positive, which makes the output deterministic.

    Raises
    ------
    NotHermitianError
        If ``||H - H^dagger||_F`` exceeds ``tol * max(1, ||H||_F)``.
    """
    a = _as_matrix3(h).copy()
    scale = max(1.0, float(np.linalg.norm(a)))
    asym = float(np.linalg.norm(a - dagger(a)))
    if asym > tol * scale:
        raise NotHermitianError(
            f"matrix is not Hermitian: ||H - H^dagger||_F = {asym:.3e} "
            f"exceeds {tol:.1e} * {scale:.3e}"
        )
    a = 0.5 * (a + dagger(a))
    v = np.eye(3, dtype=complex)
    stop = np.finfo(float).eps * float(np.linalg.norm(a))

    for _ in range(_JACOBI_MAX_SWEEPS):
        off = np.sqrt(2.0 * sum(abs(a[p, q]) ** 2 for p, q in ((0, 1), (0, 2), (1, 2))))
        if off <= stop:
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = a[p, q]
            mag = abs(apq)
            if mag < _TINY:
                a[p, q] = a[q, p] = 0.0
                continue
            phase = complex(apq.real / mag, apq.imag / mag)
            theta = (a[q, q].real - a[p, p].real) / (2.0 * mag)
            if abs(theta) > 1e150:
                t = 0.5 / theta
            else:
                t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            rot = np.eye(3, dtype=complex)
            rot[p, p] = c
            rot[q, q] = c
            rot[p, q] = s * phase
            rot[q, p] = -s * np.conj(phase)
            a = dagger(rot) @ a @ rot
            a[p, q] = a[q, p] = 0.0
            v = v @ rot
    else:
        raise RuntimeError("Jacobi iteration did not converge")

    w = np.diag(a).real.copy()
    order = np.argsort(w, kind="stable")
    return EigenDecomposition3(eigenvalues=w[order], eigenvectors=_fix_phases(v[:, order]))
