"""Fourier parametrisation of the two tunnelling pulses.

Each pulse is ``c0 + sum_m [c_m cos(m w t) + s_m sin(m w t)]`` with
``w = 2 pi / T``, sampled at the left edge of ``K`` equal steps.  Coefficient
vectors are ordered ``(c0, c1..cM, s1..sM)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FourierCoefficients",
    "PulseTable",
    "basis_matrix",
    "basis_rows",
    "check_bandwidth",
    "sample_pulses",
]


@dataclass(frozen=True)
class FourierCoefficients:
    """Harmonic coefficients (meV) for the 1-2 pulse (``p``) and the 2-3 pulse (``q``)."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        q = np.array(self.q, dtype=float)
        if p.ndim != 1 or q.ndim != 1 or p.size != q.size or p.size % 2 == 0:
            raise ValueError(
                f"p and q must be 1-D with equal odd length 2M+1, got {p.shape} and {q.shape}")
        p.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @property
    def m_max(self) -> int:
        return (self.p.size - 1) // 2

    @classmethod
    def zeros(cls, m_max: int) -> "FourierCoefficients":
        return cls(np.zeros(2 * m_max + 1), np.zeros(2 * m_max + 1))


@dataclass(frozen=True)
class PulseTable:
    """Piecewise-constant pulse values; step ``k`` covers ``[k dt, (k+1) dt)``."""

    dt: float
    omega12: np.ndarray
    omega23: np.ndarray

    def __post_init__(self):
        w12 = np.array(self.omega12, dtype=float)
        w23 = np.array(self.omega23, dtype=float)
        if w12.ndim != 1 or w12.shape != w23.shape or w12.size == 0:
            raise ValueError("omega12 and omega23 must be non-empty 1-D arrays of equal length")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        w12.setflags(write=False)
        w23.setflags(write=False)
        object.__setattr__(self, "omega12", w12)
        object.__setattr__(self, "omega23", w23)

    @property
    def k_steps(self) -> int:
        return self.omega12.size

    @property
    def times(self) -> np.ndarray:
        """Left edges ``t_k = k dt`` in ns."""
        return np.arange(self.k_steps) * self.dt


def basis_rows(k, n_steps: int, m_max: int) -> np.ndarray:
    """Rows ``[1, cos(2 pi k m / K), sin(2 pi k m / K)]`` for integer step indices ``k``."""
    k = np.asarray(k, dtype=np.int64)
    m = np.arange(1, m_max + 1, dtype=np.int64)
    # reduce k*m mod K first so the rows are exactly K-periodic
    phase = 2.0 * np.pi * (np.outer(k, m) % n_steps) / n_steps
    return np.hstack([np.ones((k.size, 1)), np.cos(phase), np.sin(phase)])


def basis_matrix(n_steps: int, m_max: int) -> np.ndarray:
    """The ``K x (2M+1)`` matrix mapping coefficients to sampled pulse values."""
    if n_steps < 1 or m_max < 0:
        raise ValueError(f"need K >= 1 and M >= 0, got K={n_steps}, M={m_max}")
    if 2 * m_max + 1 > n_steps:
        raise ValueError(
            f"M={m_max} harmonics alias on K={n_steps} steps (need 2M+1 <= K); "
            "the sampled basis would be rank deficient")
    return basis_rows(np.arange(n_steps), n_steps, m_max)


def sample_pulses(coeffs: FourierCoefficients, n_steps: int, horizon: float) -> PulseTable:
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    g = basis_matrix(n_steps, coeffs.m_max)
    return PulseTable(dt=horizon / n_steps, omega12=g @ coeffs.p, omega23=g @ coeffs.q)


def check_bandwidth(m_max: int, horizon: float, f_max: float) -> bool:
    """True iff the highest harmonic ``M / T`` (GHz for T in ns) is within ``f_max``."""
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    return m_max <= f_max * horizon * (1.0 + 1e-12)
