"""Gradient ascent on the ensemble fidelity, and robustness sweeps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import HBAR_MEV_NS
from .controls import FourierCoefficients, check_bandwidth
from .gradient import EnsembleEvaluation, evaluate_ensemble
from .model import UncertaintyEnsemble, ensemble_grid

__all__ = [
    "DIVERGENCE_PATIENCE",
    "DivergenceError",
    "OptimizerConfig",
    "RunResult",
    "init_coefficients",
    "optimize",
    "robustness_sweep",
    "sweep_detunings",
]

log = logging.getLogger(__name__)

DIVERGENCE_PATIENCE = 25
_MAX_HALVINGS = 40


class DivergenceError(RuntimeError):
    """Fixed-step ascent kept lowering the objective; ``result`` holds the last iterate."""

    def __init__(self, message: str, result: "RunResult"):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for :func:`optimize`.

    ``step_size`` multiplies the coefficient gradient (fidelity per meV), so
    its unit is meV^2.  The default was calibrated on the nominal 2.72 meV
    problem with ``K = 100`` and ``T = 100`` ns at the physical hbar.
    """

    step_size: float = 1e-7
    max_iters: int = 5000
    objective_tol: float = 1e-8
    seed: int = 1
    init_scale: float = 0.01
    line_search: bool = False
    target_mean_fidelity: float = 0.9999

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be at least 1, got {self.max_iters}")
        if not self.init_scale >= 0:
            raise ValueError(f"init_scale must be non-negative, got {self.init_scale}")
        if not 0.0 <= self.target_mean_fidelity <= 1.0:
            raise ValueError("target_mean_fidelity must lie in [0, 1]")
        if self.objective_tol < 0:
            raise ValueError("objective_tol must be non-negative")


@dataclass(frozen=True)
class RunResult:
    coefficients: FourierCoefficients
    history: list[float]
    final_fidelities: np.ndarray
    iterations_used: int
    converged: bool
    message: str = ""
    deltas: np.ndarray = field(default_factory=lambda: np.zeros(0))


def init_coefficients(seed: int, scale: float, m_max: int) -> FourierCoefficients:
    """Uniform coefficients in ``[-scale, scale]`` drawn from ``numpy``'s PCG64 stream.

    ``p`` takes the first ``2M+1`` draws of ``default_rng(seed)`` and ``q`` the
    next ``2M+1``.
    """
    if scale < 0:
        raise ValueError(f"scale must be non-negative, got {scale}")
    n = 2 * m_max + 1
    if scale == 0:
        return FourierCoefficients.zeros(m_max)
    draws = np.random.default_rng(seed).uniform(-scale, scale, size=2 * n)
    return FourierCoefficients(draws[:n], draws[n:])


def optimize(ensemble: UncertaintyEnsemble, horizon: tuple[float, int], m_max: int,
             config: OptimizerConfig, hbar: float = HBAR_MEV_NS,
             f_max: float | None = None, workers: int | None = None,
             initial: FourierCoefficients | None = None,
             callback: Callable[[int, EnsembleEvaluation], None] | None = None) -> RunResult:
    """Maximise the aggregate fidelity over ``ensemble`` by gradient ascent.

    ``horizon`` is ``(T in ns, K steps)``.  Each iteration moves the
    coefficients by ``step_size * dJ/d(p, q)``; with ``line_search`` the step
    is halved until the objective does not decrease.  Stops on
    ``max_iters``, on an improvement below ``objective_tol``, or once the
    mean fidelity reaches ``target_mean_fidelity``.

    Raises
    ------
    ValueError
        If ``f_max`` is given and ``M / T`` exceeds it.
    DivergenceError
        If fixed-step ascent lowers the objective for
        ``DIVERGENCE_PATIENCE`` consecutive iterations.
    """
    t_total, n_steps = horizon
    if f_max is not None and not check_bandwidth(m_max, t_total, f_max):
        raise ValueError(
            f"highest harmonic {m_max / t_total:.4g} GHz exceeds f_max = {f_max} GHz")
    n = len(ensemble)
    coeffs = initial if initial is not None else init_coefficients(
        config.seed, config.init_scale, m_max)
    if coeffs.m_max != m_max:
        raise ValueError(f"initial coefficients have M={coeffs.m_max}, expected {m_max}")

    def evaluate(c, with_grad=True):
        return evaluate_ensemble(ensemble, c, n_steps, t_total, hbar, with_grad, workers)

    ev = evaluate(coeffs)
    history = [ev.value]
    converged = False
    message = "max_iters reached"
    decreases = 0
    iterations = 0

    while True:
        if callback is not None:
            callback(iterations, ev)
        if ev.value / n >= config.target_mean_fidelity:
            converged, message = True, "target mean fidelity reached"
            break
        if iterations >= config.max_iters:
            break
        if len(history) > 1 and 0.0 <= history[-1] - history[-2] < config.objective_tol:
            converged, message = True, "objective improvement below tolerance"
            break

        grad = ev.gradient
        step = config.step_size
        candidate = FourierCoefficients(coeffs.p + step * grad.dp, coeffs.q + step * grad.dq)
        new_ev = evaluate(candidate)
        if config.line_search:
            halvings = 0
            while new_ev.value < ev.value and halvings < _MAX_HALVINGS:
                step *= 0.5
                halvings += 1
                candidate = FourierCoefficients(coeffs.p + step * grad.dp,
                                                coeffs.q + step * grad.dq)
                new_ev = evaluate(candidate)
            if new_ev.value < ev.value:
                message = "line search found no ascent step"
                converged = True
                break

        iterations += 1
        decreases = decreases + 1 if new_ev.value < ev.value else 0
        coeffs, ev = candidate, new_ev
        history.append(ev.value)
        if decreases >= DIVERGENCE_PATIENCE:
            result = _result(coeffs, history, ev, iterations, False,
                             "objective decreased for 25 consecutive iterations", ensemble)
            raise DivergenceError(
                f"objective decreased for {DIVERGENCE_PATIENCE} consecutive iterations "
                f"(J = {ev.value:.6g}); try a smaller step_size than {config.step_size:g}",
                result)

    log.info("optimize: %s after %d iterations, J/N = %.6f", message, iterations, ev.value / n)
    return _result(coeffs, history, ev, iterations, converged, message, ensemble)


def _result(coeffs, history, ev, iterations, converged, message, ensemble) -> RunResult:
    return RunResult(coefficients=coeffs, history=[float(h) for h in history],
                     final_fidelities=np.array(ev.fidelities), iterations_used=iterations,
                     converged=converged, message=message, deltas=np.array(ensemble.grid))


def sweep_detunings(delta_star: float, rel_halfwidth: float, n_test: int) -> UncertaintyEnsemble:
    """``n_test`` evenly spaced detunings covering ``delta_star * [1 - r, 1 + r]``."""
    if rel_halfwidth < 0:
        raise ValueError(f"rel_halfwidth must be non-negative, got {rel_halfwidth}")
    if n_test == 1:
        return ensemble_grid(delta_star, 0.0, 1)
    return ensemble_grid(delta_star, abs(delta_star) * rel_halfwidth, n_test)


def robustness_sweep(coeffs: FourierCoefficients, horizon: tuple[float, int], delta_star: float,
                     rel_halfwidth: float, n_test: int, hbar: float = HBAR_MEV_NS,
                     workers: int | None = None) -> np.ndarray:
    """Fidelities of fixed pulses on the :func:`sweep_detunings` grid, without re-optimising."""
    t_total, n_steps = horizon
    grid = sweep_detunings(delta_star, rel_halfwidth, n_test)
    ev = evaluate_ensemble(grid, coeffs, n_steps, t_total, hbar, with_grad=False, workers=workers)
    return ev.fidelities
