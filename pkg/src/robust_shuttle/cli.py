"""``robust-shuttle`` command line: optimize, simulate, sweep, gradcheck.

Exit codes: 0 success, 1 quantitative check failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .controls import FourierCoefficients, check_bandwidth, sample_pulses
from .gradient import evaluate_ensemble, finite_difference_gradient, relative_l2_error
from .optimizer import (
    DivergenceError,
    init_coefficients,
    optimize,
    robustness_sweep,
    sweep_detunings,
)
from .propagation import evolve

log = logging.getLogger("robust_shuttle")

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2
GRADCHECK_TOL = 1e-6


class UsageError(Exception):
    pass


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, (int, np.integer)) else _fmt(v) for v in row])


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def read_coefficients(path, cfg: RunConfig) -> FourierCoefficients:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"coefficients file not found: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read coefficients from {path}: {exc}") from None
    try:
        m = int(data["M"])
        coeffs = FourierCoefficients(np.asarray(data["p"], float), np.asarray(data["q"], float))
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{path}: malformed coefficients: {exc}") from None
    if coeffs.m_max != m or m != cfg.m_harmonics:
        raise UsageError(
            f"{path}: coefficient length 2M+1={coeffs.p.size} with M={m} does not match "
            f"config m_harmonics={cfg.m_harmonics}")
    return coeffs


def _check_bandwidth(cfg: RunConfig) -> None:
    if not check_bandwidth(cfg.m_harmonics, cfg.horizon_ns, cfg.f_max_ghz):
        raise UsageError(
            f"bandwidth violation: M/T = {cfg.m_harmonics / cfg.horizon_ns:.6g} GHz exceeds "
            f"f_max_ghz = {cfg.f_max_ghz}")


def _out_dir(cfg: RunConfig, override) -> Path:
    return Path(override) if override else Path(cfg.output_dir)


def cmd_optimize(args) -> int:
    cfg = load_config(args.config)
    _check_bandwidth(cfg)
    out = _out_dir(cfg, args.output_dir)
    start = time.perf_counter()
    status = EXIT_OK
    try:
        result = optimize(cfg.ensemble(), cfg.horizon, cfg.m_harmonics,
                          cfg.optimizer.to_config(), hbar=cfg.hbar_mev_ns)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        result = exc.result
        status = EXIT_CHECK
    wall = time.perf_counter() - start

    coeffs = result.coefficients
    pulses = sample_pulses(coeffs, cfg.k_steps, cfg.horizon_ns)
    write_csv(out / "pulses.csv", ["k", "t_ns", "omega12_mev", "omega23_mev"],
              ((k, t, a, b) for k, (t, a, b) in
               enumerate(zip(pulses.times, pulses.omega12, pulses.omega23))))
    write_json(out / "coefficients.json",
               {"M": coeffs.m_max, "p": coeffs.p.tolist(), "q": coeffs.q.tolist()})
    fids = result.final_fidelities
    report = {
        "tool": "robust-shuttle",
        "version": __version__,
        "seed": cfg.optimizer.seed,
        "config": cfg.model_dump(),
        "history": result.history,
        "deltas_mev": result.deltas.tolist(),
        "final_fidelities": fids.tolist(),
        "min_fidelity": float(fids.min()),
        "mean_fidelity": float(fids.mean()),
        "iterations_used": result.iterations_used,
        "converged": result.converged,
        "message": result.message,
    }
    write_json(out / "report.json", report)
    # wall time lives apart from report.json so the report stays reproducible
    write_json(out / "timing.json", {"wall_time_s": wall})
    print(f"optimize: {result.message}; {result.iterations_used} iterations, "
          f"min fidelity {fids.min():.6f}, mean {fids.mean():.6f} ({wall:.1f} s) -> {out}")
    return status


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    coeffs = read_coefficients(args.coefficients, cfg)
    pulses = sample_pulses(coeffs, cfg.k_steps, cfg.horizon_ns)
    traj = evolve(pulses, args.delta, cfg.hbar_mev_ns)
    pops = np.real(np.diagonal(traj.states, axis1=1, axis2=2))
    path = Path(args.out) if args.out else _out_dir(cfg, None) / "trajectory.csv"
    write_csv(path, ["k", "t_ns", "rho11", "rho22", "rho33"],
              ((k, k * pulses.dt, *row) for k, row in enumerate(pops)))
    print(f"simulate: delta = {args.delta} meV, final rho33 = {pops[-1, 2]:.6f} -> {path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    coeffs = read_coefficients(args.coefficients, cfg)
    if args.points < 1:
        raise UsageError("--points must be at least 1")
    if args.rel < 0:
        raise UsageError("--rel must be non-negative")
    deltas = sweep_detunings(cfg.delta_star_mev, args.rel, args.points).grid
    fids = robustness_sweep(coeffs, cfg.horizon, cfg.delta_star_mev, args.rel, args.points,
                            hbar=cfg.hbar_mev_ns)
    path = Path(args.out) if args.out else _out_dir(cfg, None) / "sweep.csv"
    write_csv(path, ["delta_mev", "fidelity"], zip(deltas, fids))
    print(f"sweep: {args.points} detunings, min fidelity {fids.min():.6f} -> {path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config)
    m = cfg.m_harmonics
    scale = cfg.optimizer.init_scale if args.scale is None else args.scale
    coeffs = init_coefficients(args.seed, scale, m)
    ens = cfg.ensemble()
    ev = evaluate_ensemble(ens, coeffs, cfg.k_steps, cfg.horizon_ns, cfg.hbar_mev_ns)
    sign = -1.0 if args.corrupt_sign else 1.0
    analytic = sign * ev.gradient.flat()

    n = 2 * m + 1

    def objective(x):
        c = FourierCoefficients(x[:n], x[n:])
        return evaluate_ensemble(ens, c, cfg.k_steps, cfg.horizon_ns, cfg.hbar_mev_ns,
                                 with_grad=False).value

    numeric = finite_difference_gradient(objective, np.concatenate([coeffs.p, coeffs.q]),
                                         args.step)
    err_p = relative_l2_error(analytic[:n], numeric[:n])
    err_q = relative_l2_error(analytic[n:], numeric[n:])
    passed = err_p < GRADCHECK_TOL and err_q < GRADCHECK_TOL
    summary = {
        "seed": args.seed,
        "init_scale_mev": scale,
        "fd_step_mev": args.step,
        "objective": ev.value,
        "analytic_dp": analytic[:n].tolist(),
        "analytic_dq": analytic[n:].tolist(),
        "numeric_dp": numeric[:n].tolist(),
        "numeric_dq": numeric[n:].tolist(),
        "norm_analytic_dp": float(np.linalg.norm(analytic[:n])),
        "norm_analytic_dq": float(np.linalg.norm(analytic[n:])),
        "norm_numeric_dp": float(np.linalg.norm(numeric[:n])),
        "norm_numeric_dq": float(np.linalg.norm(numeric[n:])),
        "rel_error_dp": err_p,
        "rel_error_dq": err_q,
        "tolerance": GRADCHECK_TOL,
        "passed": passed,
    }
    path = Path(args.out) if args.out else _out_dir(cfg, None) / "gradcheck.json"
    write_json(path, summary)
    verdict = "PASS" if passed else "FAIL"
    print(f"gradcheck {verdict}: rel error dp {err_p:.3e}, dq {err_q:.3e} "
          f"(|dp| {summary['norm_analytic_dp']:.6g} vs {summary['norm_numeric_dp']:.6g}, "
          f"|dq| {summary['norm_analytic_dq']:.6g} vs {summary['norm_numeric_dq']:.6g}) -> {path}")
    return EXIT_OK if passed else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robust-shuttle",
        description="Design detuning-robust tunnelling pulses for a three-donor chain.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="optimise pulses and write pulses/coefficients/report")
    p.add_argument("config", help="RunConfig JSON file")
    p.add_argument("--output-dir", help="override the config's output_dir")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("simulate", help="site populations over time at one detuning")
    p.add_argument("coefficients", help="coefficients.json from optimize")
    p.add_argument("config", help="RunConfig JSON file")
    p.add_argument("--delta", type=float, required=True, help="detuning in meV")
    p.add_argument("--out", help="output CSV (default <output_dir>/trajectory.csv)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="terminal fidelity over a detuning range")
    p.add_argument("coefficients", help="coefficients.json from optimize")
    p.add_argument("config", help="RunConfig JSON file")
    p.add_argument("--rel", type=float, required=True, help="relative half-width, e.g. 0.25")
    p.add_argument("--points", type=int, required=True, help="number of detunings")
    p.add_argument("--out", help="output CSV (default <output_dir>/sweep.csv)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("config", help="RunConfig JSON file")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--step", type=float, default=1e-6, help="finite-difference step (meV)")
    p.add_argument("--scale", type=float, default=None,
                   help="coefficient range of the random point (default optimizer.init_scale)")
    p.add_argument("--out", help="output JSON (default <output_dir>/gradcheck.json)")
    p.add_argument("--corrupt-sign", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
