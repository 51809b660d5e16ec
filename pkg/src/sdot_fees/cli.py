"""Command-line front end.

Artifacts are JSON (sorted keys, no timing fields, so identical runs are
byte-identical) plus plot-ready CSV for the per-iteration trace. Exit codes:
0 success, 1 malformed config, 2 fee fails the solver assumption checks,
3 the solve or verified property failed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    GeometryError,
    InfeasibleFeeError,
    NewtonError,
    SdotFeesError,
    ShuffleError,
)
from .fees import check_assumptions, conjugate_solve, fee_to_spec, fee_value
from .geometry import cost_sup_norm, transport_cost
from .io import (
    load_fee,
    load_problem,
    regularization_payload,
    write_json,
    write_trace_csv,
)
from .oracle import brute_force_minimize, scaling_ladder
from .regularize import regularize
from .solver import SolverConfig, damped_newton
from .verify import SUITES, run_verify

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ASSUMPTIONS = 2
EXIT_FAILED = 3


class _Parser(argparse.ArgumentParser):
    """Argument errors are config errors (exit 1), not argparse's exit 2."""

    def error(self, message):
        raise ConfigError(message, field="argv")


def _limit_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise ConfigError("threads must be at least 1", field="threads")
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=n)
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def _diagnostic(out_dir: Path | None, payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    if out_dir is not None:
        try:
            write_json(payload, out_dir / "error.json")
        except OSError:
            pass


def _assumption_payload(report) -> dict:
    failed = []
    if not report.strict_interior:
        failed.append("strict_interior")
    if not report.eps_max > 0.0:
        failed.append("positive_mass_floor")
    if not report.strong_convexity_lb > 0.0:
        failed.append("positive_curvature")
    return {
        "eps_max": report.eps_max,
        "strict_interior": report.strict_interior,
        "strong_convexity_lb": report.strong_convexity_lb,
        "essential_smoothness": report.essential_smoothness,
        "newton_ready": report.newton_ready,
        "failed_checks": failed,
    }


def _solver_config(args, eps_max: float) -> SolverConfig:
    kwargs = {}
    if args.zeta is not None:
        kwargs["zeta"] = args.zeta
    if args.eps is not None:
        kwargs["eps"] = args.eps
    elif eps_max > 0.0:
        kwargs["eps"] = 0.9 * eps_max
    if args.eps0 is not None:
        kwargs["eps0"] = args.eps0
    return SolverConfig(**kwargs)


def _prepare_fee(args, problem, out_dir: Path):
    """Load the fee and gate it on the solver assumptions.

    Returns (fee, regularization payload or None) or an integer exit code.
    """
    fee = load_fee(args.fee)
    if fee.n != problem.n_sites:
        raise ConfigError(
            f"fee has {fee.n} parts for {problem.n_sites} sites", field="fee")
    report = check_assumptions(fee)
    if report.newton_ready:
        return fee, None
    if not args.auto_regularize:
        payload = _assumption_payload(report)
        write_json(payload, out_dir / "assumptions.json")
        _diagnostic(out_dir, {
            "error": "fee fails solver assumptions: "
                     + ", ".join(payload["failed_checks"]),
            "failed_checks": payload["failed_checks"],
            "exit_code": EXIT_ASSUMPTIONS,
        })
        return EXIT_ASSUMPTIONS
    eta = args.eta if args.eta is not None else 0.05
    fee_eta, reg_report = regularize(fee, eta, cost_sup_norm(problem))
    return fee_eta, regularization_payload(reg_report)


def _cmd_solve(args, out_dir: Path) -> int:
    problem = load_problem(args.problem)
    prepared = _prepare_fee(args, problem, out_dir)
    if isinstance(prepared, int):
        return prepared
    fee, reg_payload = prepared
    config = _solver_config(args, check_assumptions(fee).eps_max)
    psi0 = np.zeros(problem.n_sites)
    try:
        psi, trace = damped_newton(problem, fee, psi0, config)
    except (NewtonError, ShuffleError) as exc:
        trace = getattr(exc, "trace", None)
        if trace is not None:
            write_trace_csv(trace, out_dir / "trace.csv")
        _diagnostic(out_dir, {"error": str(exc), "exit_code": EXIT_FAILED})
        return EXIT_FAILED
    res = conjugate_solve(fee, psi)
    result = {
        "status": trace.status,
        "iterations": len(trace.records),
        "psi": psi.tolist(),
        "w": res.w.tolist(),
        "transport_cost": transport_cost(problem, psi),
        "fee_value": fee_value(fee, res.w),
        "notes": list(trace.notes),
    }
    if reg_payload is not None:
        result["regularization"] = reg_payload
    write_trace_csv(trace, out_dir / "trace.csv")
    write_json(result, out_dir / "result.json")
    if trace.status != "converged":
        _diagnostic(out_dir, {
            "error": "solver hit the iteration cap before reaching zeta",
            "exit_code": EXIT_FAILED,
        })
        return EXIT_FAILED
    return EXIT_OK


def _cmd_regularize(args, out_dir: Path) -> int:
    problem = load_problem(args.problem)
    fee = load_fee(args.fee)
    if fee.n != problem.n_sites:
        raise ConfigError(
            f"fee has {fee.n} parts for {problem.n_sites} sites", field="fee")
    eta = args.eta if args.eta is not None else 0.05
    fee_eta, report = regularize(fee, eta, cost_sup_norm(problem))
    write_json(fee_to_spec(fee_eta), out_dir / "fee.json")
    write_json(regularization_payload(report), out_dir / "regularization.json")
    return EXIT_OK


def _cmd_verify(args, out_dir: Path) -> int:
    payload = run_verify(seed=args.seed, suites=args.suite,
                         grid_step=args.grid_step)
    write_json(payload, out_dir / "verify.json")
    for name, suite in payload["suites"].items():
        for check in suite["checks"]:
            state = "PASS" if check["passed"] else "FAIL"
            print(f"{state} {name}/{check['name']}: measured {check['measured']:.3e} "
                  f"(tolerance {check['tolerance']:.3e})")
    if not payload["passed"]:
        _diagnostic(out_dir, {
            "error": "one or more property suites failed; see verify.json",
            "exit_code": EXIT_FAILED,
        })
        return EXIT_FAILED
    return EXIT_OK


def _cmd_oracle_compare(args, out_dir: Path) -> int:
    problem = load_problem(args.problem)
    prepared = _prepare_fee(args, problem, out_dir)
    if isinstance(prepared, int):
        return prepared
    fee, reg_payload = prepared
    grid_step = args.grid_step if args.grid_step is not None else 1e-3
    config = _solver_config(args, check_assumptions(fee).eps_max)
    psi, trace = damped_newton(problem, fee, np.zeros(problem.n_sites), config)
    w_newton = conjugate_solve(fee, psi).w
    w_brute = brute_force_minimize(problem, fee, grid_step)
    distance = float(np.abs(w_newton - w_brute).max())
    payload = {
        "grid_step": grid_step,
        "tolerance": 2 * grid_step,
        "distance_inf": distance,
        "w_newton": w_newton.tolist(),
        "w_brute_force": w_brute.tolist(),
        "passed": distance <= 2 * grid_step,
        "solver_status": trace.status,
    }
    if reg_payload is not None:
        payload["regularization"] = reg_payload
    write_json(payload, out_dir / "oracle.json")
    if not payload["passed"] or trace.status != "converged":
        _diagnostic(out_dir, {
            "error": f"newton and brute-force minimizers differ by {distance:.3e} "
                     f"(allowed {2 * grid_step:.3e})",
            "exit_code": EXIT_FAILED,
        })
        return EXIT_FAILED
    return EXIT_OK


def _cmd_stability(args, out_dir: Path) -> int:
    problem = load_problem(args.problem)
    fee = load_fee(args.fee)
    if fee.n != problem.n_sites:
        raise ConfigError(
            f"fee has {fee.n} parts for {problem.n_sites} sites", field="fee")
    grid_step = args.grid_step if args.grid_step is not None else 1e-3
    ladder = scaling_ladder(problem, fee, grid_step=grid_step)
    payload = {
        "scales": list(ladder.scales),
        "distances": list(ladder.distances),
        "ratios": list(ladder.ratios),
        "predicted_ratios": list(ladder.predicted_ratios),
        "sqrt_consistent": ladder.sqrt_consistent,
        "rungs": [
            {
                "description": r.description,
                "kind": r.kind,
                "perturbation": r.perturbation,
                "distance": r.distance,
                "bound_form": r.bound_form,
                "fitted_constant": r.fitted_constant,
                "modulus_estimate": r.modulus_estimate,
                "methods": list(r.methods),
            }
            for r in ladder.reports
        ],
    }
    write_json(payload, out_dir / "stability.json")
    if not ladder.sqrt_consistent:
        _diagnostic(out_dir, {
            "error": "scaling ladder ratios fall outside the square-root window",
            "exit_code": EXIT_FAILED,
        })
        return EXIT_FAILED
    return EXIT_OK


def _add_common(sub, *, fee=True, problem=True, solver=False):
    if problem:
        sub.add_argument("--problem", required=True,
                         help="path to the problem JSON file")
    if fee:
        sub.add_argument("--fee", required=True,
                         help="fee spec: inline JSON or a path to a fee file")
    if solver:
        sub.add_argument("--zeta", type=float, default=None,
                         help="gradient stopping tolerance")
        sub.add_argument("--eps", type=float, default=None,
                         help="cell-mass floor (default 0.9x the fee's floor)")
        sub.add_argument("--eps0", type=float, default=None,
                         help="accepted-step mass floor (default eps/6)")
        sub.add_argument("--auto-regularize", action="store_true",
                         help="regularize the fee first when it fails the "
                              "solver assumption checks")
        sub.add_argument("--eta", type=float, default=None,
                         help="regularization width (default 0.05)")
    sub.add_argument("--threads", type=int, default=None,
                     help="cap BLAS thread pools (output is identical either way)")
    sub.add_argument("--out", default=".",
                     help="directory for artifacts (default: current directory)")


def _build_parser() -> _Parser:
    parser = _Parser(prog="sdot-fees",
                     description="Semi-discrete optimal transport with "
                                 "convex storage fees.")
    commands = parser.add_subparsers(dest="command", required=True)

    solve = commands.add_parser("solve", help="run the damped Newton solver")
    _add_common(solve, solver=True)
    solve.set_defaults(handler=_cmd_solve)

    reg = commands.add_parser("regularize",
                              help="write the solver-ready version of a fee")
    _add_common(reg)
    reg.add_argument("--eta", type=float, default=None,
                     help="regularization width (default 0.05)")
    reg.set_defaults(handler=_cmd_regularize)

    verify = commands.add_parser("verify", help="run the seeded property suites")
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--suite", action="append", choices=sorted(SUITES),
                        help="run one suite (repeatable; default: all)")
    verify.add_argument("--grid-step", type=float, default=None,
                        help="grid step for the oracle suite")
    _add_common(verify, fee=False, problem=False)
    verify.set_defaults(handler=_cmd_verify)

    oracle = commands.add_parser("oracle-compare",
                                 help="check the solver against brute force")
    _add_common(oracle, solver=True)
    oracle.add_argument("--grid-step", type=float, default=None,
                        help="simplex grid spacing (default 1e-3)")
    oracle.set_defaults(handler=_cmd_oracle_compare)

    stability = commands.add_parser("stability",
                                    help="run the fee-scaling stability ladder")
    _add_common(stability)
    stability.add_argument("--grid-step", type=float, default=None,
                           help="grid step for brute-force minimizers")
    stability.add_argument("--seed", type=int, default=0,
                           help="accepted for config compatibility")
    stability.set_defaults(handler=_cmd_stability)

    return parser


def main(argv=None) -> int:
    out_dir: Path | None = None
    try:
        args = _build_parser().parse_args(argv)
        _limit_threads(args.threads)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        return args.handler(args, out_dir)
    except ConfigError as exc:
        _diagnostic(out_dir, {
            "error": str(exc),
            "field": exc.field,
            "exit_code": EXIT_CONFIG,
        })
        return EXIT_CONFIG
    except (GeometryError, InfeasibleFeeError, OSError) as exc:
        _diagnostic(out_dir, {"error": str(exc), "exit_code": EXIT_CONFIG})
        return EXIT_CONFIG
    except SdotFeesError as exc:
        _diagnostic(out_dir, {"error": str(exc), "exit_code": EXIT_FAILED})
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
