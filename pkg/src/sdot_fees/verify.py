"""Seeded property suites behind the verify workflow.

Each suite replays a module's contract on freshly generated instances and
reports measured values next to the tolerances it checked them against.
The acceptance bench calls these same functions with its own parameters,
so the command line and the test suite cannot drift apart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .fees import (
    check_assumptions,
    conjugate_solve,
    fee_value,
    fstar_hessian,
)
from .geometry import cell_masses, cost_sup_norm, laguerre_jacobian, transport_cost
from .instances import (
    conjugate_pair,
    indicator_point_instance,
    ladder_instance,
    random_line_instance,
    shuffle_instance,
)
from .oracle import brute_force_minimize, scaling_ladder
from .regularize import regularize
from .solver import SolverConfig, damped_newton, parameter_shuffle, phi_gradient


@dataclass(frozen=True)
class CheckResult:
    """One verified property: what was measured against what tolerance."""

    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""

    def payload(self) -> dict:
        out = {
            "name": self.name,
            "passed": bool(self.passed),
            "measured": float(self.measured),
            "tolerance": float(self.tolerance),
        }
        if self.detail:
            out["detail"] = self.detail
        return out


def _check(name: str, measured: float, tolerance: float, detail: str = "") -> CheckResult:
    return CheckResult(name=name, passed=bool(measured <= tolerance),
                       measured=float(measured), tolerance=float(tolerance),
                       detail=detail)


# ---------------------------------------------------------------------------
# suites


def geometry_suite(seed: int = 0, instances: int = 20) -> list[CheckResult]:
    """Cell masses sum to one and the mass Jacobian matches finite differences."""
    rng = np.random.default_rng(seed)
    worst_sum = 0.0
    for i in range(instances):
        prob, _ = random_line_instance(seed * 1009 + i)
        psi = rng.normal(scale=0.3, size=prob.n_sites)
        worst_sum = max(worst_sum, abs(float(cell_masses(prob, psi).sum()) - 1.0))
    worst_jac = 0.0
    h = 1e-7
    for i in range(max(instances // 4, 3)):
        prob, _ = random_line_instance(seed * 2003 + i)
        n = prob.n_sites
        psi = rng.normal(scale=0.1, size=n)
        while float(cell_masses(prob, psi).min()) < 0.05:
            psi *= 0.5
        jac = laguerre_jacobian(prob, psi)
        fd = np.zeros((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            fd[:, j] = (cell_masses(prob, psi + e) - cell_masses(prob, psi - e)) / (2 * h)
        worst_jac = max(worst_jac, float(np.abs(jac - fd).max()))
    return [
        _check("mass_conservation", worst_sum, 1e-9),
        _check("mass_jacobian_fd", worst_jac, 1e-5),
    ]


def conjugate_suite(seed: int = 0, pairs: int = 100) -> list[CheckResult]:
    """Finite-difference battery for the conjugate value, gradient, Hessian,
    mean-zero row sums, and signed diagonal dominance."""
    worst_grad = 0.0
    worst_hess = 0.0
    worst_rowsum = 0.0
    worst_dominance = 0.0
    for i in range(pairs):
        fee, psi = conjugate_pair(seed * 10_007 + i)
        n = fee.n
        res = conjugate_solve(fee, psi)
        hess = fstar_hessian(fee, psi, res)
        h = 1e-6
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            fd = (conjugate_solve(fee, psi + e).fstar
                  - conjugate_solve(fee, psi - e).fstar) / (2 * h)
            worst_grad = max(worst_grad, abs(fd - res.w[j]))
        h2 = 1e-5
        fd_h = np.zeros((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = h2
            fd_h[:, j] = (conjugate_solve(fee, psi + e).w
                          - conjugate_solve(fee, psi - e).w) / (2 * h2)
        worst_hess = max(worst_hess, float(np.abs(hess - fd_h).max()))
        worst_rowsum = max(worst_rowsum, float(np.abs(hess @ np.ones(n)).max()))
        off = np.abs(hess - np.diag(np.diag(hess))).sum(axis=1)
        worst_dominance = max(worst_dominance, float(np.abs(np.diag(hess) - off).max()))
    return [
        _check("conjugate_gradient_fd", worst_grad, 1e-6, f"{pairs} pairs"),
        _check("conjugate_hessian_fd", worst_hess, 1e-5, f"{pairs} pairs"),
        _check("hessian_rows_mean_zero", worst_rowsum, 1e-10),
        _check("hessian_diagonal_dominance_tight", worst_dominance, 1e-9),
    ]


def shuffle_suite(seed: int = 0, instances: int = 100,
                  eps: float = 0.05 / 3.0) -> list[CheckResult]:
    """Starved-cell lifting: terminates, floors every cell, never grows the
    l1 gradient error."""
    worst_increase = -np.inf
    worst_floor = np.inf
    lifts = 0
    for i in range(instances):
        prob, fee, psi = shuffle_instance(seed * 30_011 + i)
        before, _ = phi_gradient(prob, fee, psi)
        out = parameter_shuffle(prob, fee, psi, eps)
        after, _ = phi_gradient(prob, fee, out)
        worst_increase = max(worst_increase,
                             float(np.abs(after).sum() - np.abs(before).sum()))
        worst_floor = min(worst_floor, float(cell_masses(prob, out).min()))
        if not np.array_equal(out, psi):
            lifts += 1
    checks = [
        _check("l1_error_never_increases", worst_increase, 1e-12,
               f"{instances} instances, {lifts} with lifts"),
        _check("lifted_masses_above_tolerance", eps - worst_floor, 0.0,
               f"min mass {worst_floor:.6f}"),
    ]
    if lifts == 0:
        checks.append(CheckResult("battery_exercised_lifts", False, 0.0, 1.0,
                                  "no instance triggered a lift"))
    return checks


def solver_suite(seed: int = 0, instances: int = 8) -> list[CheckResult]:
    """End-to-end solves: convergence, per-step damped contract, mass floor,
    and the dual-price spread bound on every iterate."""
    failures = 0
    contract_violations = 0
    worst_bound = -np.inf
    for i in range(instances):
        prob, fee = random_line_instance(seed * 40_009 + i)
        eps = 0.9 * check_assumptions(fee).eps_max
        config = SolverConfig(zeta=1e-10, eps=eps)
        psi, trace = damped_newton(prob, fee, np.zeros(prob.n_sites), config)
        if trace.status != "converged":
            failures += 1
            continue
        if trace.verify_contract(config.eps0):
            contract_violations += 1
        for rec in trace.records:
            worst_bound = max(worst_bound, rec.psi_bound_margin)
    if worst_bound == -np.inf:
        worst_bound = 0.0
    return [
        _check("all_instances_converged", float(failures), 0.0,
               f"{instances} instances"),
        _check("per_step_contract_clean", float(contract_violations), 0.0),
        _check("dual_price_spread_bound", worst_bound, 1e-9,
               "max over iterates of spread minus 2*cost_sup"),
    ]


def oracle_suite(seed: int = 0, instances: int = 6,
                 grid_step: float = 1e-3) -> list[CheckResult]:
    """Newton minimizers agree with the brute-force grid scan."""
    worst = 0.0
    for i in range(instances):
        prob, fee = random_line_instance(seed * 50_021 + i)
        eps = 0.9 * check_assumptions(fee).eps_max
        psi, trace = damped_newton(prob, fee, np.zeros(prob.n_sites),
                                   SolverConfig(zeta=1e-11, eps=eps))
        if trace.status != "converged":
            return [CheckResult("newton_vs_brute_force", False, np.inf,
                                2 * grid_step, f"instance {i} did not converge")]
        w_newton = conjugate_solve(fee, psi).w
        w_brute = brute_force_minimize(prob, fee, grid_step)
        worst = max(worst, float(np.abs(w_newton - w_brute).max()))
    return [
        _check("newton_vs_brute_force", worst, 2 * grid_step,
               f"{instances} instances at grid_step {grid_step:g}"),
    ]


def regularize_suite(seed: int = 0) -> list[CheckResult]:
    """The pipeline turns a pinned fee into a solver-ready one and the solve
    lands near the pinned split."""
    prob, fee = indicator_point_instance()
    eta = 0.05
    fee_eta, report = regularize(fee, eta, cost_sup_norm(prob))
    ready = check_assumptions(fee_eta)
    curv_gap = 0.0
    for part, target in zip(fee_eta.parts, report.strong_convexity):
        xs = np.linspace(part.a, part.b, 101)[1:-1]
        curv_gap = max(curv_gap, float((target - part.deriv2(xs)).max()))
    psi, trace = damped_newton(prob, fee_eta, np.zeros(3),
                               SolverConfig(zeta=1e-9, eps=report.eps_for_solver))
    w = conjugate_solve(fee_eta, psi).w
    drift = float(np.linalg.norm(w - np.array([0.3, 0.3, 0.4])))
    return [
        _check("pipeline_output_newton_ready", 0.0 if ready.newton_ready else 1.0, 0.0),
        _check("curvature_floor_met", curv_gap, 1e-9),
        _check("solve_after_regularize_converged",
               0.0 if trace.status == "converged" else 1.0, 0.0),
        _check("weights_near_pinned_split", drift, 0.2 * np.sqrt(eta),
               f"eta = {eta}"),
    ]


def stability_suite(seed: int = 0,
                    scales: tuple[float, ...] = (0.04, 0.01)) -> list[CheckResult]:
    """Fee-scaling ladder stays within the square-root consistency window."""
    prob, fee = ladder_instance()
    ladder = scaling_ladder(prob, fee, scales=scales)
    deviation = max(
        max(r / p, p / r) for r, p in zip(ladder.ratios, ladder.predicted_ratios)
    )
    return [
        _check("ladder_sqrt_consistency", deviation, 2.0 * 1.05,
               f"ratios {tuple(round(r, 4) for r in ladder.ratios)}"),
    ]


SUITES = {
    "geometry": geometry_suite,
    "conjugate": conjugate_suite,
    "shuffle": shuffle_suite,
    "solver": solver_suite,
    "oracle": oracle_suite,
    "regularize": regularize_suite,
    "stability": stability_suite,
}


def run_verify(seed: int = 0, suites=None, grid_step: float | None = None) -> dict:
    """Run the named suites (all by default) and assemble the verify payload."""
    names = list(SUITES) if not suites else list(suites)
    for name in names:
        if name not in SUITES:
            raise ConfigError(f"unknown suite {name!r}; choose from "
                              f"{', '.join(SUITES)}", field="suite")
    payload = {"seed": int(seed), "suites": {}, "passed": True}
    for name in names:
        kwargs = {}
        if name == "oracle" and grid_step is not None:
            kwargs["grid_step"] = grid_step
        checks = SUITES[name](seed=seed, **kwargs)
        ok = all(c.passed for c in checks)
        payload["suites"][name] = {
            "passed": ok,
            "checks": [c.payload() for c in checks],
        }
        payload["passed"] = payload["passed"] and ok
    return payload
