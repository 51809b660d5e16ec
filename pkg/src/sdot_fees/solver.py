"""Damped Newton maximization of the dual objective, with parameter shuffling.

The dual objective Phi(psi) = int min_i (|x - y_i|^2 + psi^i) dmu - F*(psi)
is concave; its gradient is the cell-mass vector minus the conjugate weights
and its Hessian DG - D2F* kills the constant direction. Each Newton step
first lifts starved cells back above a mass floor (the shuffle routine,
which never increases the l1 gradient error on compliant fees), then solves
for the least-norm ascent direction on the mean-zero subspace and backtracks
until the l1 error contracts by the damped factor.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NewtonError, ShuffleError
from .fees import SplittingFee, check_assumptions, conjugate_solve, fstar_hessian
from .geometry import (
    TransportProblem,
    cell_masses,
    cost_sup_norm,
    laguerre_jacobian,
    transport_cost,
)

__all__ = [
    "SolverConfig",
    "IterationRecord",
    "SolveTrace",
    "phi_gradient",
    "parameter_shuffle",
    "damped_newton",
    "estimate_kappa",
]

TRACE_COLUMNS = ("k", "err_l1", "err_l2", "ell", "min_mass", "shuffle_steps", "elapsed_ms")


@dataclass(frozen=True)
class SolverConfig:
    """Damped Newton tuning knobs.

    ``eps`` is the coordinate-wise floor the conjugate weights are assumed to
    respect; the shuffle before each Newton step runs with tolerance
    2*eps0. ``eps0`` defaults to eps/6 so the shuffle tolerance keeps the
    error-non-increase hypothesis (weights >= 3 * shuffle tolerance) implied
    by the eps assumption; pass eps0 = eps/4 explicitly for the looser
    historical pairing. ``strict_assumptions`` turns the fee hypothesis check
    from a trace note into a hard error.
    """

    zeta: float = 1e-8
    eps: float = 0.02
    eps0: float | None = None
    max_newton_iters: int = 200
    max_backtrack: int = 40
    shuffle_bisect_tol: float = 1e-12
    strict_assumptions: bool = False

    def __post_init__(self):
        if not (self.zeta > 0.0):
            raise ConfigError("zeta must be positive", field="zeta")
        if not (self.eps > 0.0):
            raise ConfigError("eps must be positive", field="eps")
        eps0 = self.eps / 6.0 if self.eps0 is None else float(self.eps0)
        if not (0.0 < eps0 < self.eps):
            raise ConfigError(f"eps0 = {eps0:.3g} must lie in (0, eps)", field="eps0")
        object.__setattr__(self, "eps0", eps0)
        if self.max_newton_iters < 1 or self.max_backtrack < 1:
            raise ConfigError("iteration caps must be at least 1")


@dataclass(frozen=True)
class IterationRecord:
    """One accepted Newton step.

    ``err_l1``/``err_l2`` are gradient norms at the (post-shuffle) iterate
    the step departs from; ``err_l1_accepted`` and ``min_mass`` are measured
    at the accepted iterate, so the damped contract
    err_l1_accepted <= (1 - 2^-(ell+1)) * err_l1 is checkable per row.
    ``psi_bound_margin`` is how far the iterate sits from violating the
    dual-price bound (nonpositive means safe).
    """

    k: int
    err_l1_pre_shuffle: float
    err_l1: float
    err_l2: float
    ell: int
    err_l1_accepted: float
    min_mass: float
    shuffle_steps: int
    psi_bound_margin: float
    elapsed_ms: float
    psi: np.ndarray


@dataclass(frozen=True)
class SolveTrace:
    records: tuple[IterationRecord, ...]
    status: str
    notes: tuple[str, ...] = ()

    def rows(self) -> list[dict]:
        """Per-iteration dicts in the CSV column order."""
        return [
            {
                "k": r.k,
                "err_l1": r.err_l1,
                "err_l2": r.err_l2,
                "ell": r.ell,
                "min_mass": r.min_mass,
                "shuffle_steps": r.shuffle_steps,
                "elapsed_ms": r.elapsed_ms,
            }
            for r in self.records
        ]

    def verify_contract(self, eps0: float) -> list[str]:
        """Violations of the per-step guarantees (empty list when clean)."""
        bad = []
        for r in self.records:
            factor = 1.0 - 2.0 ** (-(r.ell + 1))
            if r.err_l1_accepted > factor * r.err_l1 * (1.0 + 1e-12):
                bad.append(
                    f"k={r.k}: accepted error {r.err_l1_accepted:.3e} above "
                    f"{factor:.6f} * {r.err_l1:.3e}"
                )
            if r.min_mass < eps0 * (1.0 - 1e-12):
                bad.append(f"k={r.k}: min mass {r.min_mass:.3e} below floor {eps0:.3e}")
        return bad


def _lean_gradient(problem: TransportProblem, fee: SplittingFee, psi: np.ndarray):
    masses = cell_masses(problem, psi)
    res = conjugate_solve(fee, psi)
    return masses - res.w, masses, res


def phi_gradient(problem: TransportProblem, fee: SplittingFee, psi):
    """Gradient and value of the dual objective at psi.

    Returns:
        (grad, value): grad = G(psi) - conjugate weights (always mean-zero);
        value = transport cost + <psi, G> - F*(psi).
    """
    psi = np.asarray(psi, dtype=float)
    grad, masses, res = _lean_gradient(problem, fee, psi)
    value = transport_cost(problem, psi) + float(psi @ masses) - res.fstar
    return grad, value


# ---------------------------------------------------------------------------
# Algorithm 1: parameter shuffling


def _lift_coordinate(problem, psi, i, eps, lhat, bisect_tol):
    """Smallest useful r > 0 with cell i's mass in [2*eps, 3*eps] at psi - r e_i."""

    def mass(r):
        trial = psi.copy()
        trial[i] -= r
        return float(cell_masses(problem, trial)[i])

    r_prev, m_prev = 0.0, mass(0.0)
    r = eps / lhat
    for _ in range(200):
        m = mass(r)
        if r > r_prev and m > m_prev:
            lhat = max(lhat, (m - m_prev) / (r - r_prev))
        if m >= 2.0 * eps:
            break
        r_prev, m_prev = r, m
        r *= 2.0
    else:
        raise ShuffleError(f"cell {i} never reaches mass {2 * eps:.3g} (expansion cap)")
    if m <= 3.0 * eps:
        return r, lhat
    lo, hi = r_prev, r
    while hi - lo > bisect_tol:
        mid = 0.5 * (lo + hi)
        m = mass(mid)
        if m < 2.0 * eps:
            lo = mid
        elif m <= 3.0 * eps:
            return mid, lhat
        else:
            hi = mid
    raise ShuffleError(
        f"cell {i} jumps across the target band [{2 * eps:.3g}, {3 * eps:.3g}]; "
        "the density vanishes around the cell (mass plateau)"
    )


def _shuffle(problem, psi, eps, bisect_tol=1e-12):
    n = problem.n_sites
    if not (0.0 < eps < 1.0 / (3.0 * n)):
        raise ShuffleError(f"shuffle tolerance {eps:.3g} outside (0, 1/(3N)) for N = {n}")
    if problem.density.kind == "tabulated" and float(problem.density.values.min()) <= 0.0:
        raise ShuffleError(
            "the shuffle requires a strictly positive density; "
            "cell masses can plateau where the density vanishes"
        )
    psi = np.asarray(psi, dtype=float).copy()
    cnorm = cost_sup_norm(problem)
    lhat = max(1.0, float(n))
    steps = 0
    while True:
        g = cell_masses(problem, psi)
        if g.min() > eps:
            return psi, steps
        for i in range(n):
            if cell_masses(problem, psi)[i] > eps:
                continue
            cap = max(1000.0, (n - 1) * (4.0 * lhat * cnorm / eps + 1.0))
            if steps >= cap:
                raise ShuffleError(f"shuffle exceeded {cap:.0f} coordinate lifts")
            r, lhat = _lift_coordinate(problem, psi, i, eps, lhat, bisect_tol)
            psi[i] -= r
            steps += 1


def parameter_shuffle(problem: TransportProblem, fee: SplittingFee | None, psi,
                      eps_shuffle: float) -> np.ndarray:
    """Lower prices of starved cells until every cell mass exceeds eps_shuffle.

    Each lift lands the cell's mass in [2*eps_shuffle, 3*eps_shuffle] by
    geometric expansion plus bisection. On fees whose conjugate weights stay
    at or above 3*eps_shuffle this never increases the l1 gradient error.

    Raises:
        ShuffleError: tolerance outside (0, 1/(3N)), a cell whose mass
            plateaus below the target band, or the lift-count cap.
    """
    if fee is not None and fee.n != problem.n_sites:
        raise ConfigError(f"fee has {fee.n} parts for {problem.n_sites} sites")
    out, _ = _shuffle(problem, psi, eps_shuffle)
    return out


# ---------------------------------------------------------------------------
# Algorithm 2: damped Newton


def _psi_bound_margin(psi, masses, cnorm):
    carrying = masses > 0.0
    if not np.any(carrying):
        return -math.inf
    return float((psi[carrying].max() - psi.min()) - 2.0 * cnorm)


def _newton_direction(dg, hess_fstar, grad):
    """Least-norm d with (D2F* - DG) d = grad on the mean-zero subspace."""
    a = hess_fstar - dg
    n = a.shape[0]
    # the exact gradient is mean-zero (masses and conjugate weights both sum
    # to one); whatever mean survives is summation rounding, and the rank-one
    # regularizer below would pass it straight through to the residual
    grad = grad - grad.mean()
    sigma = max(float(np.trace(a)) / n, 1e-12)
    try:
        d = np.linalg.solve(a + sigma * np.ones((n, n)) / n, grad)
    except np.linalg.LinAlgError as exc:
        raise NewtonError(f"Hessian solve failed: {exc}") from exc
    residual = float(np.linalg.norm(a @ d - grad))
    # backward error: a relative-to-gradient test alone misfires near
    # convergence, where the gradient shrinks below what the matrix scale
    # lets the residual reach
    scale = float(np.linalg.norm(a, np.inf) * np.linalg.norm(d)
                  + np.linalg.norm(grad))
    if residual > 1e-7 * max(1e-12, scale):
        raise NewtonError(
            f"Hessian is singular on the mean-zero subspace (residual {residual:.3e})"
        )
    return d


def damped_newton(problem: TransportProblem, fee: SplittingFee, psi0,
                  config: SolverConfig | None = None):
    """Maximize the dual objective; returns (psi_star, trace).

    Each iteration shuffles starved cells above 2*eps0, solves the projected
    Newton system, and accepts the smallest ell <= max_backtrack whose damped
    step keeps every cell mass at or above eps0 while contracting the l1
    gradient error by (1 - 2^-(ell+1)). Stops when the Euclidean gradient
    norm drops below zeta.

    Raises:
        ConfigError: mismatched sizes, or 2*eps0 >= 1/(3N), or (with
            strict_assumptions) a fee that fails the hypothesis check.
        NewtonError: backtracking exhausted, iteration cap, or a singular
            projected Hessian; carries the failing iterate and partial trace.
    """
    config = config if config is not None else SolverConfig()
    n = problem.n_sites
    if fee.n != n:
        raise ConfigError(f"fee has {fee.n} parts for {n} sites")
    if 2.0 * config.eps0 >= 1.0 / (3.0 * n):
        raise ConfigError(
            f"2*eps0 = {2 * config.eps0:.3g} must stay below 1/(3N) = {1 / (3 * n):.3g}",
            field="eps0",
        )
    psi = np.asarray(psi0, dtype=float).copy()
    if psi.shape != (n,) or not np.all(np.isfinite(psi)):
        raise ConfigError(f"psi0 must be a finite vector of length {n}")

    notes = []
    report = check_assumptions(fee)
    if not report.newton_ready or fee.eps_floor < config.eps:
        msg = (
            f"fee hypothesis check: newton_ready={report.newton_ready}, "
            f"mass floor {fee.eps_floor:.3g} vs eps {config.eps:.3g}; "
            "convergence guarantees may not apply"
        )
        if config.strict_assumptions:
            raise ConfigError(msg)
        notes.append(msg)

    cnorm = cost_sup_norm(problem)
    t0 = time.perf_counter()
    records: list[IterationRecord] = []

    def fail(message, at_psi):
        trace = SolveTrace(records=tuple(records), status="failed", notes=tuple(notes))
        raise NewtonError(message, psi=at_psi, trace=trace)

    grad, masses, res = _lean_gradient(problem, fee, psi)
    for k in range(config.max_newton_iters + 1):
        if float(np.linalg.norm(grad)) < config.zeta:
            return psi, SolveTrace(records=tuple(records), status="converged",
                                   notes=tuple(notes))
        if k == config.max_newton_iters:
            fail(f"no convergence in {config.max_newton_iters} iterations", psi)

        err1_pre = float(np.abs(grad).sum())
        psi_s, shuffle_steps = _shuffle(problem, psi, 2.0 * config.eps0,
                                        config.shuffle_bisect_tol)
        if shuffle_steps:
            grad, masses, res = _lean_gradient(problem, fee, psi_s)
        err1 = float(np.abs(grad).sum())
        err2 = float(np.linalg.norm(grad))

        dg = laguerre_jacobian(problem, psi_s)
        hess = fstar_hessian(fee, psi_s, result=res, on_clamp="zero")
        d = _newton_direction(dg, hess, grad)

        accepted = None
        for ell in range(config.max_backtrack + 1):
            cand = psi_s + 2.0 ** (-ell) * d
            masses_c = cell_masses(problem, cand)
            if masses_c.min() < config.eps0:
                continue
            grad_c, _, res_c = _lean_gradient(problem, fee, cand)
            err1_c = float(np.abs(grad_c).sum())
            if err1_c <= (1.0 - 2.0 ** (-(ell + 1))) * err1:
                accepted = (ell, cand, masses_c, grad_c, res_c, err1_c)
                break
        if accepted is None:
            fail(
                f"backtracking exhausted at iteration {k} "
                f"(err_l1 {err1:.3e}, min mass {masses.min():.3e})",
                psi_s,
            )
        ell, cand, masses_c, grad_c, res_c, err1_c = accepted
        records.append(IterationRecord(
            k=k,
            err_l1_pre_shuffle=err1_pre,
            err_l1=err1,
            err_l2=err2,
            ell=ell,
            err_l1_accepted=err1_c,
            min_mass=float(masses_c.min()),
            shuffle_steps=shuffle_steps,
            psi_bound_margin=_psi_bound_margin(cand, masses_c, cnorm),
            elapsed_ms=(time.perf_counter() - t0) * 1e3,
            psi=cand.copy(),
        ))
        psi, grad, masses, res = cand, grad_c, masses_c, res_c
    raise AssertionError("unreachable")


def estimate_kappa(problem: TransportProblem, fee: SplittingFee, psi) -> float:
    """Concavity modulus: smallest eigenvalue of -(DG - D2F*) on mean-zero vectors."""
    n = problem.n_sites
    if n < 2:
        raise ConfigError("kappa needs at least two sites")
    psi = np.asarray(psi, dtype=float)
    a = fstar_hessian(fee, psi, on_clamp="zero") - laguerre_jacobian(problem, psi)
    p = np.eye(n) - np.ones((n, n)) / n
    return float(np.linalg.eigvalsh(p @ a @ p)[1])
