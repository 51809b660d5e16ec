"""Ground-truth machinery the solver is checked against.

Everything here is deliberately independent of the Newton path: Kantorovich
costs come from the exact 1-D monotone rearrangement (or, in 2-D, from a
pinned-weight solve whose Hessian contribution is zero), brute-force
minimization scans the whole simplex grid, and the stability helpers measure
how far minimizers move under fee perturbations and fit the constants the
theory leaves unspecified.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, InfeasibleFeeError
from .fees import (
    ScalarConvexFn,
    SplittingFee,
    check_assumptions,
    conjugate_solve,
    indicator_fee,
)
from .geometry import TransportProblem, cost_sup_norm, transport_cost
from .solver import SolverConfig, damped_newton

_BATCH = 1 << 20


@dataclass(frozen=True)
class StabilityReport:
    """Measured minimizer drift for one fee pair, with a fitted constant.

    ``kind`` is "value" when the two fees share domains (perturbation is the
    sampled sup-norm gap) and "domain" when they do not (perturbation is the
    sampled Hausdorff distance between the feasible sets).  The theoretical
    bounds involve a constant from the literature that is not computable
    here, so ``fitted_constant`` reports the value that would make the bound
    tight; batches of reports reveal whether it stays bounded.
    """

    description: str
    kind: str
    perturbation: float
    distance: float
    bound_form: str
    fitted_constant: float
    modulus_estimate: float | None
    methods: tuple[str, str]
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class LadderReport:
    """Square-root scaling check across a ladder of perturbation sizes."""

    scales: tuple[float, ...]
    distances: tuple[float, ...]
    ratios: tuple[float, ...]
    predicted_ratios: tuple[float, ...]
    sqrt_consistent: bool
    reports: tuple[StabilityReport, ...]


# ---------------------------------------------------------------------------
# Kantorovich cost


def _check_weights(problem: TransportProblem, w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (problem.n_sites,):
        raise ConfigError(f"expected {problem.n_sites} weights, got shape {w.shape}",
                          field="w")
    if np.any(w < -1e-12):
        raise ConfigError("weights must be nonnegative", field="w")
    if abs(float(w.sum()) - 1.0) > 1e-9:
        raise ConfigError(f"weights must sum to 1, got {w.sum():.12f}", field="w")
    return np.maximum(w, 0.0)


def _kantorovich_1d_batch(problem: TransportProblem, weights: np.ndarray) -> np.ndarray:
    """Exact rearrangement cost for a (P, N) batch of weight vectors."""
    line = problem._line
    lo, hi = problem.domain.bounds[0]
    ys = problem.sites.points[:, 0]
    order = np.argsort(ys)
    w = weights[:, order]
    cum = np.clip(np.cumsum(w[:, :-1], axis=1), 0.0, 1.0)
    inner = line.quantile(cum)
    p = weights.shape[0]
    edges = np.concatenate(
        [np.full((p, 1), lo), inner, np.full((p, 1), hi)], axis=1
    )
    seg = line.segment_cost(edges[:, :-1], edges[:, 1:], ys[order][None, :])
    return seg.sum(axis=1)


def kantorovich_cost(problem: TransportProblem, w, *, zeta: float = 1e-10) -> float:
    """Optimal transport cost C(w) from the density to sites with masses w.

    The 1-D route is exact: the optimal quadratic-cost map is monotone, so
    cell boundaries sit at cumulative-mass quantiles and the cost is a sum
    of closed-form segment integrals.  The 2-D route pins the weights with a
    point-indicator fee (whose conjugate gradient is constantly w and whose
    Hessian contribution vanishes) and runs the Newton solver, so it needs
    every weight strictly positive.

    Args:
        problem: transport instance.
        w: weight vector on the simplex, one entry per site.
        zeta: gradient tolerance for the 2-D solve.

    Raises:
        ConfigError: malformed weights, or a 2-D call with a zero weight.
    """
    w = _check_weights(problem, w)
    if problem.domain.dim == 1:
        return float(_kantorovich_1d_batch(problem, w[None, :])[0])
    if float(w.min()) <= 0.0:
        raise ConfigError("the 2-D route needs strictly positive weights", field="w")
    fee = SplittingFee(tuple(indicator_fee((wi, wi)) for wi in w))
    config = SolverConfig(zeta=zeta, eps=0.9 * float(w.min()))
    psi, _ = damped_newton(problem, fee, np.zeros(problem.n_sites), config)
    return transport_cost(problem, psi)


# ---------------------------------------------------------------------------
# brute-force primal minimization


def _fee_table(part, steps: int, grid_step: float, slack: float) -> np.ndarray:
    """Part values tabulated on the grid k/steps, +inf outside the slackened box."""
    w = np.arange(steps + 1) * grid_step
    inside = (w >= part.a - slack) & (w <= part.b + slack)
    tab = np.full(steps + 1, np.inf)
    if inside.any():
        clipped = np.clip(w[inside], part.a, part.b)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            vals = np.asarray(part.value(clipped), dtype=float)
        tab[inside] = np.where(np.isnan(vals), np.inf, vals)
    return tab


def _cost_tables_1d(problem: TransportProblem, steps: int, grid_step: float):
    """Telescoped rearrangement cost: C(w) = const + sum_j T_j[cum_j].

    With sites sorted by position and t_j the quantile of the j-th partial
    sum, the cost sum telescopes into per-boundary terms
    S_j(t_j) - S_{j+1}(t_j), each a function of one cumulative index, so a
    grid scan only needs integer gathers.
    """
    line = problem._line
    lo, hi = problem.domain.bounds[0]
    ys = problem.sites.points[:, 0]
    order = np.argsort(ys)
    ys_sorted = ys[order]
    qs = line.quantile(np.arange(steps + 1) * grid_step)
    const = float(line.segment_cost(lo, hi, ys_sorted[-1]))
    tables = [
        np.asarray(line.segment_cost(lo, qs, ys_sorted[j])
                   - line.segment_cost(lo, qs, ys_sorted[j + 1]), dtype=float)
        for j in range(len(ys) - 1)
    ]
    return order, const, tables


def _grid_batches(fee: SplittingFee, steps: int, grid_step: float, slack: float):
    """Yield (P, N) integer simplex-grid batches in lexicographic order."""
    n = fee.n
    lo = np.array([max(0, int(np.ceil((p.a - slack) / grid_step))) for p in fee.parts])
    hi = np.array([min(steps, int(np.floor((p.b + slack) / grid_step))) for p in fee.parts])
    if np.any(lo > hi):
        return
    if n == 1:
        if lo[0] <= steps <= hi[0]:
            yield np.array([[steps]])
        return
    if n == 2:
        k1 = np.arange(lo[0], hi[0] + 1)
        k2 = steps - k1
        good = (k2 >= lo[1]) & (k2 <= hi[1])
        if good.any():
            yield np.column_stack([k1[good], k2[good]])
        return
    if n == 3:
        chunk = max(1, _BATCH // max(hi[1] - lo[1] + 1, 1))
        k2 = np.arange(lo[1], hi[1] + 1)
        for start in range(lo[0], hi[0] + 1, chunk):
            k1 = np.arange(start, min(start + chunk, hi[0] + 1))
            g1, g2 = np.meshgrid(k1, k2, indexing="ij")
            g3 = steps - g1 - g2
            good = (g3 >= lo[2]) & (g3 <= hi[2])
            if good.any():
                yield np.stack([g1[good], g2[good], g3[good]], axis=1)
        return
    # n == 4: scalar outer loop, vectorized inner pair
    k3 = np.arange(lo[2], hi[2] + 1)
    for k1 in range(lo[0], hi[0] + 1):
        for k2 in range(lo[1], hi[1] + 1):
            k4 = steps - k1 - k2 - k3
            good = (k4 >= lo[3]) & (k4 <= hi[3])
            if good.any():
                count = int(good.sum())
                yield np.column_stack([
                    np.full(count, k1), np.full(count, k2), k3[good], k4[good],
                ])


def brute_force_minimize(problem: TransportProblem, fee: SplittingFee,
                         grid_step: float) -> np.ndarray:
    """Argmin of C(w) + F(w) over the simplex grid with spacing grid_step.

    Ties break to the lexicographically smallest weight vector.  Points
    within half a grid step of a part's domain are admitted (with the value
    taken at the clamped point), so pinned fees whose target sits between
    grid nodes still resolve to the nearest node.  The scan is exhaustive,
    so the cost grows like (1/grid_step)^(N-1); with the 2-D cost oracle it
    additionally runs one pinned solve per grid point and excludes rows with
    zero weights, so coarse grids are advised there.

    Raises:
        ConfigError: more than four parts, a part-count mismatch, or a grid
            step that does not evenly divide the simplex.
        InfeasibleFeeError: no grid point is feasible for the fee.
    """
    if fee.n != problem.n_sites:
        raise ConfigError(f"fee has {fee.n} parts for {problem.n_sites} sites",
                          field="fee")
    if fee.n > 4:
        raise ConfigError("brute force is combinatorial; at most 4 parts", field="fee")
    if not (0.0 < grid_step <= 1.0):
        raise ConfigError("grid_step must lie in (0, 1]", field="grid_step")
    steps = int(round(1.0 / grid_step))
    if abs(steps * grid_step - 1.0) > 1e-9:
        raise ConfigError("grid_step must divide 1 evenly", field="grid_step")
    slack = 0.5 * grid_step + 1e-12

    fee_tabs = [_fee_table(p, steps, grid_step, slack) for p in fee.parts]
    if problem.domain.dim == 1:
        order, const, cost_tabs = _cost_tables_1d(problem, steps, grid_step)
    best_val = np.inf
    best_k: np.ndarray | None = None
    for kmat in _grid_batches(fee, steps, grid_step, slack):
        vals = np.zeros(kmat.shape[0])
        for i, tab in enumerate(fee_tabs):
            vals += tab[kmat[:, i]]
        usable = np.isfinite(vals)
        if not usable.any():
            continue
        if problem.domain.dim == 1:
            cum = np.cumsum(kmat[usable][:, order][:, :-1], axis=1)
            add = np.full(cum.shape[0], const)
            for j, tab in enumerate(cost_tabs):
                add += tab[cum[:, j]]
            vals[usable] += add
        else:
            for r in np.flatnonzero(usable):
                if kmat[r].min() <= 0:
                    vals[r] = np.inf
                else:
                    vals[r] += kantorovich_cost(problem, kmat[r] * grid_step)
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val = float(vals[k])
            best_k = kmat[k].copy()
    if best_k is None:
        raise InfeasibleFeeError("no simplex grid point is feasible for this fee")
    return best_k * grid_step


# ---------------------------------------------------------------------------
# stability experiments


def _feasible_samples(fee: SplittingFee, step: float) -> np.ndarray:
    """Sample the box-intersected simplex slice on a coordinate grid.

    Always includes one exact feasible point (greedy water-fill above the
    lower bounds) so razor-thin sets such as a pinned split never sample
    empty.
    """
    lows = fee.lower_bounds
    highs = fee.upper_bounds
    n = fee.n
    fill = lows.copy()
    rest = 1.0 - fill.sum()
    for i in range(n):
        add = min(highs[i] - fill[i], rest)
        fill[i] += add
        rest -= add
    pts = [fill]
    if n >= 2:
        axes = [np.arange(lows[i], highs[i] + 0.5 * step, step) for i in range(n - 1)]
        grids = np.meshgrid(*axes, indexing="ij") if axes else []
        first = np.stack([g.ravel() for g in grids], axis=1) if axes else np.zeros((1, 0))
        last = 1.0 - first.sum(axis=1)
        good = (last >= lows[-1] - 1e-9) & (last <= highs[-1] + 1e-9)
        if good.any():
            pts.append(np.column_stack([first[good], last[good]]))
    return np.vstack(pts)


def _hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    d_ab = cKDTree(b).query(a)[0].max()
    d_ba = cKDTree(a).query(b)[0].max()
    return float(max(d_ab, d_ba))


def _modulus_estimate(fee: SplittingFee, delta: float, samples: int = 2048) -> float:
    """Sampled modulus of continuity of the fee sum at scale delta."""
    total = 0.0
    for part in fee.parts:
        if part.degenerate:
            continue
        pad = 1e-9 * (part.b - part.a)
        xs = np.linspace(part.a + pad, part.b - pad, samples)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            vals = np.asarray(part.value(xs), dtype=float)
        span = max(1, int(np.ceil(delta / (xs[1] - xs[0]))))
        diffs = np.abs(vals[span:] - vals[:-span]) if span < samples else np.array([np.ptp(vals)])
        diffs = diffs[np.isfinite(diffs)]
        if diffs.size:
            total += float(np.max(diffs))
    return total


def _minimize(problem: TransportProblem, fee: SplittingFee, grid_step: float,
              zeta: float) -> tuple[np.ndarray, str]:
    report = check_assumptions(fee)
    if report.newton_ready:
        config = SolverConfig(zeta=zeta, eps=0.9 * report.eps_max)
        psi, _ = damped_newton(problem, fee, np.zeros(problem.n_sites), config)
        return conjugate_solve(fee, psi).w, "newton"
    return brute_force_minimize(problem, fee, grid_step), "brute-force"


def stability_experiment(problem: TransportProblem, fee1: SplittingFee,
                         fee2: SplittingFee, *, grid_step: float = 1e-3,
                         hausdorff_step: float = 0.01,
                         zeta: float = 1e-9) -> StabilityReport:
    """Measure how far the primal minimizer moves between two fees.

    Fees sharing domains are compared through the sampled sup-norm gap and
    the square-root value-perturbation bound; fees with different domains
    are compared through the sampled Hausdorff distance of their feasible
    sets, with a sampled modulus of continuity supplied for context.  Each
    minimizer comes from the Newton solver when the fee passes the readiness
    check and from the brute-force scan otherwise.
    """
    if fee1.n != fee2.n:
        raise ConfigError("fee pair must have matching part counts", field="fee2")
    n = fee1.n
    w1, m1 = _minimize(problem, fee1, grid_step, zeta)
    w2, m2 = _minimize(problem, fee2, grid_step, zeta)
    dist = float(np.linalg.norm(w1 - w2))
    same_domains = all(
        abs(p.a - q.a) < 1e-12 and abs(p.b - q.b) < 1e-12
        for p, q in zip(fee1.parts, fee2.parts)
    )
    kinds1 = "+".join(p.kind for p in fee1.parts)
    kinds2 = "+".join(p.kind for p in fee2.parts)
    if same_domains:
        pts = _feasible_samples(fee1, hausdorff_step)
        gap = np.zeros(pts.shape[0])
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            for i, (p, q) in enumerate(zip(fee1.parts, fee2.parts)):
                gap += np.asarray(p.value(pts[:, i]), dtype=float)
                gap -= np.asarray(q.value(pts[:, i]), dtype=float)
        gap = gap[np.isfinite(gap)]
        pert = float(np.max(np.abs(gap))) if gap.size else 0.0
        fitted = dist ** 2 / (16.0 * n * pert) if pert > 0 else 0.0
        return StabilityReport(
            description=f"{kinds1} vs {kinds2} (N={n})",
            kind="value",
            perturbation=pert,
            distance=dist,
            bound_form="dist <= 4*sqrt(C*N*sup|F1-F2|)",
            fitted_constant=fitted,
            modulus_estimate=None,
            methods=(m1, m2),
        )
    set1 = _feasible_samples(fee1, hausdorff_step)
    set2 = _feasible_samples(fee2, hausdorff_step)
    d_h = _hausdorff(set1, set2)
    cnorm = cost_sup_norm(problem)
    omega = _modulus_estimate(fee2, 4.0 * n * d_h)
    denom = 8.0 * n * (2.0 * cnorm * np.sqrt(n) * d_h + omega)
    fitted = dist ** 2 / denom if denom > 0 else 0.0
    return StabilityReport(
        description=f"{kinds1} vs {kinds2} (N={n})",
        kind="domain",
        perturbation=d_h,
        distance=dist,
        bound_form="dist^2 <= 8*C*N*(2*cost_sup*sqrt(N)*dH + omega(4*N*dH))",
        fitted_constant=fitted,
        modulus_estimate=omega,
        methods=(m1, m2),
    )


def _scale_part(part: ScalarConvexFn, factor: float) -> ScalarConvexFn:
    value, deriv, deriv2, inv = part.value, part.deriv, part.deriv2, part.inv_deriv
    return ScalarConvexFn(
        kind=f"scaled:{part.kind}",
        a=part.a,
        b=part.b,
        value=lambda x: factor * np.asarray(value(x), dtype=float),
        deriv=None if deriv is None else (lambda x: factor * np.asarray(deriv(x), dtype=float)),
        deriv2=None if deriv2 is None else (lambda x: factor * np.asarray(deriv2(x), dtype=float)),
        inv_deriv=None if inv is None else (lambda s: inv(np.asarray(s, dtype=float) / factor)),
        params={"factor": float(factor), "base_kind": part.kind},
    )


def scaling_ladder(problem: TransportProblem, fee: SplittingFee,
                   scales: tuple[float, ...] = (0.04, 0.01, 0.0025), *,
                   grid_step: float = 1e-3, zeta: float = 1e-10,
                   headroom: float = 1.05) -> LadderReport:
    """Run fee vs (1+s)*fee for each s and check square-root consistency.

    The value-perturbation bound predicts minimizer drift of order sqrt(s),
    so the drift ratio between consecutive rungs should track
    sqrt(s_k / s_{k+1}).  A rung pair is flagged when its measured ratio
    falls outside a factor of two of that prediction; ``headroom`` loosens
    only the upper edge, where an exactly-linear drift response sits when
    the rungs are spaced by the squared factor.
    """
    if len(scales) < 2 or any(s <= 0 for s in scales):
        raise ConfigError("need at least two positive scales", field="scales")
    reports = []
    for s in scales:
        scaled = SplittingFee(tuple(_scale_part(p, 1.0 + s) for p in fee.parts))
        reports.append(stability_experiment(problem, fee, scaled,
                                            grid_step=grid_step, zeta=zeta))
    dists = [r.distance for r in reports]
    ratios = []
    predicted = []
    ok = True
    for (s_big, d_big), (s_small, d_small) in zip(zip(scales, dists),
                                                  zip(scales[1:], dists[1:])):
        pred = float(np.sqrt(s_big / s_small))
        ratio = d_big / d_small if d_small > 0 else np.inf
        ratios.append(float(ratio))
        predicted.append(pred)
        if not (pred / 2.0 <= ratio <= pred * 2.0 * headroom):
            ok = False
    return LadderReport(
        scales=tuple(float(s) for s in scales),
        distances=tuple(float(d) for d in dists),
        ratios=tuple(ratios),
        predicted_ratios=tuple(predicted),
        sqrt_consistent=ok,
        reports=tuple(reports),
    )
