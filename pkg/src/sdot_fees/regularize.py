"""Regularization pipeline that turns arbitrary splitting fees into solver-ready ones.

Raw fees are often useless to a Newton solver: indicator parts pin weights,
piecewise-linear parts have no curvature, barriers may blow up inside the
region the solve actually visits.  The pipeline repairs all of that with five
domain/function surgeries applied in a fixed order (stage 1 is the input):

  2. truncate each part to a sublevel interval that provably contains every
     optimizer of the transport problem, so later stages only see finite values;
  3. widen singleton domains to ``[y - eta, y + eta]`` clipped to ``[0, 1]``;
  4. floor the domains away from 0 so that ``min_i c_i > 0`` and
     ``sum c_i < 1 < sum d_i`` hold strictly (with a pinned rebuild when the
     input admits exactly one feasible split);
  5. smooth parts that are not already C^2 by mollifying a piecewise-linear
     resample of the part with a quadratic B-spline kernel;
  6. subtract ``eta * sqrt((d - x)(x - c))``, which makes every part strongly
     convex and essentially smooth without moving values by more than
     ``eta * (d - c) / 2``.

``regularize`` runs the whole pipeline and returns the new fee plus a report
of every intermediate domain; ``smooth_scalar`` and ``convexify_scalar``
expose stages 5 and 6 for single parts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial
from scipy.optimize import minimize_scalar

from .errors import ConfigError, InfeasibleFeeError
from .fees import (
    ScalarConvexFn,
    SplittingFee,
    conjugate_solve,
    restrict_part,
    tabulated_fee,
)

_SMOOTH_KNOTS = 4096
# Kinds that are already C^2 on the interior of their domain; stage 5 skips them.
_SMOOTH_SKIP = frozenset({
    "quadratic",
    "entropy",
    "log-barrier",
    "tabulated-smoothed",
    "convexified",
})

# ---------------------------------------------------------------------------
# quadratic B-spline kernel and its first two antiderivatives

_KERNEL_BREAKS = (-1.5, -0.5, 0.5, 1.5)


def _integrate_pieces(pieces, start: float):
    """Antiderivatives of a piecewise polynomial, chained to be continuous."""
    out = []
    acc = float(start)
    for poly, lo, hi in zip(pieces, _KERNEL_BREAKS[:-1], _KERNEL_BREAKS[1:]):
        q = poly.integ()
        q = q + (acc - q(lo))
        out.append(q)
        acc = float(q(hi))
    return out


_B2_PIECES = [
    Polynomial([1.125, 1.5, 0.5]),   # (t + 1.5)^2 / 2 on [-1.5, -0.5]
    Polynomial([0.75, 0.0, -1.0]),   # 3/4 - t^2     on [-0.5,  0.5]
    Polynomial([1.125, -1.5, 0.5]),  # (1.5 - t)^2 / 2 on [0.5, 1.5]
]
_C2_PIECES = _integrate_pieces(_B2_PIECES, 0.0)
_CC2_PIECES = _integrate_pieces(_C2_PIECES, 0.0)


def _eval_spline(t, pieces, tail_left, tail_right):
    t = np.asarray(t, dtype=float)
    out = np.where(t <= _KERNEL_BREAKS[0], tail_left(t), tail_right(t))
    for poly, lo, hi in zip(pieces, _KERNEL_BREAKS[:-1], _KERNEL_BREAKS[1:]):
        out = np.where((t > lo) & (t <= hi), poly(t), out)
    return out


def _kernel_b2(t):
    return _eval_spline(t, _B2_PIECES, lambda t: 0.0 * t, lambda t: 0.0 * t)


def _kernel_c2(t):
    return _eval_spline(t, _C2_PIECES, lambda t: 0.0 * t, lambda t: 1.0 + 0.0 * t)


def _kernel_cc2(t):
    return _eval_spline(t, _CC2_PIECES, lambda t: 0.0 * t, lambda t: t)


# sup_t |CC2(t) - max(t, 0)|, attained at t = 0; converts a kernel width into
# a sup-norm smoothing error bound of width * gain * (total derivative jump).
_SMOOTH_GAIN = float(_kernel_cc2(0.0))


def _jump_sum(x, kernel, knots, jumps, width):
    """sum_k jumps[k] * kernel((x - knots[k]) / width), chunked over x."""
    x = np.asarray(x, dtype=float)
    flat = np.atleast_1d(x).ravel()
    out = np.empty(flat.size)
    step = max(1, int(4e6) // max(knots.size, 1))
    for s in range(0, flat.size, step):
        t = (flat[s:s + step, None] - knots[None, :]) / width
        out[s:s + step] = kernel(t) @ jumps
    return out.reshape(np.shape(x))


def _invert_monotone(deriv_fn, lo: float, hi: float):
    """Numerical inverse of a nondecreasing derivative on [lo, hi]."""

    def inv(s):
        s = np.asarray(s, dtype=float)
        shape = s.shape
        s = np.atleast_1d(s)
        a = np.full(s.shape, lo)
        b = np.full(s.shape, hi)
        for _ in range(64):
            mid = 0.5 * (a + b)
            below = np.asarray(deriv_fn(mid)) < s
            a = np.where(below, mid, a)
            b = np.where(below, b, mid)
        return (0.5 * (a + b)).reshape(shape)

    return inv


# ---------------------------------------------------------------------------
# report type


@dataclass(frozen=True)
class RegularizationReport:
    """Record of what each pipeline stage did to each part's domain.

    ``stage_domains`` maps stage number (1 = input, 2..6 = the transforms) to
    the per-part ``(c_i, d_i)`` intervals after that stage.  ``stage_tags``
    holds, per part, one ``"<stage>:<action>"`` string per stage so a report
    reader can tell which surgeries actually fired.  ``eps_for_solver`` is
    ``min_i c_i`` of the final fee, the natural mass floor for a solve.
    """

    eta: float
    stage_domains: dict[int, tuple[tuple[float, float], ...]]
    stage_tags: tuple[tuple[str, ...], ...]
    strong_convexity: tuple[float, ...]
    eps_for_solver: float
    notes: tuple[str, ...] = field(default=())


# ---------------------------------------------------------------------------
# stage 5: smoothing


def smooth_scalar(f: ScalarConvexFn, eta: float) -> ScalarConvexFn:
    """Return a C^2 convex part within sup-distance ``eta`` of ``f``.

    The part is resampled on a 4096-knot grid, the piecewise-linear
    interpolant's derivative (a nondecreasing step function) is convolved
    with a nonnegative quadratic B-spline kernel, and the result is
    integrated back, anchored so the left endpoint value is preserved
    exactly.  The kernel width is chosen so the mollification moves values
    by at most ``eta / 2``; convolving a nondecreasing derivative with a
    nonnegative kernel keeps it nondecreasing, so convexity is preserved.
    Affine parts come back unchanged.

    Args:
        f: part with finite values on its domain ``[a, b]``, ``a < b``.
        eta: positive sup-norm budget for the perturbation.

    Returns:
        ``f`` itself when it is already affine (indicator intervals
        included), otherwise a ``"tabulated-smoothed"`` part on the same
        domain.

    Raises:
        InfeasibleFeeError: degenerate domain, non-finite values, or a
            resample that is not convex.
        ConfigError: non-positive ``eta``.
    """
    if not (eta > 0.0):
        raise ConfigError("eta must be positive", field="eta")
    c, d = f.a, f.b
    if f.degenerate:
        raise InfeasibleFeeError("cannot smooth a part with a single-point domain")
    xs = np.linspace(c, d, _SMOOTH_KNOTS)
    vals = np.asarray(f.value(xs), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise InfeasibleFeeError(
            "part takes non-finite values on its domain; truncate it first"
        )
    h = xs[1] - xs[0]
    slopes = np.diff(vals) / h
    raw = np.diff(slopes)
    scale = 1.0 + float(np.abs(slopes).max())
    if raw.size and float(raw.min()) < -1e-8 * scale:
        raise InfeasibleFeeError("part resample is not convex")
    jumps = np.maximum(raw, 0.0)
    keep = jumps > 1e-11 * scale
    if not keep.any():
        if f.deriv is not None:
            return f
        # value-only affine part: rebuild so downstream stages get a derivative
        return tabulated_fee([c, d], [vals[0], vals[0] + slopes[0] * (d - c)])
    knots = xs[1:-1][keep]
    jumps = jumps[keep]
    width = 0.5 * eta / (_SMOOTH_GAIN * float(jumps.sum()))
    return _build_smoothed(c, d, float(vals[0]), float(slopes[0]), width,
                           knots, jumps, source_kind=f.kind)


def _build_smoothed(c, d, anchor, slope_left, width, knots, jumps, source_kind):
    knots = np.asarray(knots, dtype=float)
    jumps = np.asarray(jumps, dtype=float)
    offset = float(np.dot(_kernel_cc2((c - knots) / width), jumps))

    def value(x):
        x = np.asarray(x, dtype=float)
        tail = _jump_sum(x, _kernel_cc2, knots, jumps, width)
        return anchor + slope_left * (x - c) + width * (tail - offset)

    def deriv(x):
        return slope_left + _jump_sum(x, _kernel_c2, knots, jumps, width)

    def deriv2(x):
        return _jump_sum(x, _kernel_b2, knots, jumps, width) / width

    return ScalarConvexFn(
        kind="tabulated-smoothed",
        a=c,
        b=d,
        value=value,
        deriv=deriv,
        deriv2=deriv2,
        inv_deriv=_invert_monotone(deriv, c, d),
        params={
            "anchor_value": anchor,
            "slope_left": slope_left,
            "width": width,
            "jump_knots": knots.tolist(),
            "jumps": jumps.tolist(),
            "source_kind": source_kind,
        },
    )


def _smoothed_from_params(domain, params) -> ScalarConvexFn:
    """Rebuild a "tabulated-smoothed" part from its serialized params."""
    c, d = float(domain[0]), float(domain[1])
    return _build_smoothed(
        c, d,
        float(params["anchor_value"]),
        float(params["slope_left"]),
        float(params["width"]),
        params["jump_knots"],
        params["jumps"],
        source_kind=params.get("source_kind", "tabulated"),
    )


# ---------------------------------------------------------------------------
# stage 6: convexification


def convexify_scalar(f: ScalarConvexFn, eta: float) -> ScalarConvexFn:
    """Subtract ``eta * sqrt((d - x)(x - c))`` from a part on ``[c, d]``.

    The perturbation vanishes at both endpoints, moves values by at most
    ``eta * (d - c) / 2``, adds curvature of at least ``2 * eta / (d - c)``
    everywhere, and sends the derivative to -inf/+inf at the endpoints, so
    conjugate weights never sit on the domain boundary.

    Args:
        f: part with ``deriv`` and ``deriv2`` on a nondegenerate ``[c, d]``.
        eta: positive perturbation size.

    Raises:
        InfeasibleFeeError: degenerate domain or missing derivatives.
        ConfigError: non-positive ``eta``.
    """
    if not (eta > 0.0):
        raise ConfigError("eta must be positive", field="eta")
    if f.degenerate:
        raise InfeasibleFeeError("cannot convexify a part with a single-point domain")
    if f.deriv is None or f.deriv2 is None:
        raise InfeasibleFeeError("part needs derivatives; smooth it first")
    c, d = f.a, f.b
    mid = 0.5 * (c + d)
    half_sq = (0.5 * (d - c)) ** 2
    base_value, base_deriv, base_deriv2 = f.value, f.deriv, f.deriv2

    def root(x):
        return np.sqrt(np.maximum((d - x) * (x - c), 0.0))

    def value(x):
        x = np.asarray(x, dtype=float)
        return base_value(x) - eta * root(x)

    def deriv(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            slope = np.where(x == mid, 0.0, eta * (x - mid) / root(x))
        return base_deriv(x) + slope

    def deriv2(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            curv = eta * half_sq / root(x) ** 3
        return base_deriv2(x) + curv

    return ScalarConvexFn(
        kind="convexified",
        a=c,
        b=d,
        value=value,
        deriv=deriv,
        deriv2=deriv2,
        inv_deriv=_invert_monotone(deriv, c, d),
        params={"eta": float(eta), "base": f},
    )


def _convexified_from_params(domain, params, part_builder) -> ScalarConvexFn:
    """Rebuild a "convexified" part; ``part_builder`` decodes the base entry."""
    base = part_builder(params["base"])
    if (base.a, base.b) != (float(domain[0]), float(domain[1])):
        base = restrict_part(base, float(domain[0]), float(domain[1]))
    return convexify_scalar(base, float(params["eta"]))


# ---------------------------------------------------------------------------
# stages 2-4: domain surgery helpers


def _value_at(part: ScalarConvexFn, x: float) -> float:
    v = float(np.asarray(part.value(x), dtype=float).reshape(()))
    return math.inf if math.isnan(v) else v


def _part_min(part: ScalarConvexFn) -> tuple[float, float]:
    """Minimum value and a minimizer of a part over its own domain."""
    if part.degenerate:
        return _value_at(part, part.a), part.a
    res = minimize_scalar(
        lambda x: _value_at(part, x),
        bounds=(part.a, part.b),
        method="bounded",
        options={"xatol": 1e-10, "maxiter": 500},
    )
    best = (float(res.fun), float(res.x))
    for x in (part.a, part.b):
        v = _value_at(part, x)
        if v < best[0]:
            best = (v, x)
    return best


def _sublevel_interval(part: ScalarConvexFn, level: float, xstar: float):
    """Interval {x in [a, b] : f(x) <= level}; collapses to xstar if empty."""
    tol = 1e-12 * (1.0 + abs(level))
    level = level + tol
    if _value_at(part, xstar) > level:
        return xstar, xstar
    lo, hi = part.a, part.b
    if _value_at(part, lo) > level:
        left, right = lo, xstar
        for _ in range(80):
            m = 0.5 * (left + right)
            if _value_at(part, m) <= level:
                right = m
            else:
                left = m
        lo = right
    if _value_at(part, hi) > level:
        left, right = xstar, hi
        for _ in range(80):
            m = 0.5 * (left + right)
            if _value_at(part, m) <= level:
                left = m
            else:
                right = m
        hi = left
    return lo, hi


def _constant_part(lo: float, hi: float, offset: float) -> ScalarConvexFn:
    def const(x):
        return np.full_like(np.asarray(x, dtype=float), offset)

    def zero(x):
        return np.zeros_like(np.asarray(x, dtype=float))

    return ScalarConvexFn(
        kind="indicator-interval",
        a=lo,
        b=hi,
        value=const,
        deriv=zero,
        deriv2=zero,
        inv_deriv=None,
        params={"offset": offset} if offset else {},
    )


# ---------------------------------------------------------------------------
# full pipeline


def regularize(
    fee: SplittingFee,
    eta: float,
    cost_sup: float,
    *,
    eta_widen: float | None = None,
    eta_floor: float | None = None,
    eta_smooth: float | None = None,
    eta_convex: float | None = None,
) -> tuple[SplittingFee, RegularizationReport]:
    """Run the full five-stage pipeline on a splitting fee.

    ``eta`` is the single perturbation knob; the keyword overrides replace it
    in an individual stage for experiments.  ``cost_sup`` is the sup norm of
    the transport cost over the domain-site pairs (``cost_sup_norm`` in the
    geometry module computes it); it only enters the stage-2 truncation
    level, and any upper bound is safe.

    Args:
        fee: feasible splitting fee with at least two parts.
        eta: perturbation size shared by stages 3-6.
        cost_sup: sup norm of the transport cost; must be nonnegative.

    Returns:
        ``(fee', report)`` where ``fee'`` passes ``check_assumptions`` with
        ``eps_max == report.eps_for_solver`` and the report records the
        domains after every stage.

    Raises:
        ConfigError: bad ``eta`` or ``cost_sup``.
        InfeasibleFeeError: fewer than two parts (a one-part fee can never
            satisfy ``sum c_i < 1 < sum d_i``) or non-finite truncated parts.
    """
    for name, val in (("eta", eta), ("eta_widen", eta_widen), ("eta_floor", eta_floor),
                      ("eta_smooth", eta_smooth), ("eta_convex", eta_convex)):
        if val is not None and not (0.0 < float(val)):
            raise ConfigError(f"{name} must be positive", field=name)
    if not (float(cost_sup) >= 0.0):
        raise ConfigError("cost_sup must be nonnegative", field="cost_sup")
    if fee.n < 2:
        raise InfeasibleFeeError(
            "regularization needs at least two parts: a single weight is pinned to 1"
        )
    e_widen = eta if eta_widen is None else float(eta_widen)
    e_floor = eta if eta_floor is None else float(eta_floor)
    e_smooth = eta if eta_smooth is None else float(eta_smooth)
    e_convex = eta if eta_convex is None else float(eta_convex)

    n = fee.n
    parts = list(fee.parts)
    tags: list[list[str]] = [[] for _ in range(n)]
    notes: list[str] = []
    domains = {1: tuple((p.a, p.b) for p in parts)}

    # stage 2: truncate each part to a sublevel interval that keeps every
    # optimizer of the transport problem (the fee can move the objective by
    # at most 2 * cost_sup around the simplex minimum of the fee alone).
    mins = [_part_min(p) for p in parts]
    total_min = -conjugate_solve(fee, np.zeros(n)).fstar
    sum_mins = sum(v for v, _ in mins)
    stage2 = []
    for i, p in enumerate(parts):
        level = 2.0 * float(cost_sup) + total_min - (sum_mins - mins[i][0])
        lo, hi = _sublevel_interval(p, level, mins[i][1])
        if (lo, hi) != (p.a, p.b):
            p = restrict_part(p, lo, hi) if lo < hi else _constant_part(lo, hi, mins[i][0])
            tags[i].append("2:truncated")
        else:
            tags[i].append("2:kept")
        stage2.append(p)
    parts = stage2
    domains[2] = tuple((p.a, p.b) for p in parts)

    # stage 3: widen singleton domains so every part has interior to work with
    stage3 = []
    for i, p in enumerate(parts):
        if p.degenerate:
            lo = max(p.a - e_widen, 0.0)
            hi = min(p.a + e_widen, 1.0)
            stage3.append(_constant_part(lo, hi, _value_at(p, p.a)))
            tags[i].append("3:widened")
        else:
            stage3.append(p)
            tags[i].append("3:kept")
    parts = stage3
    domains[3] = tuple((p.a, p.b) for p in parts)

    # stage 4: floor the domains away from 0 and make the feasible-split
    # inequalities strict
    a3 = np.array([p.a for p in parts])
    b3 = np.array([p.b for p in parts])
    if float(a3.sum()) >= 1.0 - 1e-12 or float(b3.sum()) <= 1.0 + 1e-12:
        # exactly one feasible split: rebuild pinned boxes around it
        if float(a3.sum()) >= 1.0 - 1e-12:
            anchor, branch = a3, "pinned-lower"
        else:
            anchor, branch = b3, "pinned-upper"
        c4 = (anchor + e_floor / n) / (1.0 + 2.0 * e_floor)
        d4 = np.minimum(anchor + e_floor / n, 1.0)
        parts = [_constant_part(c4[i], d4[i], 0.0) for i in range(n)]
        for i in range(n):
            tags[i].append(f"4:{branch}")
        notes.append(f"stage-4 branch: {branch}")
    else:
        eps = 0.5 * min((1.0 - float(a3.sum())) / (2.0 * n), e_floor, float(b3.min()))
        stage4 = []
        for i, p in enumerate(parts):
            if p.a < eps:
                stage4.append(restrict_part(p, eps, p.b))
                tags[i].append("4:floored")
            else:
                stage4.append(p)
                tags[i].append("4:kept")
        parts = stage4
        notes.append(f"stage-4 branch: interior-floor eps={eps:.6g}")
    domains[4] = tuple((p.a, p.b) for p in parts)

    # stage 5: smooth whatever is not already C^2
    stage5 = []
    for i, p in enumerate(parts):
        if p.kind in _SMOOTH_SKIP:
            stage5.append(p)
            tags[i].append("5:kept")
        else:
            q = smooth_scalar(p, e_smooth)
            stage5.append(q)
            tags[i].append("5:smoothed" if q is not p else "5:kept")
    parts = stage5
    domains[5] = tuple((p.a, p.b) for p in parts)

    # stage 6: strong convexity and essential smoothness for every part
    parts = [convexify_scalar(p, e_convex) for p in parts]
    for i in range(n):
        tags[i].append("6:convexified")
    domains[6] = tuple((p.a, p.b) for p in parts)

    out = SplittingFee(parts=tuple(parts))
    report = RegularizationReport(
        eta=float(eta),
        stage_domains=domains,
        stage_tags=tuple(tuple(t) for t in tags),
        strong_convexity=tuple(2.0 * e_convex / (p.b - p.a) for p in parts),
        eps_for_solver=float(min(p.a for p in parts)),
        notes=tuple(notes),
    )
    return out, report
