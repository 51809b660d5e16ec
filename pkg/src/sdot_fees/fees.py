"""Splitting storage fees and their Legendre-Fenchel machinery.

A fee F(w) = sum_i f_i(w^i) on the simplex is described by per-site scalar
convex functions with domains [a_i, b_i] inside [0, 1]. The conjugate
F*(psi) = sup_w <psi, w> - F(w) is evaluated through the coupled scalar
system: w^i(r) = clamp(inv_deriv_i(psi^i - r)) with the multiplier r chosen
so the weights sum to one. The sum is nonincreasing in r, so a bracketed
bisection (with one Newton polish) is unconditionally safe; step and
piecewise-linear parts are resolved by interpolating across the jump in r.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import BoundaryClampError, BracketError, InfeasibleFeeError

__all__ = [
    "ScalarConvexFn",
    "SplittingFee",
    "ConjugateResult",
    "AssumptionReport",
    "quadratic_fee",
    "entropy_fee",
    "log_barrier_fee",
    "indicator_fee",
    "tabulated_fee",
    "conjugate_solve",
    "fstar_hessian",
    "fee_value",
    "check_assumptions",
    "fee_from_spec",
    "fee_to_spec",
]

_CONVEXITY_SAMPLES = 1000


@dataclass(frozen=True, eq=False)
class ScalarConvexFn:
    """Convex scalar fee part on a closed interval [a, b] inside [0, 1].

    ``value``, ``deriv``, ``deriv2`` are vectorized callables defined on the
    open interval; ``inv_deriv`` inverts ``deriv`` (a monotone selection for
    piecewise-linear parts, None for pure indicator parts). ``params`` keeps
    whatever the factory needs for serialization.
    """

    kind: str
    a: float
    b: float
    value: Callable
    deriv: Callable | None = None
    deriv2: Callable | None = None
    inv_deriv: Callable | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        a, b = float(self.a), float(self.b)
        if not (0.0 <= a <= b <= 1.0):
            raise InfeasibleFeeError(f"part domain [{a}, {b}] must sit inside [0, 1]")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if b > a and self.deriv is not None:
            pad = (b - a) * 1e-6
            xs = np.linspace(a + pad, b - pad, _CONVEXITY_SAMPLES)
            d = np.asarray(self.deriv(xs), dtype=float)
            slack = 1e-9 * (1.0 + float(np.abs(d).max()))
            if np.any(np.diff(d) < -slack):
                raise InfeasibleFeeError(f"{self.kind} part has a decreasing derivative")

    @property
    def degenerate(self) -> bool:
        return self.a == self.b

    def weight_at(self, s: float) -> float:
        """Maximizer of s*x - f(x) over [a, b] (KKT weight for slack s)."""
        if self.degenerate:
            return self.a
        if self.inv_deriv is None:
            return self.b if s > 0.0 else self.a
        return float(min(max(self.inv_deriv(s), self.a), self.b))


@dataclass(frozen=True, eq=False)
class SplittingFee:
    """Ordered scalar parts; infeasible domains are rejected at construction."""

    parts: tuple[ScalarConvexFn, ...]

    def __post_init__(self):
        parts = tuple(self.parts)
        if not parts:
            raise InfeasibleFeeError("fee needs at least one part")
        object.__setattr__(self, "parts", parts)
        lo = sum(p.a for p in parts)
        hi = sum(p.b for p in parts)
        if lo > 1.0 + 1e-12 or hi < 1.0 - 1e-12:
            raise InfeasibleFeeError(
                f"no feasible split: sum of lower bounds {lo:.6g}, upper {hi:.6g}"
            )

    def __len__(self) -> int:
        return len(self.parts)

    @property
    def n(self) -> int:
        return len(self.parts)

    @property
    def eps_floor(self) -> float:
        """Smallest admissible cell mass, min_i a_i."""
        return min(p.a for p in self.parts)

    @property
    def lower_bounds(self) -> np.ndarray:
        return np.array([p.a for p in self.parts])

    @property
    def upper_bounds(self) -> np.ndarray:
        return np.array([p.b for p in self.parts])


@dataclass(frozen=True)
class ConjugateResult:
    """Conjugate value, maximizing weights, and the simplex multiplier."""

    w: np.ndarray
    r: float
    fstar: float


@dataclass(frozen=True)
class AssumptionReport:
    """Hypothesis checks for running the damped Newton solver.

    ``newton_ready`` requires a strictly interior split, a positive mass
    floor, and positive sampled curvature. ``essential_smoothness`` (probed
    derivative blowup toward the domain endpoints) is reported but advisory:
    fees with finite boundary slopes still solve, they just lose the
    interior-weight guarantee.
    """

    eps_max: float
    strict_interior: bool
    strong_convexity_lb: float
    essential_smoothness: bool
    newton_ready: bool


# ---------------------------------------------------------------------------
# factories


def quadratic_fee(domain=(0.0, 1.0), center: float = 0.0, scale: float = 1.0) -> ScalarConvexFn:
    """f(x) = scale/2 * (x - center)^2."""
    if scale <= 0:
        raise InfeasibleFeeError("quadratic scale must be positive")
    a, b = domain
    return ScalarConvexFn(
        kind="quadratic",
        a=a,
        b=b,
        value=lambda x: 0.5 * scale * (np.asarray(x, dtype=float) - center) ** 2,
        deriv=lambda x: scale * (np.asarray(x, dtype=float) - center),
        deriv2=lambda x: np.full_like(np.asarray(x, dtype=float), scale),
        inv_deriv=lambda s: center + s / scale,
        params={"center": float(center), "scale": float(scale)},
    )


def entropy_fee(domain=(0.0, 1.0), scale: float = 1.0) -> ScalarConvexFn:
    """f(x) = scale * x log x, with f(0) = 0."""
    if scale <= 0:
        raise InfeasibleFeeError("entropy scale must be positive")
    a, b = domain

    def value(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(x > 0, scale * x * np.log(np.where(x > 0, x, 1.0)), 0.0)

    def inv_deriv(s):
        return np.exp(np.clip(np.asarray(s, dtype=float) / scale - 1.0, -745.0, 1.0))

    return ScalarConvexFn(
        kind="entropy",
        a=a,
        b=b,
        value=value,
        deriv=lambda x: scale * (np.log(np.asarray(x, dtype=float)) + 1.0),
        deriv2=lambda x: scale / np.asarray(x, dtype=float),
        inv_deriv=inv_deriv,
        params={"scale": float(scale)},
    )


def log_barrier_fee(domain=(0.0, 1.0), scale: float = 1.0) -> ScalarConvexFn:
    """f(x) = -scale * (log(x - a) + log(b - x)); essentially smooth at both ends."""
    if scale <= 0:
        raise InfeasibleFeeError("barrier scale must be positive")
    a, b = float(domain[0]), float(domain[1])
    if not b > a:
        raise InfeasibleFeeError("barrier domain must have positive width")
    length = b - a
    lo_in = np.nextafter(a, b)
    hi_in = np.nextafter(b, a)

    def value(x):
        x = np.clip(np.asarray(x, dtype=float), lo_in, hi_in)
        return -scale * (np.log(x - a) + np.log(b - x))

    def inv_deriv(s):
        t = np.asarray(s, dtype=float) / scale
        d = t * length ** 2 / (2.0 + np.sqrt(4.0 + (t * length) ** 2))
        return np.clip(a + 0.5 * (length + d), lo_in, hi_in)

    return ScalarConvexFn(
        kind="log-barrier",
        a=a,
        b=b,
        value=value,
        deriv=lambda x: scale * (1.0 / (b - np.asarray(x, dtype=float))
                                 - 1.0 / (np.asarray(x, dtype=float) - a)),
        deriv2=lambda x: scale * (1.0 / (b - np.asarray(x, dtype=float)) ** 2
                                  + 1.0 / (np.asarray(x, dtype=float) - a) ** 2),
        inv_deriv=inv_deriv,
        params={"scale": float(scale)},
    )


def indicator_fee(domain) -> ScalarConvexFn:
    """f = 0 on [a, b], +inf outside. a == b pins the weight to a point."""
    a, b = domain
    return ScalarConvexFn(
        kind="indicator-interval",
        a=a,
        b=b,
        value=lambda x: np.asarray(x, dtype=float) * 0.0,
        deriv=lambda x: np.asarray(x, dtype=float) * 0.0,
        deriv2=lambda x: np.asarray(x, dtype=float) * 0.0,
        inv_deriv=None,
        params={},
    )


def tabulated_fee(knots, values) -> ScalarConvexFn:
    """Piecewise-linear convex fee through (knots, values).

    The derivative is the right-continuous segment slope and the inverse
    derivative the monotone kink selection, so the conjugate machinery works
    directly; there is no curvature, so Newton solves want this regularized.
    """
    knots = np.asarray(knots, dtype=float)
    values = np.asarray(values, dtype=float)
    if knots.ndim != 1 or knots.size < 2 or knots.shape != values.shape:
        raise InfeasibleFeeError("tabulated fee needs matching knot/value arrays (>= 2 points)")
    if np.any(np.diff(knots) <= 0):
        raise InfeasibleFeeError("tabulated knots must be strictly increasing")
    slopes = np.diff(values) / np.diff(knots)
    if np.any(np.diff(slopes) < -1e-9 * (1.0 + np.abs(slopes).max())):
        raise InfeasibleFeeError("tabulated values are not convex")

    def deriv(x):
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, len(slopes) - 1)
        return slopes[idx]

    def inv_deriv(s):
        j = np.searchsorted(slopes, np.asarray(s, dtype=float), side="right")
        return knots[j]

    return ScalarConvexFn(
        kind="tabulated",
        a=knots[0],
        b=knots[-1],
        value=lambda x: np.interp(np.asarray(x, dtype=float), knots, values),
        deriv=deriv,
        deriv2=lambda x: np.asarray(x, dtype=float) * 0.0,
        inv_deriv=inv_deriv,
        params={"knots": knots.tolist(), "values": values.tolist()},
    )


def restrict_part(part: ScalarConvexFn, lo: float, hi: float) -> ScalarConvexFn:
    """Narrow a part's domain to [lo, hi] without changing values there.

    Tabulated parts get their knot table re-cut so the stored table still
    spans exactly the domain; log-barrier parts stash their native domain in
    ``params`` so serialization can rebuild the original poles.
    """
    lo, hi = float(lo), float(hi)
    if not (part.a - 1e-12 <= lo <= hi <= part.b + 1e-12):
        raise InfeasibleFeeError(
            f"[{lo}, {hi}] is not inside the part domain [{part.a}, {part.b}]"
        )
    lo, hi = max(lo, part.a), min(hi, part.b)
    if lo == part.a and hi == part.b:
        return part
    if part.kind == "tabulated":
        knots = np.asarray(part.params["knots"], dtype=float)
        values = np.asarray(part.params["values"], dtype=float)
        inner = knots[(knots > lo) & (knots < hi)]
        new_knots = np.concatenate([[lo], inner, [hi]])
        return tabulated_fee(new_knots, np.interp(new_knots, knots, values))
    params = dict(part.params)
    if part.kind == "log-barrier":
        params.setdefault("native_domain", [part.a, part.b])
    return ScalarConvexFn(
        kind=part.kind,
        a=lo,
        b=hi,
        value=part.value,
        deriv=part.deriv,
        deriv2=part.deriv2,
        inv_deriv=part.inv_deriv,
        params=params,
    )


# ---------------------------------------------------------------------------
# conjugate machinery


def _weights_at(fee: SplittingFee, psi: np.ndarray, r: float) -> np.ndarray:
    return np.array([p.weight_at(float(s) - r) for p, s in zip(fee.parts, psi)])


def _check_psi(fee: SplittingFee, psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=float)
    if psi.shape != (fee.n,):
        raise InfeasibleFeeError(f"psi has shape {psi.shape}, expected ({fee.n},)")
    if not np.all(np.isfinite(psi)):
        raise InfeasibleFeeError("psi entries must be finite")
    return psi


def _endpoint_slopes(fee: SplittingFee):
    """Finite one-sided derivative bounds used to seed the multiplier bracket."""
    lo, hi = [], []
    for p in fee.parts:
        if p.degenerate or p.deriv is None:
            continue
        pad = (p.b - p.a) * 1e-6
        da = float(p.deriv(p.a + pad))
        db = float(p.deriv(p.b - pad))
        if np.isfinite(da):
            lo.append(da)
        if np.isfinite(db):
            hi.append(db)
    return (min(lo) if lo else 0.0), (max(hi) if hi else 0.0)


def conjugate_solve(fee: SplittingFee, psi) -> ConjugateResult:
    """Conjugate value F*(psi) and its (sub)gradient weights.

    Finds the multiplier r with sum_i w^i(r) = 1 by bracketed bisection on
    the nonincreasing weight sum, polishes r with one Newton step when the
    active parts carry curvature, and resolves jumps (indicator and
    piecewise-linear parts) by interpolating between the two bracket ends so
    the weights sum to one exactly.

    Raises:
        BracketError: the root bracket cannot be established (malformed
            inverse derivative, or a boundary sum exactly at one that is
            never attained).
    """
    psi = _check_psi(fee, psi)
    d_lo, d_hi = _endpoint_slopes(fee)
    r_lo = float(psi.min()) - d_hi - 1.0
    r_hi = float(psi.max()) - d_lo + 1.0

    s_lo = float(_weights_at(fee, psi, r_lo).sum())
    step = max(1.0, r_hi - r_lo)
    for _ in range(80):
        if s_lo >= 1.0:
            break
        r_lo -= step
        step *= 2.0
        s_lo = float(_weights_at(fee, psi, r_lo).sum())
    else:
        raise BracketError(f"weight sum stays below one down to r = {r_lo:.3g}")
    s_hi = float(_weights_at(fee, psi, r_hi).sum())
    step = max(1.0, r_hi - r_lo)
    for _ in range(80):
        if s_hi <= 1.0:
            break
        r_hi += step
        step *= 2.0
        s_hi = float(_weights_at(fee, psi, r_hi).sum())
    else:
        raise BracketError(f"weight sum stays above one up to r = {r_hi:.3g}")

    for _ in range(220):
        if r_hi - r_lo <= 1e-13 * max(1.0, abs(r_lo), abs(r_hi)):
            break
        mid = 0.5 * (r_lo + r_hi)
        if float(_weights_at(fee, psi, mid).sum()) >= 1.0:
            r_lo, s_lo = mid, float(_weights_at(fee, psi, mid).sum())
        else:
            r_hi, s_hi = mid, float(_weights_at(fee, psi, mid).sum())

    r = 0.5 * (r_lo + r_hi)
    w = _weights_at(fee, psi, r)
    slopes = _active_curvature(fee, w)
    total = float(slopes.sum())
    if total > 0.0:
        # one Newton polish on the multiplier, then close the residual along
        # the KKT direction (keeps every coordinate inside its bounds)
        r_new = r + (float(w.sum()) - 1.0) / total
        if r_lo - 1.0 <= r_new <= r_hi + 1.0:
            w_new = _weights_at(fee, psi, r_new)
            if abs(float(w_new.sum()) - 1.0) <= abs(float(w.sum()) - 1.0):
                r, w = r_new, w_new
                slopes = _active_curvature(fee, w)
                total = float(slopes.sum())
        if total > 0.0:
            w = w + (1.0 - float(w.sum())) * slopes / total
            w = np.minimum(np.maximum(w, fee.lower_bounds), fee.upper_bounds)
    if abs(float(w.sum()) - 1.0) > 1e-12:
        w_lo = _weights_at(fee, psi, r_lo)
        w_hi = _weights_at(fee, psi, r_hi)
        den = float(w_lo.sum() - w_hi.sum())
        if den > 1e-300:
            t = (1.0 - float(w_hi.sum())) / den
            w = w_hi + np.clip(t, 0.0, 1.0) * (w_lo - w_hi)

    fstar = float(psi @ w) - sum(float(p.value(x)) for p, x in zip(fee.parts, w))
    return ConjugateResult(w=w, r=r, fstar=fstar)


def _active_curvature(fee: SplittingFee, w: np.ndarray, edge_tol: float = 1e-12) -> np.ndarray:
    """Per-part 1/f'' where the weight is strictly interior; zero elsewhere."""
    out = np.zeros(fee.n)
    for i, p in enumerate(fee.parts):
        if p.degenerate or p.deriv2 is None or p.inv_deriv is None:
            continue
        if w[i] <= p.a + edge_tol or w[i] >= p.b - edge_tol:
            continue
        d2 = float(p.deriv2(w[i]))
        if np.isfinite(d2) and d2 > 0.0:
            out[i] = 1.0 / d2
    return out


def fstar_hessian(fee: SplittingFee, psi, result: ConjugateResult | None = None,
                  on_clamp: str = "raise") -> np.ndarray:
    """Hessian of the conjugate: diag(l) - l l^T / sum(l), l^i = 1/f_i''(w^i).

    One-point domains contribute l = 0 (the conjugate is linear in that
    coordinate). A weight pinned at a genuine bound, or an interior weight
    with no curvature, makes the formula invalid there: by default that
    raises BoundaryClampError (regularize the fee to avoid it);
    ``on_clamp="zero"`` selects the flat branch l = 0 instead, which keeps
    the matrix symmetric positive semidefinite.
    """
    psi = _check_psi(fee, psi)
    res = result if result is not None else conjugate_solve(fee, psi)
    w = res.w
    length = np.zeros(fee.n)
    for i, p in enumerate(fee.parts):
        if p.degenerate:
            continue
        pinned = w[i] <= p.a + 1e-12 or w[i] >= p.b - 1e-12
        d2 = float(p.deriv2(w[i])) if (p.deriv2 is not None and not pinned) else 0.0
        if pinned or not np.isfinite(d2) or d2 <= 0.0:
            if on_clamp == "raise":
                where = "pinned at a bound" if pinned else "without curvature"
                raise BoundaryClampError(
                    f"conjugate weight {i} is {where} (w = {w[i]:.6g}); "
                    "the Hessian formula is invalid there, regularize the fee"
                )
            continue
        length[i] = 1.0 / d2
    total = float(length.sum())
    if total <= 0.0:
        return np.zeros((fee.n, fee.n))
    return np.diag(length) - np.outer(length, length) / total


def fee_value(fee: SplittingFee, w) -> float:
    """F(w) = sum_i f_i(w^i) on the simplex slice; +inf when infeasible."""
    w = np.asarray(w, dtype=float)
    if w.shape != (fee.n,):
        raise InfeasibleFeeError(f"w has shape {w.shape}, expected ({fee.n},)")
    if abs(float(w.sum()) - 1.0) > 1e-9:
        return math.inf
    lo, hi = fee.lower_bounds, fee.upper_bounds
    if np.any(w < lo - 1e-12) or np.any(w > hi + 1e-12):
        return math.inf
    wc = np.minimum(np.maximum(w, lo), hi)
    return sum(float(p.value(x)) for p, x in zip(fee.parts, wc))


def _derivative_blows_up(part: ScalarConvexFn, at_lower: bool) -> bool:
    """Probe |f'| growth toward an endpoint: large outright, or a clear trend."""
    width = part.b - part.a
    offsets = [o for o in (1e-3, 1e-4, 1e-5, 1e-6) if o < width / 2.0]
    if not offsets or part.deriv is None:
        return False
    x0 = part.a if at_lower else part.b
    sgn = 1.0 if at_lower else -1.0
    vals = [abs(float(part.deriv(x0 + sgn * off))) for off in offsets]
    if vals[-1] > 1e3:
        return True
    increasing = all(v2 > v1 for v1, v2 in zip(vals, vals[1:]))
    return increasing and vals[0] > 0 and vals[-1] / vals[0] >= 10.0


def check_assumptions(fee: SplittingFee) -> AssumptionReport:
    """Sampled hypothesis report for the damped Newton solver."""
    lo = float(fee.lower_bounds.sum())
    hi = float(fee.upper_bounds.sum())
    strict = lo < 1.0 < hi
    curv = math.inf
    smooth = True
    for p in fee.parts:
        if p.degenerate:
            smooth = False
            continue
        if p.deriv2 is not None:
            pad = (p.b - p.a) * 1e-6
            xs = np.linspace(p.a + pad, p.b - pad, _CONVEXITY_SAMPLES)
            curv = min(curv, float(np.asarray(p.deriv2(xs), dtype=float).min()))
        else:
            curv = 0.0
        smooth = smooth and _derivative_blows_up(p, True) and _derivative_blows_up(p, False)
    if not math.isfinite(curv):
        curv = 0.0
    eps_max = fee.eps_floor
    ready = strict and eps_max > 0.0 and curv > 0.0
    return AssumptionReport(
        eps_max=eps_max,
        strict_interior=strict,
        strong_convexity_lb=curv,
        essential_smoothness=smooth,
        newton_ready=ready,
    )


# ---------------------------------------------------------------------------
# JSON mapping


def _part_from_entry(entry) -> ScalarConvexFn:
    kind = entry["kind"]
    params = entry.get("params", {})
    domain = tuple(float(v) for v in entry.get("domain", (0.0, 1.0)))
    if kind == "quadratic":
        return quadratic_fee(domain, center=params.get("center", 0.0),
                             scale=params.get("scale", 1.0))
    if kind == "entropy":
        return entropy_fee(domain, scale=params.get("scale", 1.0))
    if kind == "log_barrier":
        native = tuple(float(v) for v in params.get("native_domain", domain))
        part = log_barrier_fee(native, scale=params.get("scale", 1.0))
        if domain != native:
            part = restrict_part(part, *domain)
        return part
    if kind == "indicator":
        return indicator_fee(domain)
    if kind == "tabulated":
        return tabulated_fee(params["knots"], params["values"])
    if kind == "tabulated-smoothed":
        from .regularize import _smoothed_from_params

        return _smoothed_from_params(domain, params)
    if kind == "convexified":
        from .regularize import _convexified_from_params

        return _convexified_from_params(domain, params, _part_from_entry)
    raise InfeasibleFeeError(f"unknown fee kind {kind!r}")


def fee_from_spec(spec_list) -> SplittingFee:
    """Build a fee from a list of {kind, params, domain} mappings."""
    return SplittingFee(parts=tuple(_part_from_entry(e) for e in spec_list))


def _part_to_spec(p: ScalarConvexFn, samples: int) -> dict:
    domain = [p.a, p.b]
    if p.kind == "quadratic":
        return {"kind": "quadratic", "params": dict(p.params), "domain": domain}
    if p.kind == "entropy":
        return {"kind": "entropy", "params": dict(p.params), "domain": domain}
    if p.kind == "log-barrier":
        return {"kind": "log_barrier", "params": dict(p.params), "domain": domain}
    if p.kind == "indicator-interval":
        return {"kind": "indicator", "params": {}, "domain": domain}
    if p.kind == "tabulated":
        return {"kind": "tabulated", "params": dict(p.params), "domain": domain}
    if p.kind == "tabulated-smoothed":
        return {"kind": "tabulated-smoothed", "params": dict(p.params), "domain": domain}
    if p.kind == "convexified":
        params = {"eta": p.params["eta"],
                  "base": _part_to_spec(p.params["base"], samples)}
        return {"kind": "convexified", "params": params, "domain": domain}
    if p.degenerate:
        return {"kind": "indicator", "params": {}, "domain": domain}
    knots = np.linspace(p.a, p.b, samples)
    values = np.asarray(p.value(knots), dtype=float)
    return {
        "kind": "tabulated",
        "params": {"knots": knots.tolist(), "values": values.tolist()},
        "domain": domain,
    }


def fee_to_spec(fee: SplittingFee, samples: int = 1024) -> list[dict]:
    """Serialize a fee to the JSON shape accepted by fee_from_spec.

    Factory kinds and pipeline outputs round-trip exactly; anything else is
    snapshotted as a dense piecewise-linear table, which drops curvature, so
    re-regularize after loading if a Newton solve is intended.
    """
    return [_part_to_spec(p, samples) for p in fee.parts]
