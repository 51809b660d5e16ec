"""Box domains, grid densities, and power-diagram cells for the quadratic cost.

A point x belongs to the cell of the site minimizing |x - y_i|^2 + psi_i.
Cell masses and their Jacobian in psi are computed exactly: in 1-D from
envelope breakpoints integrated against the piecewise-constant density, in
2-D from half-plane-clipped cell polygons (boundary-segment integrals give
the Jacobian). A plain grid-argmin backend is kept for cross-checks and for
rendering per-node assignment maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConditioningError, GeometryError

__all__ = [
    "DomainSpec",
    "DensityField",
    "SiteSet",
    "TransportProblem",
    "LaguerreDiagram",
    "TransportSummary",
    "laguerre_masses",
    "cell_masses",
    "laguerre_jacobian",
    "transport_summary",
    "cost_sup_norm",
]


@dataclass(frozen=True)
class DomainSpec:
    """Axis-aligned box with a regular midpoint quadrature grid.

    Args:
        dim: 1 or 2.
        bounds: per-axis (lo, hi) pairs.
        resolution: quadrature nodes per axis (midpoints of a uniform split).
    """

    dim: int
    bounds: tuple[tuple[float, float], ...]
    resolution: int = 256

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise GeometryError(f"dim must be 1 or 2, got {self.dim}")
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if len(bounds) != self.dim:
            raise GeometryError(f"expected {self.dim} bounds pairs, got {len(bounds)}")
        for lo, hi in bounds:
            if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
                raise GeometryError(f"invalid axis bounds ({lo}, {hi})")
        if int(self.resolution) < 2:
            raise GeometryError(f"resolution must be >= 2, got {self.resolution}")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "resolution", int(self.resolution))

    @property
    def lengths(self) -> np.ndarray:
        return np.array([hi - lo for lo, hi in self.bounds])

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def spacing(self) -> np.ndarray:
        """Grid cell width per axis."""
        return self.lengths / self.resolution

    def axis_nodes(self, axis: int) -> np.ndarray:
        lo, hi = self.bounds[axis]
        h = (hi - lo) / self.resolution
        return lo + h * (np.arange(self.resolution) + 0.5)

    def grid_nodes(self) -> np.ndarray:
        """Quadrature nodes, shape (n_nodes, dim). 2-D nodes are row-major in (y, x)."""
        if self.dim == 1:
            return self.axis_nodes(0)[:, None]
        xs = self.axis_nodes(0)
        ys = self.axis_nodes(1)
        gx, gy = np.meshgrid(xs, ys)  # gx[iy, ix]
        return np.column_stack([gx.ravel(), gy.ravel()])

    def grid_shape(self) -> tuple[int, ...]:
        if self.dim == 1:
            return (self.resolution,)
        return (self.resolution, self.resolution)


@dataclass(frozen=True)
class DensityField:
    """Probability density on a domain's quadrature grid.

    Tabulated values are interpreted as piecewise constant on the grid cells
    and renormalized at construction so the quadrature sum times the cell
    volume equals one. ``holder_alpha`` records the smoothness class of the
    underlying density (metadata only).
    """

    domain: DomainSpec
    kind: str
    values: np.ndarray | None = None
    holder_alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "tabulated"):
            raise GeometryError(f"unknown density kind {self.kind!r}")
        if not (0.0 < self.holder_alpha <= 1.0):
            raise GeometryError(f"holder_alpha must lie in (0, 1], got {self.holder_alpha}")
        if self.kind == "tabulated":
            vals = np.asarray(self.values, dtype=float)
            if vals.shape != self.domain.grid_shape():
                raise GeometryError(
                    f"density values shape {vals.shape} does not match grid {self.domain.grid_shape()}"
                )
            if not np.all(np.isfinite(vals)) or np.any(vals < 0):
                raise GeometryError("density values must be finite and nonnegative")
            cell_vol = float(np.prod(self.domain.spacing))
            total = float(vals.sum() * cell_vol)
            if total <= 0:
                raise GeometryError("density must have positive total mass")
            vals = vals / total
            vals.setflags(write=False)
            object.__setattr__(self, "values", vals)
        elif self.values is not None:
            raise GeometryError("uniform density takes no values array")

    @classmethod
    def uniform(cls, domain: DomainSpec, holder_alpha: float = 1.0) -> "DensityField":
        return cls(domain=domain, kind="uniform", holder_alpha=holder_alpha)

    @classmethod
    def tabulated(cls, domain: DomainSpec, values, holder_alpha: float = 1.0) -> "DensityField":
        return cls(domain=domain, kind="tabulated", values=np.asarray(values, dtype=float),
                   holder_alpha=holder_alpha)

    def node_values(self) -> np.ndarray:
        """Density at the quadrature nodes, grid shaped."""
        if self.kind == "uniform":
            return np.full(self.domain.grid_shape(), 1.0 / self.domain.volume)
        return self.values

    def normalization_defect(self) -> float:
        cell_vol = float(np.prod(self.domain.spacing))
        return abs(float(self.node_values().sum()) * cell_vol - 1.0)


@dataclass(frozen=True)
class SiteSet:
    """Ordered collection of pairwise-distinct target sites."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise GeometryError("sites must form a nonempty (N, dim) array")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("site coordinates must be finite")
        diff = pts[:, None, :] - pts[None, :, :]
        d2 = (diff ** 2).sum(-1)
        np.fill_diagonal(d2, np.inf)
        if d2.min() <= 0.0:
            raise GeometryError("sites must be pairwise distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class TransportProblem:
    """Full instance: box domain, source density, and target sites.

    The transport cost is the squared Euclidean distance |x - y|^2.
    """

    domain: DomainSpec
    density: DensityField
    sites: SiteSet

    def __post_init__(self):
        if self.density.domain != self.domain:
            raise GeometryError("density is tabulated on a different domain")
        pts = self.sites.points
        if pts.shape[1] != self.domain.dim:
            raise GeometryError(
                f"site dimension {pts.shape[1]} does not match domain dim {self.domain.dim}"
            )
        for ax, (lo, hi) in enumerate(self.domain.bounds):
            if np.any(pts[:, ax] < lo) or np.any(pts[:, ax] > hi):
                raise GeometryError("sites must lie inside the domain box")

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @cached_property
    def _line(self) -> "_LineDensity":
        if self.domain.dim != 1:
            raise GeometryError("1-D machinery requested on a 2-D problem")
        return _LineDensity.from_problem(self)


class _LineDensity:
    """Prefix moments of a piecewise-constant density on [lo, hi].

    Uniform densities use a single cell, so interval masses, first and second
    moments, and quantiles are exact regardless of the grid resolution.
    """

    def __init__(self, edges: np.ndarray, rho: np.ndarray):
        self.edges = edges
        self.rho = rho
        e = edges
        self.m0 = np.concatenate([[0.0], np.cumsum(rho * np.diff(e))])
        self.m1 = np.concatenate([[0.0], np.cumsum(rho * np.diff(e ** 2) / 2.0)])
        self.m2 = np.concatenate([[0.0], np.cumsum(rho * np.diff(e ** 3) / 3.0)])

    @classmethod
    def from_problem(cls, problem: TransportProblem) -> "_LineDensity":
        lo, hi = problem.domain.bounds[0]
        if problem.density.kind == "uniform":
            return cls(np.array([lo, hi]), np.array([1.0 / (hi - lo)]))
        edges = np.linspace(lo, hi, problem.domain.resolution + 1)
        return cls(edges, problem.density.values)

    def _cell_of(self, x: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.edges, x, side="right") - 1
        return np.clip(idx, 0, len(self.rho) - 1)

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.edges[0], self.edges[-1])
        k = self._cell_of(x)
        return self.m0[k] + self.rho[k] * (x - self.edges[k])

    def moment1(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.edges[0], self.edges[-1])
        k = self._cell_of(x)
        return self.m1[k] + self.rho[k] * (x ** 2 - self.edges[k] ** 2) / 2.0

    def moment2(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.edges[0], self.edges[-1])
        k = self._cell_of(x)
        return self.m2[k] + self.rho[k] * (x ** 3 - self.edges[k] ** 3) / 3.0

    def interval_mass(self, s, t):
        return self.cdf(t) - self.cdf(s)

    def segment_cost(self, s, t, y):
        """Integral of (x - y)^2 rho over [s, t]; s, t, y broadcast."""
        i0 = self.cdf(t) - self.cdf(s)
        i1 = self.moment1(t) - self.moment1(s)
        i2 = self.moment2(t) - self.moment2(s)
        return i2 - 2.0 * np.asarray(y) * i1 + np.asarray(y) ** 2 * i0

    def value_at(self, x):
        x = np.asarray(x, dtype=float)
        return self.rho[self._cell_of(x)]

    def quantile(self, q):
        """Left-continuous inverse of the cdf; exact on each positive-density cell."""
        q = np.clip(np.asarray(q, dtype=float), 0.0, self.m0[-1])
        k = np.clip(np.searchsorted(self.m0, q, side="right") - 1, 0, len(self.rho) - 1)
        rho = self.rho[k]
        safe = np.where(rho > 0, rho, 1.0)
        out = self.edges[k] + np.where(rho > 0, (q - self.m0[k]) / safe, 0.0)
        return np.minimum(out, self.edges[-1])


@dataclass(frozen=True)
class LaguerreDiagram:
    """Cell decomposition induced by dual prices psi.

    ``masses[i]`` integrates the density over cell i. ``breakpoints`` holds
    the 1-D interval endpoints between consecutive nonempty cells (None in
    2-D). ``assignment`` maps every quadrature node to its cell index
    (0-based, lowest index wins ties) and is computed on first access.
    """

    problem: TransportProblem
    psi: np.ndarray
    masses: np.ndarray
    method: str = "exact"
    breakpoints: np.ndarray | None = None

    @cached_property
    def assignment(self) -> np.ndarray:
        return _grid_assignment(self.problem, self.psi)

    @property
    def min_mass(self) -> float:
        return float(self.masses.min())


@dataclass(frozen=True)
class TransportSummary:
    """Cost, weights, and assignment map of the cell decomposition at psi."""

    cost: float
    weights: np.ndarray
    diagram: LaguerreDiagram

    @property
    def map(self) -> np.ndarray:
        return self.diagram.assignment


def _check_psi(problem: TransportProblem, psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=float)
    if psi.shape != (problem.n_sites,):
        raise GeometryError(f"psi has shape {psi.shape}, expected ({problem.n_sites},)")
    if not np.all(np.isfinite(psi)):
        raise GeometryError("psi entries must be finite")
    return psi


def _grid_assignment(problem: TransportProblem, psi: np.ndarray) -> np.ndarray:
    nodes = problem.domain.grid_nodes()
    pts = problem.sites.points
    cost = ((nodes[:, None, :] - pts[None, :, :]) ** 2).sum(-1) + psi[None, :]
    return np.argmin(cost, axis=1).reshape(problem.domain.grid_shape())


def _grid_masses(problem: TransportProblem, psi: np.ndarray) -> np.ndarray:
    assign = _grid_assignment(problem, psi).ravel()
    weights = problem.density.node_values().ravel() * float(np.prod(problem.domain.spacing))
    return np.bincount(assign, weights=weights, minlength=problem.n_sites)


# ---------------------------------------------------------------------------
# 1-D exact backend


def _envelope_1d(problem: TransportProblem, psi: np.ndarray):
    """Active cells left to right.

    Returns (order, breaks): ``order`` lists site indices whose cells appear
    on the lower envelope (position-ascending), ``breaks`` the breakpoints
    between consecutive entries (len(order) - 1, increasing, unclipped).
    """
    y = problem.sites.points[:, 0]
    sort = np.argsort(y)

    def bp(i, j):
        # boundary between sites i (left) and j (right)
        return 0.5 * (y[i] + y[j]) + (psi[j] - psi[i]) / (2.0 * (y[j] - y[i]))

    stack: list[int] = []
    breaks: list[float] = []
    for k in sort:
        x_new = None
        while stack:
            x_new = bp(stack[-1], k)
            if breaks and x_new <= breaks[-1]:
                stack.pop()
                breaks.pop()
                x_new = None
            else:
                break
        if stack:
            if x_new is None:
                x_new = bp(stack[-1], k)
            breaks.append(x_new)
        stack.append(k)
    return np.array(stack, dtype=int), np.array(breaks, dtype=float)


def _masses_1d(problem: TransportProblem, psi: np.ndarray):
    lo, hi = problem.domain.bounds[0]
    order, breaks = _envelope_1d(problem, psi)
    edges = np.clip(np.concatenate([[lo], breaks, [hi]]), lo, hi)
    line = problem._line
    masses = np.zeros(problem.n_sites)
    masses[order] = line.cdf(edges[1:]) - line.cdf(edges[:-1])
    return masses, order, breaks


def _jacobian_1d(problem: TransportProblem, psi: np.ndarray) -> np.ndarray:
    lo, hi = problem.domain.bounds[0]
    _, order, breaks = _masses_1d(problem, psi)
    y = problem.sites.points[:, 0]
    line = problem._line
    n = problem.n_sites
    dg = np.zeros((n, n))
    for k, x_star in enumerate(breaks):
        if not (lo < x_star < hi):
            continue
        i, j = order[k], order[k + 1]
        t = float(line.value_at(x_star)) / (2.0 * abs(y[j] - y[i]))
        dg[i, j] += t
        dg[j, i] += t
        dg[i, i] -= t
        dg[j, j] -= t
    return dg


# ---------------------------------------------------------------------------
# 2-D exact backend: half-plane-clipped cell polygons

_BOX_EDGE = -1


def _clip_labeled(vertices, labels, a, b, new_label, tol=1e-12):
    """Clip a labeled polygon against a * x <= b (Sutherland-Hodgman).

    ``labels[k]`` tags the edge starting at vertex k; intersection points
    entering the clip line start an edge tagged ``new_label``.
    """
    m = len(vertices)
    out_v: list[np.ndarray] = []
    out_l: list[int] = []
    if m == 0:
        return out_v, out_l
    side = [float(a @ v - b) for v in vertices]
    scale = max(1.0, abs(b))
    for k in range(m):
        p, q = vertices[k], vertices[(k + 1) % m]
        sp, sq = side[k], side[(k + 1) % m]
        p_in = sp <= tol * scale
        q_in = sq <= tol * scale
        if p_in:
            out_v.append(p)
            out_l.append(labels[k])
        if p_in != q_in:
            t = sp / (sp - sq)
            x = p + t * (q - p)
            out_v.append(x)
            out_l.append(labels[k] if not p_in else new_label)
    return out_v, out_l


def _power_cells_2d(problem: TransportProblem, psi: np.ndarray):
    """Cell polygons with per-edge neighbor labels (box walls get -1)."""
    (x0, x1), (y0, y1) = problem.domain.bounds
    box = [np.array([x0, y0]), np.array([x1, y0]), np.array([x1, y1]), np.array([x0, y1])]
    pts = problem.sites.points
    sq = (pts ** 2).sum(1)
    cells = []
    for i in range(problem.n_sites):
        verts = list(box)
        labels = [_BOX_EDGE] * 4
        for j in range(problem.n_sites):
            if j == i or not verts:
                continue
            a = 2.0 * (pts[j] - pts[i])
            b = sq[j] - sq[i] + (psi[j] - psi[i])
            verts, labels = _clip_labeled(verts, labels, a, b, j)
        cells.append((verts, labels))
    return cells


def _poly_area(verts) -> float:
    if len(verts) < 3:
        return 0.0
    v = np.asarray(verts)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _poly_quadratic_integral(verts, site) -> float:
    """Integral of |x - site|^2 over a convex polygon (midpoint cubature per fan triangle)."""
    if len(verts) < 3:
        return 0.0
    v = np.asarray(verts, dtype=float)
    total = 0.0
    p0 = v[0]
    for k in range(1, len(v) - 1):
        p1, p2 = v[k], v[k + 1]
        area = 0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]))
        mids = [(p0 + p1) / 2.0, (p1 + p2) / 2.0, (p0 + p2) / 2.0]
        f = sum(((m - site) ** 2).sum() for m in mids) / 3.0
        total += area * f
    return total


def _masses_2d_uniform(problem: TransportProblem, psi: np.ndarray) -> np.ndarray:
    rho = 1.0 / problem.domain.volume
    cells = _power_cells_2d(problem, psi)
    return np.array([rho * _poly_area(v) for v, _ in cells])


def _masses_2d_tabulated(problem: TransportProblem, psi: np.ndarray) -> np.ndarray:
    """Node sums with linear partial-volume weights across cell interfaces.

    Each node's mass is split between its best and runner-up site by the
    fraction of the grid cell on either side of the separating line (linear
    model in the signed distance). Continuous in psi and mass-conserving.
    """
    nodes = problem.domain.grid_nodes()
    pts = problem.sites.points
    n = problem.n_sites
    cost = ((nodes[:, None, :] - pts[None, :, :]) ** 2).sum(-1) + psi[None, :]
    if n == 1:
        return np.array([1.0])
    two = np.argpartition(cost, 1, axis=1)[:, :2]
    c_two = np.take_along_axis(cost, two, axis=1)
    swap = c_two[:, 0] > c_two[:, 1]
    two[swap] = two[swap][:, ::-1]
    c_two[swap] = c_two[swap][:, ::-1]
    best, second = two[:, 0], two[:, 1]
    gap = c_two[:, 1] - c_two[:, 0]

    dvec = pts[second] - pts[best]
    norm = 2.0 * np.sqrt((dvec ** 2).sum(1))
    dist = gap / norm  # signed distance from node to the separating line
    hx, hy = problem.domain.spacing
    nhat = dvec / norm[:, None] * 2.0
    width = hx * np.abs(nhat[:, 0]) + hy * np.abs(nhat[:, 1])
    frac = np.clip(0.5 + dist / width, 0.0, 1.0)

    node_mass = problem.density.values.ravel() * (hx * hy)
    masses = np.zeros(n)
    np.add.at(masses, best, node_mass * frac)
    np.add.at(masses, second, node_mass * (1.0 - frac))
    return masses


def _jacobian_2d(problem: TransportProblem, psi: np.ndarray) -> np.ndarray:
    pts = problem.sites.points
    n = problem.n_sites
    cells = _power_cells_2d(problem, psi)
    if problem.density.kind == "uniform":
        rho_line = None
        rho0 = 1.0 / problem.domain.volume
    else:
        rho_line = problem.density.values
        hx, hy = problem.domain.spacing
        (x0, _), (y0, _) = problem.domain.bounds
        res = problem.domain.resolution
    acc = np.zeros((n, n))
    gauss = np.array([0.046910077, 0.230765345, 0.5, 0.769234655, 0.953089923])
    gw = np.array([0.118463443, 0.239314335, 0.284444444, 0.239314335, 0.118463443])
    for i, (verts, labels) in enumerate(cells):
        m = len(verts)
        for k in range(m):
            j = labels[k]
            if j < 0:
                continue
            p, q = verts[k], verts[(k + 1) % m]
            seg = np.linalg.norm(q - p)
            if seg < 1e-14:
                continue
            if rho_line is None:
                line_int = rho0 * seg
            else:
                xs = p[None, :] + gauss[:, None] * (q - p)[None, :]
                ix = np.clip(((xs[:, 0] - x0) / hx).astype(int), 0, res - 1)
                iy = np.clip(((xs[:, 1] - y0) / hy).astype(int), 0, res - 1)
                line_int = seg * float((gw * rho_line[iy, ix]).sum())
            dy = np.linalg.norm(pts[j] - pts[i])
            acc[i, j] += line_int / (2.0 * dy)
    off = 0.5 * (acc + acc.T)  # each interface is accumulated from both cells
    dg = off.copy()
    np.fill_diagonal(dg, 0.0)
    np.fill_diagonal(dg, -dg.sum(axis=1))
    return dg


# ---------------------------------------------------------------------------
# public operations


def cell_masses(problem: TransportProblem, psi, method: str = "exact") -> np.ndarray:
    """Cell masses G(psi) without the diagram wrapper (hot-path helper)."""
    psi = _check_psi(problem, psi)
    if method == "grid":
        return _grid_masses(problem, psi)
    if method != "exact":
        raise GeometryError(f"unknown mass method {method!r}")
    if problem.domain.dim == 1:
        return _masses_1d(problem, psi)[0]
    if problem.density.kind == "uniform":
        return _masses_2d_uniform(problem, psi)
    return _masses_2d_tabulated(problem, psi)


def laguerre_masses(problem: TransportProblem, psi, method: str = "exact") -> LaguerreDiagram:
    """Cell decomposition at psi with masses summing to the unit total.

    Args:
        problem: transport instance.
        psi: dual prices, shape (N,), finite.
        method: "exact" (default) or "grid" (node-argmin cross-check backend).

    Returns:
        LaguerreDiagram with masses, psi, and 1-D breakpoints when available.
    """
    psi = _check_psi(problem, psi)
    breaks = None
    if method == "exact" and problem.domain.dim == 1:
        masses, _, raw = _masses_1d(problem, psi)
        lo, hi = problem.domain.bounds[0]
        breaks = np.clip(raw, lo, hi)
    else:
        masses = cell_masses(problem, psi, method=method)
    psi = psi.copy()
    psi.setflags(write=False)
    masses.setflags(write=False)
    return LaguerreDiagram(problem=problem, psi=psi, masses=masses, method=method,
                           breakpoints=breaks)


def laguerre_jacobian(problem: TransportProblem, psi, method: str = "exact",
                      mass_floor: float = 0.0, fd_step: float | None = None) -> np.ndarray:
    """Jacobian DG of the cell masses in psi.

    Symmetric with zero row sums and nonnegative off-diagonals. "exact" uses
    breakpoint terms rho(x*) / (2 |y_j - y_i|) in 1-D and boundary-segment
    integrals in 2-D; "finite-diff" central-differences the exact masses
    (step max(1e-6, h^2) unless overridden); "exact-1d" is the 1-D exact
    method and errors on 2-D problems.

    Raises:
        ConditioningError: some cell mass is at or below ``mass_floor``.
    """
    psi = _check_psi(problem, psi)
    masses = cell_masses(problem, psi)
    if masses.min() <= mass_floor:
        raise ConditioningError(
            f"min cell mass {masses.min():.3e} at or below floor {mass_floor:.3e}"
        )
    if method == "exact-1d":
        if problem.domain.dim != 1:
            raise GeometryError("exact-1d Jacobian requested on a 2-D problem")
        method = "exact"
    if method == "exact":
        if problem.domain.dim == 1:
            return _jacobian_1d(problem, psi)
        return _jacobian_2d(problem, psi)
    if method != "finite-diff":
        raise GeometryError(f"unknown jacobian method {method!r}")
    h = fd_step if fd_step is not None else max(1e-6, float(problem.domain.spacing.max()) ** 2)
    n = problem.n_sites
    dg = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        dg[:, j] = (cell_masses(problem, psi + e) - cell_masses(problem, psi - e)) / (2.0 * h)
    return dg


def transport_cost(problem: TransportProblem, psi, diagram: LaguerreDiagram | None = None) -> float:
    """Integral of |x - y_T(x)|^2 rho over the cell decomposition at psi."""
    psi = _check_psi(problem, psi)
    if problem.domain.dim == 1:
        lo, hi = problem.domain.bounds[0]
        _, order, breaks = _masses_1d(problem, psi)
        edges = np.clip(np.concatenate([[lo], breaks, [hi]]), lo, hi)
        line = problem._line
        y = problem.sites.points[order, 0]
        return float(line.segment_cost(edges[:-1], edges[1:], y).sum())
    if problem.density.kind == "uniform":
        rho = 1.0 / problem.domain.volume
        cells = _power_cells_2d(problem, psi)
        return float(sum(rho * _poly_quadratic_integral(v, problem.sites.points[i])
                         for i, (v, _) in enumerate(cells)))
    assign = (diagram.assignment if diagram is not None
              else _grid_assignment(problem, psi)).ravel()
    nodes = problem.domain.grid_nodes()
    d2 = ((nodes - problem.sites.points[assign]) ** 2).sum(1)
    w = problem.density.values.ravel() * float(np.prod(problem.domain.spacing))
    return float((d2 * w).sum())


def transport_summary(problem: TransportProblem, psi) -> TransportSummary:
    """Cost, weights, and assignment of the decomposition at psi."""
    diagram = laguerre_masses(problem, psi)
    cost = transport_cost(problem, diagram.psi, diagram)
    return TransportSummary(cost=cost, weights=diagram.masses, diagram=diagram)


def cost_sup_norm(problem: TransportProblem) -> float:
    """Supremum of |x - y_i|^2 over the box and the sites (attained at a corner)."""
    pts = problem.sites.points
    total = np.zeros(len(pts))
    for ax, (lo, hi) in enumerate(problem.domain.bounds):
        total += np.maximum((pts[:, ax] - lo) ** 2, (pts[:, ax] - hi) ** 2)
    return float(total.max())
