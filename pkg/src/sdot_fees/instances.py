"""Seeded instance factories shared by the verify suites and the test bench.

Every factory is deterministic in its seed, and every returned fee passes
the solver readiness check unless the factory's docstring says otherwise.
"""

from __future__ import annotations

import numpy as np

from .fees import (
    SplittingFee,
    conjugate_solve,
    entropy_fee,
    indicator_fee,
    log_barrier_fee,
    quadratic_fee,
    restrict_part,
)
from .geometry import DensityField, DomainSpec, SiteSet, TransportProblem


def line_problem(sites, resolution: int = 512,
                 density_values=None) -> TransportProblem:
    """Unit-interval problem with uniform or tabulated density."""
    dom = DomainSpec(dim=1, bounds=((0.0, 1.0),), resolution=resolution)
    if density_values is None:
        den = DensityField.uniform(dom)
    else:
        den = DensityField.tabulated(dom, density_values)
    return TransportProblem(dom, den, SiteSet(np.asarray(sites, dtype=float)[:, None]))


def _spread_sites(rng: np.random.Generator, n: int, lo: float, hi: float,
                  min_gap: float) -> np.ndarray:
    while True:
        sites = np.sort(rng.uniform(lo, hi, n))
        if n == 1 or float(np.diff(sites).min()) >= min_gap:
            return sites


def random_line_instance(seed: int, n: int | None = None):
    """Random 1-D instance with a solver-ready fee; returns (problem, fee).

    Parts are a seed-chosen mix of floored quadratics, floored entropies,
    and log barriers, so every part has positive curvature and a positive
    mass floor while the domains stay jointly strictly interior.
    """
    rng = np.random.default_rng(seed)
    if n is None:
        n = int(rng.integers(2, 4))
    sites = _spread_sites(rng, n, 0.06, 0.94, 0.55 / n)
    parts = []
    for _ in range(n):
        floor = float(rng.uniform(0.01, 0.05))
        kind = int(rng.integers(0, 3))
        if kind == 0:
            parts.append(quadratic_fee((floor, 1.0), float(rng.uniform(0.0, 0.6)),
                                       float(rng.uniform(0.5, 3.0))))
        elif kind == 1:
            parts.append(restrict_part(
                entropy_fee((0.0, 1.0), float(rng.uniform(0.5, 2.0))), floor, 1.0))
        else:
            parts.append(log_barrier_fee((floor, 1.0), float(rng.uniform(0.01, 0.05))))
    return line_problem(sites), SplittingFee(tuple(parts))


def fixed_point_instance():
    """Two sites at 0.25 and 0.85 with f_i(x) = x^2/2; the stationarity
    condition 3.2 t = 1.66 puts the first weight at exactly 0.51875."""
    return line_problem([0.25, 0.85]), SplittingFee(
        (quadratic_fee((0.0, 1.0)), quadratic_fee((0.0, 1.0))))


def acceptance_2d_instance(resolution: int = 256):
    """Ten well-separated sites on the unit square with floored quadratics."""
    rng = np.random.default_rng(20)
    while True:
        pts = rng.uniform(0.12, 0.88, (10, 2))
        gaps = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
        gaps[np.arange(10), np.arange(10)] = np.inf
        if float(gaps.min()) >= 0.12:
            break
    dom = DomainSpec(dim=2, bounds=((0.0, 1.0), (0.0, 1.0)), resolution=resolution)
    prob = TransportProblem(dom, DensityField.uniform(dom), SiteSet(pts))
    fee = SplittingFee(tuple(quadratic_fee((0.02, 1.0), 0.1, 1.0) for _ in range(10)))
    return prob, fee


def indicator_point_instance():
    """Three sites with the split pinned to (0.3, 0.3, 0.4); the fee needs
    regularization before the Newton solver will accept it."""
    fee = SplittingFee(tuple(indicator_fee((t, t)) for t in (0.3, 0.3, 0.4)))
    return line_problem([0.174, 0.45, 0.766]), fee


def ladder_instance():
    """Asymmetric two-site instance with interior-floored quadratics, used
    for the fee-scaling stability ladder."""
    fee = SplittingFee((
        quadratic_fee((0.05, 1.0), 0.15, 3.0),
        quadratic_fee((0.05, 1.0), 0.55, 2.0),
    ))
    return line_problem([0.25, 0.85]), fee


def conjugate_pair(seed: int):
    """Random (fee, psi) pair whose conjugate weights are strictly interior.

    Finite-difference batteries for the conjugate value, gradient, and
    Hessian need a smooth point, so psi is built backward from a strictly
    interior target split: with psi_i = f_i'(target_i) the multiplier sits
    at zero and the conjugate weights equal the target exactly. A common
    shift is added afterward; it moves the multiplier, not the weights.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    parts = []
    for _ in range(n):
        floor = float(rng.uniform(0.02, 0.06))
        kind = int(rng.integers(0, 3))
        if kind == 0:
            parts.append(quadratic_fee((floor, 1.0), float(rng.uniform(0.1, 0.5)),
                                       float(rng.uniform(0.8, 3.0))))
        elif kind == 1:
            parts.append(restrict_part(
                entropy_fee((0.0, 1.0), float(rng.uniform(0.5, 2.0))), floor, 1.0))
        else:
            parts.append(log_barrier_fee((floor, 1.0), float(rng.uniform(0.02, 0.08))))
    fee = SplittingFee(tuple(parts))
    slack = 1.0 - float(fee.lower_bounds.sum())
    mix = 0.5 * rng.dirichlet(np.ones(n)) + 0.5 / n
    target = fee.lower_bounds + slack * mix
    psi = np.array([float(p.deriv(t)) for p, t in zip(fee.parts, target)])
    psi += float(rng.normal(scale=0.2))
    return fee, psi


def shuffle_instance(seed: int):
    """Random instance and psi for the shuffle battery; weights of the fee
    stay at or above 0.05, three times the shuffle tolerance used with it."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    sites = _spread_sites(rng, n, 0.1, 0.9, 0.05)
    fee = SplittingFee(tuple(quadratic_fee((0.05, 1.0)) for _ in range(n)))
    psi = rng.normal(scale=0.6, size=n)
    return line_problem(sites), fee, psi
