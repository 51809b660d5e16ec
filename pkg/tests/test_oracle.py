import numpy as np
import pytest

from sdot_fees.errors import ConfigError, InfeasibleFeeError
from sdot_fees.fees import (
    ScalarConvexFn,
    SplittingFee,
    conjugate_solve,
    fee_value,
    indicator_fee,
    quadratic_fee,
    restrict_part,
)
from sdot_fees.geometry import DensityField, DomainSpec, SiteSet, TransportProblem, transport_summary
from sdot_fees.oracle import (
    _feasible_samples,
    _grid_batches,
    brute_force_minimize,
    kantorovich_cost,
    scaling_ladder,
    stability_experiment,
)
from sdot_fees.solver import SolverConfig, damped_newton


def line_problem(sites, density=None, resolution=512):
    dom = DomainSpec(dim=1, bounds=((0.0, 1.0),), resolution=resolution)
    den = DensityField.uniform(dom) if density is None else DensityField.tabulated(dom, density)
    return TransportProblem(dom, den, SiteSet(np.asarray(sites, dtype=float)[:, None]))


def square_problem(sites, resolution=64):
    dom = DomainSpec(dim=2, bounds=((0.0, 1.0), (0.0, 1.0)), resolution=resolution)
    return TransportProblem(dom, DensityField.uniform(dom),
                            SiteSet(np.asarray(sites, dtype=float)))


SYM = line_problem([0.25, 0.75])
TILTED = line_problem([0.25, 0.85])


# ---------------------------------------------------------------------------
# kantorovich cost


def test_kantorovich_matches_closed_form():
    # boundary at the cdf quantile 0.5; two symmetric cubic integrals
    assert kantorovich_cost(SYM, [0.5, 0.5]) == pytest.approx(1 / 48, abs=1e-14)
    # all mass to one site: plain second moment around 0.25
    assert kantorovich_cost(SYM, [1.0, 0.0]) == pytest.approx(7 / 48, abs=1e-14)
    # boundary at 0.3: [(x-1/4)^3/3] over [0,.3] plus [(x-3/4)^3/3] over [.3,1]
    assert kantorovich_cost(SYM, [0.3, 0.7]) == pytest.approx(49 / 1200, abs=1e-14)


def test_kantorovich_validates_weights():
    with pytest.raises(ConfigError):
        kantorovich_cost(SYM, [0.5, 0.3, 0.2])
    with pytest.raises(ConfigError):
        kantorovich_cost(SYM, [0.7, 0.2])
    with pytest.raises(ConfigError):
        kantorovich_cost(SYM, [1.2, -0.2])


def test_kantorovich_2d_needs_positive_weights():
    prob = square_problem([[0.3, 0.3], [0.7, 0.6]], resolution=32)
    with pytest.raises(ConfigError):
        kantorovich_cost(prob, [1.0, 0.0])


def test_kantorovich_is_convex_along_simplex_segments():
    prob = line_problem([0.15, 0.5, 0.82])
    rng = np.random.default_rng(7)
    for _ in range(100):
        u = rng.dirichlet(np.ones(3))
        v = rng.dirichlet(np.ones(3))
        mid = 0.5 * (u + v)
        c_mid = kantorovich_cost(prob, mid)
        c_avg = 0.5 * (kantorovich_cost(prob, u) + kantorovich_cost(prob, v))
        assert c_mid <= c_avg + 1e-10


def test_laguerre_weights_achieve_their_own_cost_1d():
    prob = line_problem([0.2, 0.55, 0.9])
    for psi in ([0.0, 0.0, 0.0], [0.0, 0.03, -0.02], [0.05, -0.01, 0.0]):
        summary = transport_summary(prob, psi)
        assert kantorovich_cost(prob, summary.weights) == pytest.approx(
            summary.cost, abs=1e-12)


def test_laguerre_weights_achieve_their_own_cost_tabulated_density():
    dom = DomainSpec(dim=1, bounds=((0.0, 1.0),), resolution=512)
    ramp = 0.2 + np.linspace(0.0, 1.0, 512) ** 2
    prob = TransportProblem(dom, DensityField.tabulated(dom, ramp),
                            SiteSet(np.array([[0.3], [0.8]])))
    summary = transport_summary(prob, [0.0, 0.04])
    assert kantorovich_cost(prob, summary.weights) == pytest.approx(
        summary.cost, abs=1e-12)


def test_laguerre_weights_achieve_their_own_cost_2d():
    prob = square_problem([[0.3, 0.3], [0.7, 0.4], [0.5, 0.8]])
    summary = transport_summary(prob, [0.0, 0.0, 0.0])
    assert summary.weights.min() > 0.05
    assert kantorovich_cost(prob, summary.weights) == pytest.approx(
        summary.cost, abs=1e-7)


def test_thin_strip_matches_line():
    h = 1e-3
    dom = DomainSpec(dim=2, bounds=((0.0, 1.0), (0.0, h)), resolution=128)
    strip = TransportProblem(dom, DensityField.uniform(dom),
                             SiteSet(np.array([[0.25, h / 2], [0.75, h / 2]])))
    for w in ([0.5, 0.5], [0.3, 0.7]):
        c_line = kantorovich_cost(SYM, w)
        c_strip = kantorovich_cost(strip, w)
        assert abs(c_strip - c_line) < 1e-6


# ---------------------------------------------------------------------------
# brute force


def quad_fee(n, domain=(0.0, 1.0), centers=None, scales=None):
    centers = centers or [0.0] * n
    scales = scales or [1.0] * n
    return SplittingFee(tuple(
        quadratic_fee(domain, centers[i], scales[i]) for i in range(n)))


def test_brute_force_two_site_quadratic_frozen():
    # stationarity of int (x-1/4)^2 + int (x-.85)^2 + w^2/2 sums gives
    # 3.2 t = 1.66, so the true split is (0.51875, 0.48125)
    w = brute_force_minimize(TILTED, quad_fee(2), 1e-4)
    assert abs(w[0] - 0.51875) <= 5.1e-5
    assert w.sum() == pytest.approx(1.0, abs=1e-9)


def test_brute_force_matches_newton():
    rng = np.random.default_rng(3)
    for n in (2, 3):
        for _ in range(3):
            sites = np.sort(rng.uniform(0.05, 0.95, n))
            while np.diff(sites).min() < 0.1 if n > 1 else False:
                sites = np.sort(rng.uniform(0.05, 0.95, n))
            prob = line_problem(sites)
            fee = quad_fee(n, centers=list(rng.uniform(0.1, 0.6, n)),
                           scales=list(rng.uniform(0.5, 3.0, n)))
            w_bf = brute_force_minimize(prob, fee, 1e-3)
            psi, trace = damped_newton(prob, fee, np.zeros(n),
                                       SolverConfig(zeta=1e-11, eps=0.01))
            assert trace.status == "converged"
            w_newton = conjugate_solve(fee, psi).w
            assert np.abs(w_bf - w_newton).max() <= 2e-3


def test_brute_force_pinned_fee_returns_nearest_grid_point():
    target = np.array([0.31347, 0.68653])
    pin = SplittingFee(tuple(indicator_fee((t, t)) for t in target))
    w = brute_force_minimize(TILTED, pin, 1e-3)
    assert np.abs(w - target).max() <= 1e-3
    on_grid = np.array([0.313, 0.687])
    pin2 = SplittingFee(tuple(indicator_fee((t, t)) for t in on_grid))
    w2 = brute_force_minimize(TILTED, pin2, 1e-3)
    np.testing.assert_allclose(w2, on_grid, atol=1e-12)


def test_brute_force_2d_coarse_grid():
    prob = square_problem([[0.3, 0.3], [0.7, 0.6]], resolution=32)
    fee = quad_fee(2, centers=[0.2, 0.2])
    w = brute_force_minimize(prob, fee, 0.25)
    # zero-weight rows are excluded in 2-D, so candidates are the interior splits
    candidates = [np.array([k * 0.25, 1 - k * 0.25]) for k in (1, 2, 3)]
    best = min(candidates,
               key=lambda c: kantorovich_cost(prob, c) + fee_value(fee, c))
    np.testing.assert_allclose(w, best, atol=1e-12)


def test_grid_enumeration_is_lexicographic_and_complete():
    fee = quad_fee(3)
    rows = np.vstack(list(_grid_batches(fee, 12, 1 / 12, 1e-9)))
    assert rows.shape[0] == 91  # compositions of 12 into 3 parts
    order = np.lexsort((rows[:, 2], rows[:, 1], rows[:, 0]))
    assert np.array_equal(order, np.arange(rows.shape[0]))
    np.testing.assert_array_equal(rows.sum(axis=1), 12)


def test_brute_force_rejections():
    with pytest.raises(ConfigError):
        brute_force_minimize(TILTED, quad_fee(3), 1e-3)
    five = line_problem(np.linspace(0.1, 0.9, 5))
    with pytest.raises(ConfigError):
        brute_force_minimize(five, quad_fee(5), 0.1)
    with pytest.raises(ConfigError):
        brute_force_minimize(TILTED, quad_fee(2), 0.3)
    with pytest.raises(ConfigError):
        brute_force_minimize(TILTED, quad_fee(2), 0.0)


def test_brute_force_infeasible_grid():
    # each pin admits only k=0 on the unit-step grid, so no row sums to 1
    prob = line_problem([0.2, 0.5, 0.8])
    pins = SplittingFee(tuple(indicator_fee((t, t)) for t in (0.4, 0.4, 0.2)))
    with pytest.raises(InfeasibleFeeError):
        brute_force_minimize(prob, pins, 1.0)


# ---------------------------------------------------------------------------
# stability


def shifted_part(part, offset):
    value = part.value
    return ScalarConvexFn(
        kind="shifted", a=part.a, b=part.b,
        value=lambda x: np.asarray(value(x), dtype=float) + offset,
        deriv=part.deriv, deriv2=part.deriv2, inv_deriv=part.inv_deriv,
        params={"offset": offset},
    )


def test_stability_value_form_frozen():
    fee1 = quad_fee(2, domain=(0.05, 1.0), centers=[0.2, 0.2])
    fee2 = quad_fee(2, domain=(0.05, 1.0), centers=[0.2, 0.2], scales=[1.3, 1.3])
    rep = stability_experiment(TILTED, fee1, fee2)
    assert rep.kind == "value"
    assert rep.methods == ("newton", "newton")
    # sup of 0.15 [(w1-.2)^2 + (w2-.2)^2] on the simplex slice, at (0.95, 0.05)
    assert rep.perturbation == pytest.approx(0.08775, rel=1e-9)
    assert 0.0 < rep.distance < 0.05
    assert np.isfinite(rep.fitted_constant) and rep.fitted_constant > 0
    assert rep.modulus_estimate is None
    assert "sup|F1-F2|" in rep.bound_form


def test_stability_identical_fees_zero_drift():
    fee = quad_fee(2, domain=(0.05, 1.0), centers=[0.3, 0.1])
    rep = stability_experiment(TILTED, fee, fee)
    assert rep.distance == 0.0
    assert rep.perturbation == 0.0
    assert rep.fitted_constant == 0.0


def test_stability_additive_constant_keeps_minimizer():
    fee1 = quad_fee(2, domain=(0.05, 1.0), centers=[0.25, 0.4])
    fee2 = SplittingFee(tuple(shifted_part(p, 0.7) for p in fee1.parts))
    rep = stability_experiment(TILTED, fee1, fee2)
    assert rep.kind == "value"
    assert rep.perturbation == pytest.approx(1.4, rel=1e-12)
    assert rep.distance <= 1e-9
    assert rep.fitted_constant <= 1e-15


def test_stability_domain_form_frozen():
    fee1 = SplittingFee((indicator_fee((0.2, 0.5)), indicator_fee((0.4, 0.9))))
    fee2 = SplittingFee((indicator_fee((0.25, 0.55)), indicator_fee((0.35, 0.85))))
    rep = stability_experiment(TILTED, fee1, fee2, grid_step=1e-3)
    assert rep.kind == "domain"
    assert rep.methods == ("brute-force", "brute-force")
    # feasible sets are the segments w1 in [.2,.5] and [.25,.55] on the
    # simplex line; the free optimum for sites .25/.85 sits at w1 = 0.55,
    # so both runs clamp to their upper edge: the hausdorff gap and the
    # minimizer drift both equal 0.05 sqrt(2)
    assert rep.perturbation == pytest.approx(0.05 * np.sqrt(2), rel=1e-9)
    assert rep.distance == pytest.approx(0.05 * np.sqrt(2), rel=1e-6)
    assert rep.modulus_estimate == 0.0
    assert rep.fitted_constant > 0


def test_stability_truncation_pair_keeps_minimizer():
    fee1 = quad_fee(2, domain=(0.01, 0.99), centers=[0.3, 0.6],
                    scales=[2.0, 1.5])
    fee2 = SplittingFee(tuple(restrict_part(p, 0.05, 0.95) for p in fee1.parts))
    rep = stability_experiment(TILTED, fee1, fee2)
    assert rep.kind == "domain"
    assert rep.methods == ("newton", "newton")
    assert rep.distance <= 1e-8


def test_quadratic_growth_around_minimizer():
    fee = quad_fee(2, domain=(0.05, 0.95), centers=[0.3, 0.5],
                   scales=[2.0, 2.0])
    psi, trace = damped_newton(TILTED, fee, np.zeros(2),
                               SolverConfig(zeta=1e-12, eps=0.04))
    w_star = conjugate_solve(fee, psi).w
    j_star = kantorovich_cost(TILTED, w_star) + fee_value(fee, w_star)
    direction = np.array([1.0, -1.0]) / np.sqrt(2.0)
    kappas = []
    for t in (0.01, 0.02, 0.05, -0.01, -0.02, -0.05):
        w = w_star + t * direction
        gap = kantorovich_cost(TILTED, w) + fee_value(fee, w) - j_star
        assert gap > 0
        kappas.append(gap / t ** 2)
    kappas = np.array(kappas)
    assert kappas.min() > 0.5
    assert kappas.min() > 0.25 * kappas.max()


def test_feasible_samples_cover_pinned_fee():
    pins = SplittingFee(tuple(indicator_fee((t, t)) for t in (0.3, 0.3, 0.4)))
    pts = _feasible_samples(pins, 0.01)
    assert pts.shape[0] >= 1
    np.testing.assert_allclose(pts.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(pts[0], [0.3, 0.3, 0.4], atol=1e-12)


def test_scaling_ladder_sqrt_consistency():
    fee = SplittingFee((
        quadratic_fee((0.05, 1.0), 0.15, 3.0),
        quadratic_fee((0.05, 1.0), 0.55, 2.0),
    ))
    lad = scaling_ladder(TILTED, fee)
    assert lad.scales == (0.04, 0.01, 0.0025)
    assert lad.predicted_ratios == (2.0, 2.0)
    assert lad.sqrt_consistent
    # smooth strongly convex response is linear in s, the extreme case the
    # window still accepts: ratios sit near (s_k/s_k+1) = 4
    assert all(3.0 < r < 4.05 for r in lad.ratios)
    assert lad.distances[0] > lad.distances[1] > lad.distances[2] > 0
    assert all(r.kind == "value" for r in lad.reports)


def test_scaling_ladder_rejects_bad_scales():
    fee = quad_fee(2, domain=(0.05, 1.0))
    with pytest.raises(ConfigError):
        scaling_ladder(TILTED, fee, scales=(0.01,))
    with pytest.raises(ConfigError):
        scaling_ladder(TILTED, fee, scales=(0.04, -0.01))
