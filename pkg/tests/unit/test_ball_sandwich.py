import math

import numpy as np
import pytest

from blowup.ball_sandwich import (build_bracketing_pair, calG_growth_bound, dirichlet_monotone_solve, extract_limit,
                                  solve_balls)
from blowup.condition_checker import ConditionVerdict, HypothesisError
from blowup.dual_transform import DualTransform, ProblemParams
from blowup.problem_model import Nonlinearity, Potential, RadialProfile
from blowup.radial_solver import RadialGrid, picard_solve


@pytest.fixture(scope="module")
def sandwich_setup():
    params = ProblemParams(2, 0.51, 3)
    a = Potential("radial_times_angular", 3, RadialProfile("constant", 1.0), RadialProfile("inverse_power", 1.0, 5.0))
    g = Nonlinearity("power", exponent=0.1, delta=0.1)
    return params, a, g, DualTransform(params)


@pytest.fixture(scope="module")
def planar():
    params = ProblemParams(2, 0.6, 2)
    a = Potential("radial_profile", 2, RadialProfile("constant", 1.0))
    g = Nonlinearity("power", exponent=0.5)
    dual = DualTransform(params)
    sub, sup, report = build_bracketing_pair(params, a, g, dual, 1.0, 0.5, r_max=8.0, grid=RadialGrid(8.0, 1024))
    return params, a, g, dual, sub, sup, report


@pytest.fixture(scope="module")
def planar_wide():
    params = ProblemParams(2, 0.6, 2)
    a = Potential("radial_profile", 2, RadialProfile("constant", 1.0))
    g = Nonlinearity("power", exponent=0.5)
    dual = DualTransform(params)
    sub, sup, _ = build_bracketing_pair(params, a, g, dual, 2.0, 0.5, r_max=22.0, grid=RadialGrid(22.0, 4096))
    return params, a, g, dual, sub, sup


@pytest.mark.sandwich
def test_bracketing_pair_is_ordered(sandwich_setup):
    """Ensure w_β stays above w_α and β = α + ε + H̄."""
    params, a, g, dual = sandwich_setup
    _, _, report = build_bracketing_pair(params, a, g, dual, 1.0, 0.5, r_max=20.0)
    assert report.ordered
    assert math.isinf(report.S_beta) and report.S_beta_label.startswith("infinity")
    assert report.beta == pytest.approx(1.5 + report.hbar)
    assert report.hbar > 0
    assert report.to_dict()["violations"] == 0


@pytest.mark.sandwich
def test_beta_below_alpha_is_caught_at_origin(sandwich_setup):
    """a forced β < α is reported as a violation at r = 0."""
    params, a, g, dual = sandwich_setup
    _, _, report = build_bracketing_pair(params, a, g, dual, 1.0, 0.5, r_max=20.0, beta=0.5)
    assert not report.ordered
    assert report.violation_radii[0] == 0.0
    assert report.S_beta == 0.0
    assert report.min_gap < 0


@pytest.mark.sandwich
def test_sandwich_requires_p_at_least_two():
    """p < 2 is rejected before any solve."""
    params = ProblemParams(1.5, 0.6, 3)
    a = Potential("radial_profile", 3, RadialProfile("constant", 1.0))
    with pytest.raises(HypothesisError):
        build_bracketing_pair(params, a, Nonlinearity("power", exponent=0.5), DualTransform(params), 1.0, 0.5)


@pytest.mark.sandwich
def test_invalid_alpha_or_epsilon(sandwich_setup):
    """ε = 0 should raise ValueError."""
    params, a, g, dual = sandwich_setup
    with pytest.raises(ValueError):
        build_bracketing_pair(params, a, g, dual, 1.0, 0.0, hbar=0.0)


@pytest.mark.sandwich
def test_growth_majorant_for_square_root_nonlinearity():
    """For g = √s the majorant reduces to 4r⁴ and dominates w_α."""
    params = ProblemParams(2, 0.6, 3)
    a = Potential("radial_profile", 3, RadialProfile("constant", 1.0))
    g = Nonlinearity("power", exponent=0.5)
    w_alpha = picard_solve(params, a.lower, g, DualTransform(params), 2.0, 20.0, grid=RadialGrid(20.0, 1024))
    report = calG_growth_bound(w_alpha, a, g, params)
    assert math.isnan(report.majorant[0])
    np.testing.assert_allclose(report.majorant[1:], 4.0 * report.radii[1:] ** 4, rtol=1e-8)
    assert w_alpha.w[-1] < report.majorant[-1]
    assert report.crossover <= 20.0
    assert list(report.to_frame().columns) == ["r", "majorant"]


@pytest.mark.ball
def test_ball_solution_matches_radial_profile(planar):
    """With a radial potential the ball solution reproduces w_α."""
    params, a, g, dual, sub, sup, report = planar
    assert report.hbar == 0.0 and report.ordered
    ball = dirichlet_monotone_solve(params, a, g, dual, 5.0, sub, sup, 0.1)
    assert ball.sandwich_ok
    R = np.hypot(*np.meshgrid(ball.coords, ball.coords, indexing="ij"))
    exact = sub.interpolate(R[ball.inside])
    assert np.max(np.abs(ball.field[ball.inside] - exact) / (1.0 + exact)) <= 1e-2
    assert ball.value_at([0.0, 0.0])[0] == pytest.approx(1.0, abs=1e-2)
    assert len(ball.to_frame()) == int(ball.inside.sum())


@pytest.mark.ball
def test_probe_outside_the_ball_is_rejected(planar):
    """value_at refuses points outside the disc."""
    params, a, g, dual, sub, sup, _ = planar
    ball = dirichlet_monotone_solve(params, a, g, dual, 2.0, sub, sup, 0.2)
    with pytest.raises(ValueError):
        ball.value_at([2.5, 0.0])


@pytest.mark.ball
def test_ball_solver_rejects_unsupported_setups(planar, sandwich_setup):
    """Short profiles, oversized meshes and N = 3 are refused."""
    params, a, g, dual, sub, sup, _ = planar
    with pytest.raises(ValueError, match="profiles end"):
        dirichlet_monotone_solve(params, a, g, dual, 12.0, sub, sup, 0.5)
    with pytest.raises(ValueError):
        dirichlet_monotone_solve(params, a, g, dual, 2.0, sub, sup, 3.0)
    spatial, a3, g3, dual3 = sandwich_setup
    with pytest.raises(ValueError, match="N = 2"):
        dirichlet_monotone_solve(spatial, a3, g3, dual3, 2.0, sub, sup, 0.2)


@pytest.mark.ball
def test_limit_stabilises_along_growing_balls(planar):
    """extract_limit orders balls by radius and tabulates Cauchy differences."""
    params, a, g, dual, sub, sup, _ = planar
    balls = solve_balls(params, a, g, dual, [4.0, 2.0, 3.0], sub, sup, 0.2)
    assert [b.n for b in balls] == [2.0, 3.0, 4.0]
    limit = extract_limit(balls, [[0.0, 0.0], [0.5, 0.5]], tol=1e-2)
    assert limit.cauchy_ok
    assert len(limit.frame) == 6
    assert math.isnan(limit.frame["cauchy_diff"].iloc[0])
    with pytest.raises(ValueError):
        extract_limit(balls[:2], [[0.0, 0.0]])


@pytest.mark.sandwich
def test_canonical_bracketing_pair_stays_ordered(sandwich_setup):
    """α = 2, ε = 0.5 on [0, 100]: w_β stays strictly above w_α and the majorant takes over."""
    params, a, g, dual = sandwich_setup
    w_alpha, w_beta, report = build_bracketing_pair(params, a, g, dual, 2.0, 0.5, r_max=100.0)
    assert report.hbar == pytest.approx(0.21596, rel=1e-2)
    assert report.beta == pytest.approx(2.5 + report.hbar)
    assert report.min_gap > 0
    assert report.violation_radii == [] and math.isinf(report.S_beta)
    assert np.all(w_beta.w > w_alpha.w)
    bound = calG_growth_bound(w_alpha, a, g, params)
    assert 0 < bound.crossover <= 100.0


@pytest.mark.sandwich
def test_hbar_horizon_is_passed_to_the_classifier(sandwich_setup, monkeypatch):
    """The H̄ truncation radius reaches compute_Hbar instead of its default."""
    params, a, g, dual = sandwich_setup
    seen = {}

    def fake_hbar(a, g, params, r_max=1e6):
        seen["r_max"] = r_max
        return ConditionVerdict("oscillation_Hbar", "holds", [], -2.0, hbar_value=0.25, tail="convergent")

    monkeypatch.setattr("blowup.ball_sandwich.compute_Hbar", fake_hbar)
    _, _, report = build_bracketing_pair(params, a, g, dual, 1.0, 0.5, r_max=10.0, grid=RadialGrid(10.0, 512),
                                         hbar_r_max=1e4)
    assert seen["r_max"] == 1e4
    assert report.beta == pytest.approx(1.75)


@pytest.mark.ball
def test_ball_solve_converges_at_second_order(planar_wide):
    """Interior error against the radial profile on B_10 drops like h² from h = 0.1 to h = 0.05."""
    params, a, g, dual, sub, sup = planar_wide
    errors = []
    for h in (0.1, 0.05):
        ball = dirichlet_monotone_solve(params, a, g, dual, 10.0, sub, sup, h)
        assert ball.sandwich_ok
        R = np.hypot(*np.meshgrid(ball.coords, ball.coords, indexing="ij"))
        exact = sub.interpolate(R[ball.inside])
        errors.append(float(np.max(np.abs(ball.field[ball.inside] - exact) / (1.0 + np.abs(exact)))))
    assert math.log2(errors[0] / errors[1]) >= 1.8
    assert errors[1] < 1e-3


@pytest.mark.ball
def test_nested_balls_agree_at_interior_points(planar_wide):
    """Values at fixed points change by at most 1e-3 along n = 5, 10, 20."""
    params, a, g, dual, sub, sup = planar_wide
    balls = solve_balls(params, a, g, dual, [5.0, 10.0, 20.0], sub, sup, 0.1)
    assert all(b.sandwich_ok for b in balls)
    limit = extract_limit(balls, [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], tol=1e-3)
    assert limit.cauchy_ok and all(limit.stabilised)
    assert limit.frame["cauchy_diff"].max() <= 1e-3


@pytest.mark.ball
def test_limit_requires_small_final_difference(planar):
    """A last difference above the tolerance leaves the point unstabilised."""
    params, a, g, dual, sub, sup, _ = planar
    balls = solve_balls(params, a, g, dual, [2.0, 3.0, 4.0], sub, sup, 0.2)
    limit = extract_limit(balls, [[0.0, 0.0]], tol=1e-14)
    assert limit.stabilised == [False]
    assert not limit.cauchy_ok


@pytest.mark.ball
def test_lagged_diffusivity_for_p_three():
    """p = 3 runs the frozen-coefficient iteration and still lands on the radial profile."""
    params = ProblemParams(3, 0.6, 2)
    a = Potential("radial_profile", 2, RadialProfile("constant", 1.0))
    g = Nonlinearity("power", exponent=0.5)
    dual = DualTransform(params)
    sub, sup, _ = build_bracketing_pair(params, a, g, dual, 1.0, 0.5, r_max=6.0, grid=RadialGrid(6.0, 1024))
    ball = dirichlet_monotone_solve(params, a, g, dual, 3.0, sub, sup, 0.2, tol=1e-6)
    assert ball.sandwich_ok
    assert ball.iterations > 1
    R = np.hypot(*np.meshgrid(ball.coords, ball.coords, indexing="ij"))
    exact = sub.interpolate(R[ball.inside])
    assert np.max(np.abs(ball.field[ball.inside] - exact) / (1.0 + exact)) <= 5e-2
