import math

import numpy as np
import pytest

from blowup.dual_transform import (DualTransform, ParameterError, ProblemParams, TransformDomainError,
                                   TransformRangeError, asymptotic_A, asymptotic_ratio, f_eval, f_inverse,
                                   f_prime, f_second, ode_crosscheck, verify_properties)


def closed_form_inverse(z):
    # antiderivative of sqrt(1 + 2 z^2), the p=2, γ=1 integrand
    return 0.5 * z * math.sqrt(1.0 + 2.0 * z * z) + math.asinh(math.sqrt(2.0) * z) / (2.0 * math.sqrt(2.0))


@pytest.fixture(scope="module")
def quadratic():
    return ProblemParams(2, 1.0, 3)


@pytest.fixture(scope="module")
def dual(quadratic):
    return DualTransform(quadratic)


@pytest.mark.transform
@pytest.mark.parametrize("p, gamma, N, field", [
    (1.0, 1.0, 3, "p"),
    (2.0, 0.5, 3, "gamma"),
    (2.0, 1.0, 0, "N"),
    (2.0, 1.0, 2.5, "N"),
])
def test_problem_params_rejects_out_of_range(p, gamma, N, field):
    """Out-of-range p, γ or N raise with the offending field."""
    with pytest.raises(ParameterError) as exc:
        ProblemParams(p, gamma, N)
    assert exc.value.field == field


@pytest.mark.transform
def test_gamma_message_names_the_bound():
    """The γ error message states the bound."""
    with pytest.raises(ParameterError, match="γ > 1/2 required"):
        ProblemParams(2, 0.5, 3)


@pytest.mark.transform
def test_inverse_matches_closed_form(quadratic, dual):
    """f⁻¹ matches the closed form for p = 2, γ = 1."""
    expected = closed_form_inverse(1.0)
    assert expected == pytest.approx(1.2712735, abs=1e-6)
    assert f_inverse(quadratic, 1.0) == pytest.approx(expected, abs=1e-9)
    assert dual.inverse(1.0) == pytest.approx(expected, abs=1e-9)
    assert dual.inverse(7.5) == pytest.approx(closed_form_inverse(7.5), rel=1e-10)


@pytest.mark.transform
def test_inverse_is_odd_and_vectorised(dual):
    """f⁻¹ is odd and keeps array shape."""
    u = np.array([-3.0, -0.25, 0.0, 0.25, 3.0])
    values = dual.inverse(u)
    assert values.shape == u.shape
    assert values[2] == 0.0
    assert values[0] == pytest.approx(-values[4], abs=1e-14)
    assert values[1] == pytest.approx(-values[3], abs=1e-14)


@pytest.mark.transform
def test_f_near_origin_is_identity(dual):
    """f(t) ≈ t near the origin."""
    assert dual.f(1e-6) == pytest.approx(1e-6, abs=1e-12)
    assert dual.f(0.0) == 0.0


@pytest.mark.transform
def test_round_trip_over_log_grid(dual):
    """f and f⁻¹ invert each other across twelve decades."""
    t = np.geomspace(1e-6, 1e8, 200)
    back = dual.inverse(dual.f(t))
    assert np.max(np.abs(back - t)) <= 1e-7
    u = np.geomspace(1e-4, 1e3, 50)
    np.testing.assert_allclose(dual.f(dual.inverse(u)), u, rtol=0, atol=10 * dual.accuracy_target * 1e3)


@pytest.mark.transform
def test_large_t_asymptotics(quadratic, dual):
    """f(t) follows the power envelope for large t."""
    A = asymptotic_A(quadratic)
    assert A == pytest.approx(1.189207, abs=1e-6)
    assert dual.f(1e8) == pytest.approx(A * 1e4, rel=1e-3)
    assert dual.fprime(1e8) * dual.f(1e8) == pytest.approx(2 ** -0.5, abs=1e-3)
    assert asymptotic_ratio(quadratic, 1e8) == pytest.approx(A, abs=1e-3)


@pytest.mark.transform
def test_reference_evaluators_agree_with_table(quadratic, dual):
    """Direct evaluators agree with the tabulated transform."""
    for t in (0.3, 2.0, 45.0):
        assert f_eval(quadratic, t) == pytest.approx(dual.f(t), abs=1e-9)
        assert f_prime(quadratic, t) == pytest.approx(dual.fprime(t), abs=1e-9)
        assert f_second(quadratic, t) == pytest.approx(dual.fsecond(t), rel=1e-6)
    assert dual.fsecond(2.0) < 0 < dual.fsecond(-2.0)


@pytest.mark.transform
def test_f_is_odd(dual):
    """Ensure f(−t) = −f(t) exactly."""
    t = np.array([0.5, 3.0, 1e4])
    np.testing.assert_array_equal(dual.f(-t), -dual.f(t))


@pytest.mark.transform
def test_non_finite_arguments_raise(dual):
    """NaN, infinite and out-of-range arguments raise."""
    with pytest.raises(TransformDomainError):
        dual.f(float("nan"))
    with pytest.raises(TransformDomainError):
        dual.inverse(np.array([1.0, np.inf]))
    with pytest.raises(TransformRangeError):
        dual.f(1e301)
    with pytest.raises(TransformDomainError):
        asymptotic_ratio(dual.params, 0.0)


@pytest.mark.transform
def test_values_past_the_table_use_reference_paths(quadratic):
    """Arguments beyond the table fall back to direct evaluation."""
    small = DualTransform(quadratic, t_max=1e3)
    assert small.table_limit < 1e6
    A = asymptotic_A(quadratic)
    assert small.f(1e6) == pytest.approx(A * 1e3, rel=1e-3)


@pytest.mark.transform
def test_ode_crosscheck_agrees(dual):
    """The tabulated f agrees with an independent ODE integration."""
    assert ode_crosscheck(dual, t_max=50.0) <= 1e-8


@pytest.mark.transform
def test_all_properties_hold_for_quadratic_case(quadratic, dual):
    """All ten properties hold for p = 2, γ = 1."""
    grid = np.geomspace(1e-6, 1e8, 57)
    report = verify_properties(quadratic, np.concatenate((-grid[::-1], [0.0], grid)), 1.0, dual=dual)
    assert report.passed == 10, report.summary_frame().to_string()
    assert report.all_passed
    assert list(report.summary_frame()["name"])[0] == "well_posed"
    assert report.to_dict()["total"] == 10


@pytest.mark.transform
def test_delta_below_floor_is_rejected(quadratic, dual):
    """δ below 2γ − 1 is rejected."""
    with pytest.raises(ParameterError):
        verify_properties(quadratic, [1.0, 2.0], 0.5, dual=dual)


@pytest.mark.transform
def test_weighted_slope_reports_sharp_bound_for_small_gamma():
    """For γ < 1 the weighted slope check reports the sharp bound."""
    params = ProblemParams(2, 0.6, 3)
    report = verify_properties(params, np.geomspace(1e-6, 1e8, 57), 0.2)
    check = report.checks["weighted_slope_bound"]
    assert check.passed
    assert "exceeds" in check.detail
    assert report.table["weighted_slope"].max() <= (1.2) ** -0.5 + 1e-9


@pytest.mark.transform
@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
@pytest.mark.parametrize("gamma", [0.6, 1.0, 2.0])
def test_properties_hold_across_parameter_matrix(p, gamma):
    """All ten properties pass for every (p, γ) pair at the smallest admissible δ."""
    params = ProblemParams(p, gamma, 3)
    grid = np.geomspace(1e-6, 1e8, 57)
    report = verify_properties(params, np.concatenate((-grid[::-1], [0.0], grid)), 2.0 * gamma - 1.0)
    assert report.passed == 10, report.summary_frame().to_string()
    assert report.checks["unit_slope_at_origin"].passed
    assert report.checks["asymptotic_ratio"].passed
