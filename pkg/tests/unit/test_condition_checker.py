import math

import numpy as np
import pytest

from blowup.condition_checker import (IntegrandDataError, ProbeSchedule, check_growth_g, check_keller_osserman,
                                      check_potential_divergence, classify_improper_integral, compute_Hbar,
                                      hypothesis_matrix, local_hbar)
from blowup.dual_transform import ProblemParams
from blowup.problem_model import Nonlinearity, Potential, RadialProfile


@pytest.fixture
def quadratic():
    return ProblemParams(2, 0.6, 3)


@pytest.fixture
def sandwich_params():
    return ProblemParams(2, 0.51, 3)


@pytest.fixture
def angular_potential():
    return Potential("radial_times_angular", 3, RadialProfile("constant", 1.0),
                     RadialProfile("inverse_power", 1.0, 5.0))


@pytest.mark.conditions
def test_classifier_separates_power_tails():
    """Test that s^-0.5 diverges and s^-2 converges with the right exponent."""
    divergent = classify_improper_integral(lambda t: t ** -0.5, mode="divergent_expected")
    convergent = classify_improper_integral(lambda t: t ** -2.0, mode="divergent_expected")
    assert divergent.tail == "divergent" and divergent.holds
    assert convergent.tail == "convergent" and convergent.verdict == "fails"
    assert convergent.fitted_tail_exponent == pytest.approx(-2.0, abs=0.05)


@pytest.mark.conditions
def test_log_divergence_is_not_called_convergent():
    """Logarithmic divergence must not be reported as convergent."""
    verdict = classify_improper_integral(lambda t: 1.0 / t, mode="divergent_expected")
    assert verdict.tail == "divergent"
    slow = classify_improper_integral(lambda t: 1.0 / (t * np.log(t)), ProbeSchedule(r0=2.0),
                                      mode="divergent_expected")
    assert slow.tail != "convergent"


@pytest.mark.conditions
def test_classifier_is_order_consistent():
    """A larger integrand is never classified as more convergent."""
    small = classify_improper_integral(lambda t: 0.1 / t, mode="unknown")
    large = classify_improper_integral(lambda t: 1.0 / t ** 0.9, mode="unknown")
    assert small.tail == "divergent"
    assert large.tail != "convergent"
    assert small.verdict == "inconclusive"


@pytest.mark.conditions
def test_negative_integrand_raises():
    """Negative integrand values raise with their abscissa."""
    with pytest.raises(IntegrandDataError) as exc:
        classify_improper_integral(lambda t: np.sin(t))
    assert exc.value.abscissa is not None


@pytest.mark.conditions
def test_probe_frame_has_one_row_per_radius():
    """One probe row per radius, with partial integrals of s^-2."""
    schedule = ProbeSchedule(n_probes=10)
    verdict = classify_improper_integral(lambda t: t ** -2.0, schedule)
    frame = verdict.probe_frame()
    assert list(frame.columns) == ["R", "I"]
    assert len(frame) == 11
    assert frame["I"].iloc[-1] == pytest.approx(1.0 - 1.0 / 1024.0, rel=1e-10)


@pytest.mark.conditions
@pytest.mark.parametrize("exponent, verdict", [(1.0, "holds"), (0.5, "holds"), (0.1, "holds"), (3.0, "fails")])
def test_keller_osserman_condition(exponent, verdict):
    """Keller–Osserman verdicts for power nonlinearities."""
    params = ProblemParams(2, 0.6, 3)
    result = check_keller_osserman(Nonlinearity("power", exponent=exponent), params)
    assert result.verdict == verdict


@pytest.mark.conditions
def test_growth_condition_for_exact_power(quadratic):
    """g = s^{2γ(2γ−1)} holds with liminf 1; a slower power fails."""
    g = Nonlinearity("power", exponent=quadratic.growth_exponent)
    verdict = check_growth_g(g, quadratic)
    assert verdict.holds
    assert verdict.details["liminf_estimate"] == pytest.approx(1.0)
    assert check_growth_g(Nonlinearity("power", exponent=0.1), quadratic).verdict == "fails"


@pytest.mark.conditions
def test_potential_divergence(quadratic):
    """Constant and slowly decaying potentials diverge, fast decay fails."""
    assert check_potential_divergence(lambda r: np.ones_like(r), quadratic).holds
    decaying = check_potential_divergence(lambda r: (1.0 + r) ** -4.0, quadratic)
    assert decaying.verdict == "fails"
    borderline = check_potential_divergence(lambda r: (1.0 + r) ** -2.0, quadratic)
    assert borderline.verdict == "holds"
    assert [v.condition_id for v in borderline.related] == ["lair_1_4"]
    assert borderline.related[0].tail == "divergent"


@pytest.mark.conditions
def test_hbar_is_zero_for_radial_potential(quadratic):
    """Radial potentials have no oscillation, so H̄ = 0."""
    a = Potential("radial_profile", 3, RadialProfile("constant", 2.0))
    g = Nonlinearity("power", exponent=0.5)
    verdict = compute_Hbar(a, g, quadratic)
    assert verdict.holds and verdict.hbar_value == 0.0
    assert local_hbar(a, g, quadratic, 10.0) == 0.0


@pytest.mark.conditions
def test_hbar_finite_for_decaying_oscillation(sandwich_params, angular_potential):
    """H̄ is finite and bounds every truncated budget."""
    g = Nonlinearity("power", exponent=0.1, delta=0.1)
    verdict = compute_Hbar(angular_potential, g, sandwich_params)
    assert verdict.holds
    assert 0.0 < verdict.hbar_value < math.inf
    assert verdict.details["tail_estimate"] >= 0.0
    assert local_hbar(angular_potential, g, sandwich_params, 10.0) <= verdict.hbar_value


@pytest.mark.conditions
def test_hypothesis_matrix_for_sandwich_config(sandwich_params, angular_potential):
    """Sandwich hypotheses hold for the decaying angular potential."""
    g = Nonlinearity("power", exponent=0.1, delta=0.1)
    report = hypothesis_matrix(sandwich_params, g, angular_potential)
    assert report.sandwich_ok
    assert not report.radial_family_ok
    assert report.checks["delta_admissible"] and report.checks["delta_monotone"]
    assert set(report.verdict_frame()["condition"]) >= {"KO_G", "growth_g", "potential_div", "oscillation_Hbar"}


@pytest.mark.conditions
def test_pure_power_incompatibility_is_flagged():
    """γ = 1 with a pure power g is flagged as incompatible."""
    params = ProblemParams(2, 1.0, 3)
    a = Potential("radial_profile", 3, RadialProfile("constant", 1.0))
    report = hypothesis_matrix(params, Nonlinearity("power", exponent=0.5), a)
    assert any("pure power" in flag for flag in report.flags)
    assert not report.radial_family_ok


@pytest.mark.conditions
def test_radial_family_gate_for_canonical_config(quadratic):
    """The canonical radial configuration opens the radial gate."""
    a = Potential("radial_profile", 3, RadialProfile("constant", 1.0))
    report = hypothesis_matrix(quadratic, Nonlinearity("power", exponent=0.5), a)
    assert report.radial_family_ok
    assert report.to_dict()["verdicts"]["oscillation_Hbar"]["hbar_value"] == 0.0


@pytest.mark.conditions
def test_hbar_fails_in_the_plane():
    """With N = 2 the oscillation integral over the whole plane diverges."""
    params = ProblemParams(2, 0.51, 2)
    a = Potential("radial_times_angular", 2, RadialProfile("constant", 1.0), RadialProfile("inverse_power", 1.0, 4.0))
    verdict = compute_Hbar(a, Nonlinearity("power", exponent=0.1, delta=0.1), params)
    assert verdict.verdict == "fails"
    assert verdict.hbar_value == math.inf


@pytest.mark.conditions
def test_hbar_without_a_summable_tail_is_inconclusive(sandwich_params, angular_potential, monkeypatch):
    """A tail decaying slower than 1/s past r_max never yields a finite H̄ verdict."""
    def slow_samples(a, g, params, horizon, per_decade=40, order=8):
        nodes = np.geomspace(1.0, horizon, 200)
        return nodes, np.gradient(nodes), nodes ** -0.5

    monkeypatch.setattr("blowup.condition_checker._hbar_samples", slow_samples)
    verdict = compute_Hbar(angular_potential, Nonlinearity("power", exponent=0.1, delta=0.1), sandwich_params)
    assert verdict.tail == "convergent"
    assert verdict.verdict == "inconclusive"
    assert not verdict.holds
    assert verdict.hbar_value == math.inf
    assert "1/s" in verdict.details["reason"]
