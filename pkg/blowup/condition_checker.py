import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import statsmodels.api as sm

from blowup.dual_transform import ProblemParams
from blowup.problem_model import (InvertibilityError, Nonlinearity, Potential, calG_inverse,
                                  screen_calG)
from blowup.quadrature import cumulative_integral, gauss_legendre, panel_nodes, panel_sums

logger = logging.getLogger("ConditionChecker")
logger.setLevel(logging.INFO)
if not logger.handlers:
    handler = logging.FileHandler("condition_checker.log", mode="a", encoding="utf-8")
    handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(message)s'))
    logger.addHandler(handler)

CONDITION_IDS = ("KO_G", "growth_g", "potential_div", "oscillation_Hbar", "lair_1_4")
MODES = ("divergent_expected", "convergent_expected", "unknown")


class IntegrandDataError(ValueError):
    def __init__(self, message, abscissa=None):
        super().__init__(message)
        self.abscissa = abscissa


class DegenerateNonlinearityError(ValueError):
    pass


class HypothesisError(RuntimeError):
    def __init__(self, message, verdict=None):
        super().__init__(message)
        self.verdict = verdict


@dataclass
class ProbeSchedule:
    """Geometric probe radii R_k = r0·ratio^k, k = 0..n_probes, with an
    optional head [lower, r0] integrated before the first probe."""
    r0: float = 1.0
    ratio: float = 2.0
    n_probes: int = 40
    lower: Optional[float] = None
    sub_panels: int = 16
    gl_order: int = 8
    margin: float = 0.05
    flat_tol: float = 0.01
    fit_window: int = 8
    min_probes: int = 6

    @property
    def radii(self) -> np.ndarray:
        return self.r0 * self.ratio ** np.arange(self.n_probes + 1)

    def edges(self) -> Tuple[np.ndarray, int]:
        """Panel edges and the index of the edge sitting at r0."""
        radii = self.radii
        lower = self.r0 if self.lower is None else self.lower
        if lower > self.r0:
            raise ValueError("integration start must not exceed the first probe radius")
        head = np.zeros(0)
        if lower < self.r0:
            if lower > 0:
                head = np.geomspace(lower, self.r0, self.sub_panels + 1)[:-1]
            else:
                head = np.linspace(lower, self.r0, self.sub_panels + 1)[:-1]
        body = [np.geomspace(a, b, self.sub_panels + 1)[:-1] for a, b in zip(radii[:-1], radii[1:])]
        edges = np.concatenate([head] + body + [radii[-1:]])
        return edges, head.size


@dataclass
class ConditionVerdict:
    condition_id: str
    verdict: str
    probe_values: List[Tuple[float, float]]
    fitted_tail_exponent: float
    hbar_value: Optional[float] = None
    tail: str = "inconclusive"
    tail_stderr: float = math.nan
    divergence_score: float = math.nan
    expected: str = "unknown"
    details: Dict[str, Any] = field(default_factory=dict)
    related: List["ConditionVerdict"] = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return self.verdict == "holds"

    def probe_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.probe_values, columns=["R", "I"])

    def to_dict(self) -> dict:
        out = asdict(self)
        out["probe_values"] = [list(pair) for pair in self.probe_values]
        out["related"] = [v.to_dict() for v in self.related]
        return out


def _verdict_for(tail: str, mode: str) -> str:
    if mode == "divergent_expected":
        return "holds" if tail == "divergent" else ("fails" if tail == "convergent" else "inconclusive")
    if mode == "convergent_expected":
        return "holds" if tail == "convergent" else ("fails" if tail == "divergent" else "inconclusive")
    return "inconclusive"


def _ols_slope(x: np.ndarray, y: np.ndarray) -> Tuple[float, float, float]:
    fit = sm.OLS(y, sm.add_constant(x)).fit()
    stderr = float(fit.bse[1]) if np.isfinite(fit.bse[1]) else math.nan
    return float(fit.params[1]), float(fit.params[0]), stderr


def classify_improper_integral(integrand: Callable[[np.ndarray], np.ndarray], schedule: Optional[ProbeSchedule] = None,
                               mode: str = "unknown", condition_id: str = "improper_integral") -> ConditionVerdict:
    """Classify ∫ integrand from the schedule's start to ∞ as divergent or convergent.

    ``integrand`` receives one sorted array of abscissae covering the whole
    range, so it may carry running inner integrals across its argument.
    The tail exponent is fitted by least squares on log increments over the
    last probes: increments growing or flat mean divergence, increments
    decaying geometrically mean convergence.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode '{mode}'")
    schedule = schedule or ProbeSchedule()
    edges, head_panels = schedule.edges()
    nodes, weights = panel_nodes(edges, schedule.gl_order)
    values = np.asarray(integrand(nodes), dtype=float)
    bad = ~np.isfinite(values) | (values < 0)
    if bad.any():
        x = float(nodes[np.argmax(bad)])
        raise IntegrandDataError(f"{condition_id}: integrand negative or non-finite at {x:.6g}", x)

    per_panel = panel_sums(values, weights, edges.size - 1)
    running = np.concatenate(([0.0], np.cumsum(per_panel)))
    at_probes = running[head_panels::schedule.sub_panels]
    radii = schedule.radii
    probe_values = [(float(r), float(v)) for r, v in zip(radii, at_probes)]

    increments = np.diff(at_probes)
    verdict = ConditionVerdict(condition_id, "inconclusive", probe_values, math.nan, expected=mode)
    if radii.size < schedule.min_probes:
        verdict.details["reason"] = "too few probes"
        return verdict

    window = min(schedule.fit_window, increments.size)
    tail_inc = increments[-window:]
    tail_r = radii[-window - 1:-1]
    if np.all(tail_inc == 0):
        verdict.tail, verdict.fitted_tail_exponent, verdict.divergence_score = "convergent", -math.inf, -math.inf
    else:
        keep = tail_inc > 0
        if keep.sum() < 3:
            verdict.details["reason"] = "too few positive increments"
        else:
            slope, _, stderr = _ols_slope(np.log(tail_r[keep]), np.log(tail_inc[keep]))
            verdict.fitted_tail_exponent = slope - 1.0
            verdict.tail_stderr = stderr
            verdict.divergence_score = slope
            if slope >= schedule.margin or abs(slope) <= schedule.flat_tol:
                verdict.tail = "divergent"
            elif slope <= -schedule.margin:
                verdict.tail = "convergent"
    verdict.verdict = _verdict_for(verdict.tail, mode)
    logger.info(f"{condition_id}: tail {verdict.tail}, exponent {verdict.fitted_tail_exponent:.4f}, "
                f"verdict {verdict.verdict}")
    return verdict


def check_keller_osserman(g: Nonlinearity, params: ProblemParams, schedule: Optional[ProbeSchedule] = None) -> ConditionVerdict:
    """∫_1^∞ G(t)^{-1/p} dt = ∞ is required."""
    schedule = schedule or ProbeSchedule(r0=1.0)

    def integrand(t):
        G = np.asarray(g.antiderivative(t))
        if np.any(G <= 0):
            raise DegenerateNonlinearityError("G vanishes on [1, ∞); g ≡ 0 near the origin of the test range")
        return G ** (-1.0 / params.p)

    return classify_improper_integral(integrand, schedule, "divergent_expected", "KO_G")


def check_growth_g(g: Nonlinearity, params: ProblemParams, t_max: float = 1e12, n_points: int = 49,
                   threshold: float = 1e-12, margin: float = 0.05, flat_tol: float = 0.01) -> ConditionVerdict:
    """liminf g(t)/t^{2γ(2γ−1)} > 0, judged from the trend of the ratio on a log grid."""
    e = params.growth_exponent
    t = np.geomspace(1.0, t_max, n_points)
    ratio = np.asarray(g(t), dtype=float) / t ** e
    probe_values = [(float(a), float(b)) for a, b in zip(t, ratio)]
    half = slice(n_points // 2, None)
    tail_min = float(ratio[half].min())
    verdict = ConditionVerdict("growth_g", "inconclusive", probe_values, math.nan, expected="divergent_expected")
    verdict.details.update(exponent=e, liminf_estimate=tail_min)
    if tail_min <= 0:
        verdict.verdict, verdict.tail = "fails", "convergent"
        verdict.divergence_score = -math.inf
    else:
        slope, _, stderr = _ols_slope(np.log(t[half]), np.log(ratio[half]))
        verdict.fitted_tail_exponent, verdict.tail_stderr, verdict.divergence_score = slope, stderr, slope
        if slope >= -flat_tol and tail_min >= threshold:
            verdict.verdict, verdict.tail = "holds", "divergent"
        elif slope <= -margin or tail_min < threshold:
            verdict.verdict, verdict.tail = "fails", "convergent"
    logger.info(f"growth_g: liminf estimate {tail_min:.4g}, verdict {verdict.verdict}")
    return verdict


def _potential_integrand(a_radial: Callable, params: ProblemParams, order: int = 8) -> Callable:
    N, p = params.N, params.p

    def integrand(s):
        inner = cumulative_integral(lambda t: t ** (N - 1) * np.asarray(a_radial(t)), s, 0.0, order)
        with np.errstate(divide="ignore", invalid="ignore"):
            base = np.where(s > 0, s ** (1.0 - N) * inner, 0.0)
        return np.clip(base, 0.0, None) ** (1.0 / (p - 1.0))

    return integrand


def check_potential_divergence(a_radial: Callable, params: ProblemParams,
                               schedule: Optional[ProbeSchedule] = None) -> ConditionVerdict:
    """∫_0^∞ (s^{1−N}∫_0^s t^{N−1}a(t)dt)^{1/(p−1)} ds = ∞ is required.

    For N ≥ 3 and p = 2 the moment ∫_1^∞ r·a(r) dr is classified as a related diagnostic.
    """
    schedule = schedule or ProbeSchedule(r0=1.0, lower=0.0)
    verdict = classify_improper_integral(_potential_integrand(a_radial, params, schedule.gl_order),
                                         schedule, "divergent_expected", "potential_div")
    if params.N >= 3 and params.p == 2:
        moment_schedule = ProbeSchedule(r0=1.0, ratio=schedule.ratio, n_probes=schedule.n_probes)
        verdict.related.append(classify_improper_integral(
            lambda r: r * np.asarray(a_radial(r)), moment_schedule, "divergent_expected", "lair_1_4"))
    return verdict


def _oscillation_integrand(a: Potential, g: Nonlinearity, params: ProblemParams, order: int = 8) -> Callable:
    N, p = params.N, params.p
    gl_x, gl_w = gauss_legendre(order)

    def integrand(s):
        left = np.concatenate(([0.0], s[:-1]))
        half = 0.5 * (s - left)
        pts = 0.5 * (s + left)[:, None] + half[:, None] * gl_x[None, :]
        _, upper, osc = a.radialize(pts.ravel())
        osc_inner = np.cumsum(half * ((pts ** (N - 1) * osc.reshape(pts.shape)) @ gl_w))
        up_inner = np.cumsum(half * (upper.reshape(pts.shape) @ gl_w))
        y = s * np.clip(up_inner, 0.0, None) ** (1.0 / (p - 1.0))
        out = np.zeros_like(s)
        live = (y > 0) & (s > 0)
        if live.any():
            G_inv = np.asarray(calG_inverse(g, params, y[live]))
            spread = np.clip(s[live] ** (1.0 - N) * osc_inner[live], 0.0, None)
            out[live] = (spread * np.asarray(g(G_inv))) ** (1.0 / (p - 1.0))
        return out

    return integrand


def _radial_hbar(condition_id: str) -> ConditionVerdict:
    verdict = ConditionVerdict(condition_id, "holds", [], -math.inf, hbar_value=0.0, tail="convergent",
                               expected="convergent_expected")
    verdict.details["reason"] = "radial potential: a_osc ≡ 0"
    return verdict


def _hbar_samples(a: Potential, g: Nonlinearity, params: ProblemParams, horizon: float,
                  per_decade: int = 40, order: int = 8) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    head = np.linspace(0.0, min(1.0, horizon), 33)
    if horizon > 1.0:
        n = max(2, int(math.ceil(math.log10(horizon) * per_decade)) + 1)
        edges = np.concatenate((head, np.geomspace(1.0, horizon, n)[1:]))
    else:
        edges = head
    nodes, weights = panel_nodes(edges, order)
    return nodes, weights, _oscillation_integrand(a, g, params, order)(nodes)


def local_hbar(a: Potential, g: Nonlinearity, params: ProblemParams, horizon: float) -> float:
    """∫_0^horizon ℋ(s) ds: the oscillation budget needed on a ball of radius ``horizon``."""
    if a.is_radial:
        return 0.0
    _, weights, values = _hbar_samples(a, g, params, horizon)
    return float(np.sum(values * weights))


def compute_Hbar(a: Potential, g: Nonlinearity, params: ProblemParams, tol: float = 1e-8,
                 r_max: float = 1e6, schedule: Optional[ProbeSchedule] = None) -> ConditionVerdict:
    """Classify ∫_0^∞ ℋ and, when finite, estimate H̄ as a truncated
    integral up to ``r_max`` plus a fitted power tail."""
    if a.is_radial:
        return _radial_hbar("oscillation_Hbar")
    screen = screen_calG(g, params)
    if not screen.strictly_increasing:
        raise InvertibilityError("𝒢 is not strictly increasing", {"worst_step": screen.worst_step})
    schedule = schedule or ProbeSchedule(r0=1.0, lower=0.0, n_probes=30)
    integrand = _oscillation_integrand(a, g, params, schedule.gl_order)
    verdict = classify_improper_integral(integrand, schedule, "convergent_expected", "oscillation_Hbar")
    verdict.details["calG_warnings"] = screen.warnings
    if verdict.tail == "divergent":
        verdict.hbar_value = math.inf
        return verdict
    if verdict.tail != "convergent":
        return verdict

    nodes, weights, values = _hbar_samples(a, g, params, r_max)
    truncated = float(np.sum(values * weights))
    keep = (nodes >= r_max / 10.0) & (values > 0)
    tail, exponent = 0.0, -math.inf
    if keep.sum() >= 3:
        exponent, intercept, _ = _ols_slope(np.log(nodes[keep]), np.log(values[keep]))
        if exponent < -1.0:
            tail = math.exp(intercept) * r_max ** (exponent + 1.0) / (-(exponent + 1.0))
        else:
            tail = math.inf
    verdict.hbar_value = truncated + tail
    verdict.details.update(truncated=truncated, truncated_at=r_max, tail_estimate=tail, tail_exponent=exponent,
                           tolerance=tol)
    if not math.isfinite(verdict.hbar_value):
        verdict.verdict = "inconclusive"
        verdict.details["reason"] = f"ℋ decays no faster than 1/s past r_max = {r_max:g}"
        logger.warning(f"H̄ classified convergent but its tail fit exponent is {exponent:.4g}")
        return verdict
    logger.info(f"H̄ = {verdict.hbar_value:.6g} (truncated {truncated:.6g} + tail {tail:.3g})")
    return verdict


@dataclass
class CompatibilityReport:
    verdicts: Dict[str, ConditionVerdict]
    checks: Dict[str, bool]
    radial_family_ok: bool
    sandwich_ok: bool
    flags: List[str] = field(default_factory=list)

    def verdict_frame(self) -> pd.DataFrame:
        rows = []
        for v in self.verdicts.values():
            for item in [v] + v.related:
                rows.append({"condition": item.condition_id, "verdict": item.verdict, "tail": item.tail,
                             "exponent": item.fitted_tail_exponent, "hbar": item.hbar_value})
        return pd.DataFrame(rows)

    def to_dict(self) -> dict:
        return {
            "verdicts": {k: v.to_dict() for k, v in self.verdicts.items()},
            "checks": dict(self.checks),
            "radial_family_ok": self.radial_family_ok,
            "sandwich_ok": self.sandwich_ok,
            "flags": list(self.flags),
        }


def hypothesis_matrix(params: ProblemParams, g: Nonlinearity, a: Potential, delta: Optional[float] = None,
                      schedule: Optional[ProbeSchedule] = None, hbar_r_max: float = 1e6) -> CompatibilityReport:
    """Evaluate every hypothesis of the radial family and sandwich existence results."""
    verdicts: Dict[str, ConditionVerdict] = {}
    flags: List[str] = []
    verdicts["KO_G"] = check_keller_osserman(g, params)
    verdicts["growth_g"] = check_growth_g(g, params)
    radial = a.is_radial
    a_lower = a.radial if a.kind == "radial_profile" else a.lower
    verdicts["potential_div"] = check_potential_divergence(a_lower, params, schedule)
    try:
        verdicts["oscillation_Hbar"] = compute_Hbar(a, g, params, r_max=hbar_r_max)
    except InvertibilityError as e:
        verdicts["oscillation_Hbar"] = ConditionVerdict("oscillation_Hbar", "fails", [], math.nan,
                                                        expected="convergent_expected",
                                                        details={"error": str(e), **e.diagnostic})

    delta = g.delta if delta is None else delta
    delta_ok = delta is not None and delta >= 2.0 * params.gamma - 1.0
    quotient_ok = bool(delta is not None and g.quotient_monotone(delta)[0])
    checks = {
        "p_at_least_two": params.p >= 2,
        "potential_radial": radial,
        "delta_admissible": delta_ok,
        "delta_monotone": quotient_ok,
    }
    if g.is_pure_power and params.growth_exponent > params.p - 1.0:
        flags.append(f"pure power g cannot satisfy both growth_g (exponent ≥ {params.growth_exponent:.4g}) "
                     f"and KO_G (exponent ≤ {params.p - 1:.4g})")
    if not delta_ok:
        flags.append(f"δ must satisfy δ ≥ 2γ−1 = {2 * params.gamma - 1:.4g}")
    if not checks["p_at_least_two"]:
        flags.append("sandwich existence needs p ≥ 2")

    core = verdicts["KO_G"].holds and verdicts["growth_g"].holds and verdicts["potential_div"].holds
    radial_ok = core and radial
    sandwich_ok = (core and checks["p_at_least_two"] and delta_ok and quotient_ok
                   and verdicts["oscillation_Hbar"].holds)
    for name, v in verdicts.items():
        if not v.holds:
            flags.append(f"{name}: {v.verdict}")
    logger.info(f"Hypothesis matrix: radial family {radial_ok}, sandwich {sandwich_ok}")
    return CompatibilityReport(verdicts, checks, radial_ok, sandwich_ok, flags)
