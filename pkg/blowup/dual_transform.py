import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

from blowup.quadrature import segment_integrals

logger = logging.getLogger("DualTransform")
logger.setLevel(logging.INFO)
if not logger.handlers:
    handler = logging.FileHandler("dual_transform.log", mode="a", encoding="utf-8")
    handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(message)s'))
    logger.addHandler(handler)

PROPERTY_NAMES = (
    "well_posed",
    "slope_bounds",
    "sublinear",
    "unit_slope_at_origin",
    "power_envelope",
    "euler_sandwich",
    "asymptotic_ratio",
    "inverse_growth",
    "weighted_slope_bound",
    "weighted_slope_monotone",
)

# Beyond this magnitude u^(2γ) overflows for some admissible γ.
SAFE_LIMIT = 1e300


class ParameterError(ValueError):
    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class TransformDomainError(ValueError):
    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value


class TransformRangeError(TransformDomainError):
    pass


@dataclass(frozen=True)
class ProblemParams:
    p: float
    gamma: float
    N: int

    def __post_init__(self):
        if not (isinstance(self.p, (int, float)) and math.isfinite(self.p) and self.p > 1):
            raise ParameterError(f"p > 1 required, got {self.p}", "p")
        if not (isinstance(self.gamma, (int, float)) and math.isfinite(self.gamma) and self.gamma > 0.5):
            raise ParameterError(f"γ > 1/2 required, got {self.gamma}", "gamma")
        if isinstance(self.N, bool) or not float(self.N).is_integer() or self.N < 1:
            raise ParameterError(f"N must be a positive integer, got {self.N}", "N")
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "N", int(self.N))

    @property
    def kappa(self) -> float:
        return (2.0 * self.gamma) ** (self.p - 1.0)

    @property
    def m(self) -> float:
        """Exponent of z inside the integrand of f^{-1}."""
        return self.p * (2.0 * self.gamma - 1.0)

    @property
    def growth_exponent(self) -> float:
        return 2.0 * self.gamma * (2.0 * self.gamma - 1.0)

    @property
    def envelope_exponent(self) -> float:
        return 1.0 / (2.0 * self.gamma)

    def to_dict(self) -> dict:
        return asdict(self)


def _integrand(params: ProblemParams, z):
    return (1.0 + params.kappa * np.power(z, params.m)) ** (1.0 / params.p)


def _remainder(params: ProblemParams, z):
    # integrand minus κ^{1/p} z^{2γ-1}, valid for z >= 1
    scale = params.kappa ** (1.0 / params.p)
    inner = np.log1p(np.power(z, -params.m) / params.kappa) / params.p
    return scale * np.power(z, 2.0 * params.gamma - 1.0) * np.expm1(inner)


def _dominant(params: ProblemParams, u):
    scale = params.kappa ** (1.0 / params.p)
    return scale * (np.power(u, 2.0 * params.gamma) - 1.0) / (2.0 * params.gamma)


def _check_finite(value, what="t"):
    if not np.all(np.isfinite(value)):
        raise TransformDomainError(f"non-finite {what} passed to the transform", value)
    if np.any(np.abs(value) > SAFE_LIMIT):
        raise TransformRangeError(f"|{what}| beyond {SAFE_LIMIT:g}", value)


def asymptotic_A(params: ProblemParams) -> float:
    """Limit of f(t)/t^{1/(2γ)} as t → ∞, namely (2γ)^{1/(2γp)}."""
    return (2.0 * params.gamma) ** (1.0 / (2.0 * params.gamma * params.p))


def f_inverse(params: ProblemParams, u: float, tol: float = 1e-10) -> float:
    """Reference quadrature for f^{-1}(u), odd in u.

    For u > 1 the dominant power is integrated in closed form and only the
    decaying remainder goes through adaptive quadrature, in log variables.
    """
    u = float(u)
    _check_finite(u, "u")
    if u < 0:
        return -f_inverse(params, -u, tol)
    if u == 0:
        return 0.0
    head, _ = quad(lambda z: _integrand(params, z), 0.0, min(u, 1.0),
                   epsabs=0.5 * tol, epsrel=1e-12, limit=200)
    if u <= 1.0:
        return head
    tail, _ = quad(lambda s: _remainder(params, math.exp(s)) * math.exp(s), 0.0, math.log(u),
                   epsabs=0.5 * tol, epsrel=1e-12, limit=200)
    return head + float(_dominant(params, u)) + tail


def _envelope_bracket(params: ProblemParams, t: float) -> Tuple[float, float]:
    A = asymptotic_A(params)
    hi = min(t, A * t ** params.envelope_exponent)
    lo = A * (t - hi) ** params.envelope_exponent if t > hi else 0.0
    return min(lo, hi), hi


def _envelope_width(params: ProblemParams, log_t: float) -> float:
    # relative width (hi - lo)/hi of the envelope bracket once hi = A t^{1/2γ}
    x = math.exp(math.log(asymptotic_A(params)) + (params.envelope_exponent - 1.0) * log_t)
    if x >= 1.0:
        return 1.0
    return -math.expm1(math.log1p(-x) * params.envelope_exponent)


def asymptotic_switchover(params: ProblemParams, tol: float) -> float:
    """Smallest t beyond which the envelope bracket alone pins f(t) to relative ``tol``.

    Returns ``inf`` when that never happens below the safe range.
    """
    log_hi = math.log(SAFE_LIMIT)
    if _envelope_width(params, log_hi) > tol:
        return math.inf
    e = params.envelope_exponent
    log_lo = math.log(asymptotic_A(params)) / (1.0 - e) + math.log(4.0)
    if _envelope_width(params, log_lo) <= tol:
        return math.exp(log_lo)
    log_star = brentq(lambda s: _envelope_width(params, s) - tol, log_lo, log_hi, xtol=1e-12)
    return math.exp(log_star) * (1.0 + 1e-9)


def f_eval(params: ProblemParams, t: float, tol: float = 1e-10) -> float:
    """f(t) by bracketed root-finding on the reference quadrature."""
    t = float(t)
    _check_finite(t)
    if t < 0:
        return -f_eval(params, -t, tol)
    if t == 0:
        return 0.0
    lo, hi = _envelope_bracket(params, t)
    if hi - lo <= tol * hi:
        return 0.5 * (lo + hi)

    def residual(y):
        return f_inverse(params, y, 0.1 * tol) - t

    r_hi = residual(hi)
    for _ in range(60):
        if r_hi >= 0:
            break
        hi = hi * (1.0 + 1e-9) + 1e-300
        r_hi = residual(hi)
    if residual(lo) > 0:
        lo = 0.0
    if r_hi == 0:
        return hi
    xtol = tol / float(_integrand(params, hi))
    return brentq(residual, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=300)


def f_prime(params: ProblemParams, t: float, tol: float = 1e-10) -> float:
    y = f_eval(params, t, tol)
    return float(_integrand(params, abs(y)) ** -1.0)


def f_second(params: ProblemParams, t: float, tol: float = 1e-10) -> float:
    y = f_eval(params, t, tol)
    return float(_second_from_value(params, np.asarray(y)))


def _second_from_value(params: ProblemParams, y):
    slope = _integrand(params, np.abs(y)) ** -1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        mag = params.kappa * params.m / params.p * np.power(np.abs(y), params.m - 1.0) * slope ** (params.p + 2.0)
    return -np.sign(y) * mag


def asymptotic_ratio(params: ProblemParams, t: float, tol: float = 1e-10) -> float:
    """Empirical f(t)/t^{1/(2γ)}; tends to asymptotic_A(params)."""
    if t <= 0:
        raise TransformDomainError("asymptotic ratio needs t > 0", t)
    return f_eval(params, t, tol) / t ** params.envelope_exponent


class DualTransform:
    """Vectorised f, f', f'' and f^{-1} for one parameter set.

    f^{-1} is tabulated on geometric u-nodes (split at u = 1) with
    Gauss-Legendre panels; f is a Hermite guess on that table polished by
    Newton on F = f^{-1}, which converges monotonically since F is convex.
    """

    def __init__(self, params: ProblemParams, accuracy_target: float = 1e-10,
                 t_max: float = 1e24, nodes_per_decade: int = 40, max_newton: int = 30):
        if accuracy_target <= 0:
            raise ParameterError("accuracy_target must be positive", "accuracy_target")
        self.params = params
        self.accuracy_target = float(accuracy_target)
        self.max_newton = max_newton
        self._build_table(float(t_max), int(nodes_per_decade))
        self.asymptotic_switchover = asymptotic_switchover(params, self.accuracy_target)
        logger.info(
            f"Transform table for p={params.p}, γ={params.gamma}: {self._u.size} nodes, "
            f"t up to {self.table_limit:.3e}, switchover {self.asymptotic_switchover:.3e}")

    def _build_table(self, t_max: float, per_decade: int):
        params = self.params
        self._u_head = np.concatenate(([0.0], np.geomspace(1e-10, 1.0, 10 * per_decade + 1)))
        head_panels = segment_integrals(lambda z: _integrand(params, z), self._u_head[:-1], self._u_head[1:])
        self._head_cum = np.concatenate(([0.0], np.cumsum(head_panels)))

        u_hi = max(2.0, 1.01 * min(t_max, asymptotic_A(params) * t_max ** params.envelope_exponent))
        n_tail = max(2, int(math.ceil(math.log10(u_hi) * per_decade)) + 1)
        self._u_tail = np.geomspace(1.0, u_hi, n_tail)
        tail_panels = segment_integrals(lambda z: _remainder(params, z), self._u_tail[:-1], self._u_tail[1:])
        self._tail_cum = np.concatenate(([0.0], np.cumsum(tail_panels)))
        self._F1 = self._head_cum[-1]

        self._u = np.concatenate((self._u_head, self._u_tail[1:]))
        self._T = np.concatenate((self._head_cum,
                                  self._F1 + _dominant(params, self._u_tail[1:]) + self._tail_cum[1:]))
        self._guess = CubicHermiteSpline(self._T, self._u, 1.0 / _integrand(params, self._u))

    @property
    def table_limit(self) -> float:
        return float(self._T[-1])

    @property
    def asymptotic_A(self) -> float:
        return asymptotic_A(self.params)

    @staticmethod
    def _reshape(values: np.ndarray, like: np.ndarray):
        if like.ndim == 0:
            return float(values[0])
        return values.reshape(like.shape)

    def inverse(self, u):
        u_arr = np.asarray(u, dtype=float)
        _check_finite(u_arr, "u")
        a = np.abs(u_arr).ravel()
        out = np.empty_like(a)
        params = self.params

        head = a <= 1.0
        if head.any():
            k = np.clip(np.searchsorted(self._u_head, a[head], side="right") - 1, 0, self._u_head.size - 2)
            out[head] = self._head_cum[k] + segment_integrals(
                lambda z: _integrand(params, z), self._u_head[k], a[head])

        tail = (~head) & (a <= self._u_tail[-1])
        if tail.any():
            k = np.clip(np.searchsorted(self._u_tail, a[tail], side="right") - 1, 0, self._u_tail.size - 2)
            out[tail] = (self._F1 + _dominant(params, a[tail]) + self._tail_cum[k]
                         + segment_integrals(lambda z: _remainder(params, z), self._u_tail[k], a[tail]))

        beyond = a > self._u_tail[-1]
        if beyond.any():
            out[beyond] = [f_inverse(params, x, self.accuracy_target) for x in a[beyond]]

        return self._reshape(np.sign(u_arr).ravel() * out, u_arr)

    def _polish(self, a: np.ndarray) -> np.ndarray:
        y = np.clip(self._guess(a), 0.0, None)
        target = self.accuracy_target * np.maximum(1.0, a)
        for _ in range(self.max_newton):
            r = self.inverse(y) - a
            y = np.maximum(y - r / _integrand(self.params, y), 0.0)
            if np.all(np.abs(r) <= target):
                break
        else:
            logger.warning(f"Newton polishing hit {self.max_newton} iterations, "
                           f"max |F(y)-t| = {np.max(np.abs(r)):.3e}")
        return y

    def f(self, t):
        t_arr = np.asarray(t, dtype=float)
        _check_finite(t_arr)
        a = np.abs(t_arr).ravel()
        y = np.empty_like(a)

        inside = a <= self._T[-1]
        if inside.any():
            y[inside] = self._polish(a[inside])
        asym = (~inside) & (a >= self.asymptotic_switchover)
        for i in np.flatnonzero(asym):
            lo, hi = _envelope_bracket(self.params, a[i])
            y[i] = 0.5 * (lo + hi)
        rest = (~inside) & (~asym)
        if rest.any():
            y[rest] = [f_eval(self.params, x, self.accuracy_target) for x in a[rest]]

        return self._reshape(np.sign(t_arr).ravel() * y, t_arr)

    def fprime(self, t):
        y = np.asarray(self.f(t), dtype=float)
        out = _integrand(self.params, np.abs(y)) ** -1.0
        return float(out) if np.ndim(t) == 0 else out

    def fsecond(self, t):
        y = np.asarray(self.f(t), dtype=float)
        out = _second_from_value(self.params, y)
        return float(out) if np.ndim(t) == 0 else out

    def ratio(self, t):
        t_arr = np.asarray(t, dtype=float)
        out = np.abs(np.asarray(self.f(t_arr))) / np.abs(t_arr) ** self.params.envelope_exponent
        return float(out) if t_arr.ndim == 0 else out


def ode_crosscheck(dual: DualTransform, t_max: float = 100.0, tol: float = 1e-9, n_points: int = 2001) -> float:
    """Sup deviation on [0, t_max] between the table-based f and the
    integrated initial value problem f' = [1 + κ|f|^m]^{-1/p}, f(0) = 0."""
    params = dual.params
    t_eval = np.linspace(0.0, t_max, n_points)

    def rhs(_, y):
        return [(1.0 + params.kappa * abs(y[0]) ** params.m) ** (-1.0 / params.p)]

    sol = solve_ivp(rhs, (0.0, t_max), [0.0], method="DOP853", t_eval=t_eval,
                    rtol=max(1e-3 * tol, 1e-13), atol=1e-3 * tol)
    if not sol.success:
        raise TransformDomainError(f"ODE reference integration failed: {sol.message}")
    deviation = float(np.max(np.abs(sol.y[0] - dual.f(t_eval))))
    logger.info(f"ODE cross-check deviation on [0, {t_max:g}]: {deviation:.3e}")
    return deviation


@dataclass
class PropertyCheck:
    name: str
    passed: bool
    worst_margin: float
    probe: Optional[float] = None
    detail: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PropertyReport:
    params: ProblemParams
    delta: float
    accuracy_target: float
    checks: Dict[str, PropertyCheck]
    table: pd.DataFrame
    inverse_growth_constant: float
    asymptotic_switchover: float
    ode_deviation: float

    @property
    def passed(self) -> int:
        return sum(1 for check in self.checks.values() if check.passed)

    @property
    def all_passed(self) -> bool:
        return self.passed == len(PROPERTY_NAMES)

    def summary_frame(self) -> pd.DataFrame:
        return pd.DataFrame([self.checks[name].to_dict() for name in PROPERTY_NAMES])

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "delta": self.delta,
            "accuracy_target": self.accuracy_target,
            "passed": self.passed,
            "total": len(PROPERTY_NAMES),
            "inverse_growth_constant": self.inverse_growth_constant,
            "asymptotic_switchover": self.asymptotic_switchover,
            "ode_deviation": self.ode_deviation,
            "checks": [self.checks[name].to_dict() for name in PROPERTY_NAMES],
        }


def _walk_to_limit(func: Callable[[float], float], start: float, factor: float, tol: float,
                   bound: Optional[float] = None, max_steps: int = 20) -> Tuple[float, float, bool]:
    current, value = start, func(start)
    for _ in range(max_steps):
        nxt = current * factor
        if nxt < 1e-300 or (bound is not None and nxt > bound):
            break
        nxt_value = func(nxt)
        if abs(nxt_value - value) <= 0.1 * tol:
            return nxt, nxt_value, True
        current, value = nxt, nxt_value
    return current, value, False


def _inequality(name: str, margin: np.ndarray, slack: np.ndarray, t: np.ndarray, detail: str = "") -> PropertyCheck:
    if margin.size == 0:
        return PropertyCheck(name, True, math.inf, None, "no probe points")
    worst = int(np.argmin(margin))
    return PropertyCheck(name, bool(np.all(margin >= -slack)), float(margin[worst]), float(t[worst]), detail)


def verify_properties(params: ProblemParams, grid, delta: float, accuracy_target: float = 1e-10,
                      dual: Optional[DualTransform] = None, origin_tol: float = 1e-6,
                      limit_tol: float = 1e-3, ode_tol: float = 1e-9, ode_t_max: float = 100.0) -> PropertyReport:
    """Check the ten structural properties of f on a probe grid."""
    if delta < 2.0 * params.gamma - 1.0:
        raise ParameterError(f"δ ≥ 2γ−1 = {2 * params.gamma - 1:g} required, got {delta}", "delta")
    t = np.unique(np.asarray(grid, dtype=float))
    if t.size == 0:
        raise ValueError("probe grid is empty")
    _check_finite(t)
    dual = dual or DualTransform(params, accuracy_target)
    acc = dual.accuracy_target

    f = np.asarray(dual.f(t))
    fp = np.asarray(dual.fprime(t))
    at, af = np.abs(t), np.abs(f)
    slack = 10.0 * acc * np.maximum(1.0, at)
    flat = np.full_like(t, 10.0 * acc)
    g2 = 2.0 * params.gamma
    checks: Dict[str, PropertyCheck] = {}

    ode_dev = ode_crosscheck(dual, ode_t_max, ode_tol)
    increasing = bool(np.all(np.diff(f) > 0))
    odd_dev = float(np.max(np.abs(np.asarray(dual.f(-t)) + f)))
    checks["well_posed"] = PropertyCheck(
        "well_posed", ode_dev <= 10.0 * ode_tol and increasing and odd_dev <= 10.0 * acc,
        10.0 * ode_tol - ode_dev, None,
        f"ODE deviation {ode_dev:.3e}; strictly increasing: {increasing}; odd deviation {odd_dev:.1e}")

    slope = _inequality("slope_bounds", np.minimum(fp, 1.0 - fp), flat, t)
    slope.passed = slope.passed and bool(np.all(fp > 0))
    checks["slope_bounds"] = slope
    checks["sublinear"] = _inequality("sublinear", at - af, slack, t)

    positive = at[at > 0]
    start = float(positive.min()) if positive.size else 1e-6
    probe, value, stable = _walk_to_limit(lambda s: dual.f(s) / s, start, 1e-2, origin_tol)
    checks["unit_slope_at_origin"] = PropertyCheck(
        "unit_slope_at_origin", abs(value - 1.0) <= origin_tol, origin_tol - abs(value - 1.0), probe,
        f"f(t)/t = {value:.12f} at t = {probe:.1e}" + ("" if stable else " (not stabilised)"))

    checks["power_envelope"] = _inequality(
        "power_envelope", g2 ** (1.0 / params.p) * at - af ** g2, slack, t)

    nonneg = t >= 0
    tn, fn, fpn = t[nonneg], f[nonneg], fp[nonneg]
    euler = np.minimum(params.gamma * tn * fpn - 0.5 * fn, params.gamma * fn - params.gamma * tn * fpn)
    checks["euler_sandwich"] = _inequality("euler_sandwich", euler, slack[nonneg], tn)

    A = asymptotic_A(params)
    top = max(float(at.max()), 1.0)
    probe, value, stable = _walk_to_limit(lambda s: dual.ratio(s), top, 100.0, limit_tol, bound=dual.table_limit)
    pos = t > 0
    grid_ratio = af[pos] / t[pos] ** params.envelope_exponent
    monotone = bool(np.all(np.diff(grid_ratio) >= -10.0 * acc * np.maximum(1.0, grid_ratio[1:])))
    bounded = bool(np.all(grid_ratio <= A + limit_tol))
    checks["asymptotic_ratio"] = PropertyCheck(
        "asymptotic_ratio", abs(value - A) <= limit_tol and monotone and bounded, limit_tol - abs(value - A), probe,
        f"ratio {value:.9f} vs A = {A:.9f} at t = {probe:.1e}; monotone: {monotone}"
        + ("" if stable else " (not stabilised within table range)"))

    nz = at > 0
    C = float(np.max(at[nz] / (af[nz] + af[nz] ** g2))) if nz.any() else 0.0
    checks["inverse_growth"] = PropertyCheck(
        "inverse_growth", math.isfinite(C), C, None, f"empirical C = {C:.6g}")

    weighted = af ** (g2 - 1.0) * fp
    sharp = params.kappa ** (-1.0 / params.p)
    stated = 2.0 ** (-(params.p - 1.0) / params.p)
    bound_check = _inequality("weighted_slope_bound", sharp - weighted, flat, t,
                              f"sup {weighted.max():.9f}; sharp bound (2γ)^(-(p-1)/p) = {sharp:.9f}; "
                              f"2^(-(p-1)/p) = {stated:.9f}")
    if np.any(weighted > stated + 10.0 * acc):
        logger.warning(f"|f|^(2γ-1) f' reaches {weighted.max():.6f} > 2^(-(p-1)/p) = {stated:.6f} "
                       f"(γ = {params.gamma} < 1)")
        bound_check.detail += "; exceeds 2^(-(p-1)/p)"
    checks["weighted_slope_bound"] = bound_check

    q = fpn * fn ** delta
    diffs = np.diff(q)
    derivative = fn ** (delta - 1.0) * fpn ** 2 * (delta - params.kappa * params.m / params.p * fn ** params.m * fpn ** params.p)
    analytic = float(np.min(derivative[fn > 0])) if np.any(fn > 0) else 0.0
    mono = _inequality("weighted_slope_monotone", diffs, 10.0 * acc * np.maximum(1.0, np.abs(q[1:])), tn[1:],
                       f"min analytic derivative {analytic:.3e}")
    checks["weighted_slope_monotone"] = mono

    table = pd.DataFrame({
        "t": t,
        "f": f,
        "fprime": fp,
        "slope_margin": np.minimum(fp, 1.0 - fp),
        "sublinear_margin": at - af,
        "envelope_margin": g2 ** (1.0 / params.p) * at - af ** g2,
        "weighted_slope": weighted,
    })
    report = PropertyReport(params, float(delta), acc, checks, table, C, dual.asymptotic_switchover, ode_dev)
    logger.info(f"Property verification p={params.p}, γ={params.gamma}, δ={delta}: "
                f"{report.passed}/{len(PROPERTY_NAMES)} passed")
    return report
