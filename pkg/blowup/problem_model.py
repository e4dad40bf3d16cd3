import logging
import math
import threading
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator, RegularGridInterpolator
from scipy.optimize import brentq

from blowup.dual_transform import ProblemParams

logger = logging.getLogger("ProblemModel")
logger.setLevel(logging.INFO)
if not logger.handlers:
    handler = logging.FileHandler("problem_model.log", mode="a", encoding="utf-8")
    handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(message)s'))
    logger.addHandler(handler)

NONLINEARITY_KINDS = ("power", "power_log", "tabulated")
POTENTIAL_KINDS = ("radial_profile", "radial_times_angular", "general_sampled")
PROFILE_FAMILIES = ("constant", "inverse_power", "tabulated")


class ModelDataError(ValueError):
    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class SingularValueError(ModelDataError):
    pass


class InvertibilityError(ModelDataError):
    def __init__(self, message, diagnostic=None):
        super().__init__(message, "nonlinearity")
        self.diagnostic = diagnostic or {}


def read_samples_csv(path: str, columns: int) -> np.ndarray:
    """Numeric rows of a sample table; header and comment lines are dropped."""
    df = pd.read_csv(path, header=None, comment="#", skipinitialspace=True)
    if df.shape[1] < columns:
        raise ModelDataError(f"{path}: expected {columns} columns, found {df.shape[1]}")
    df = df.iloc[:, :columns].apply(pd.to_numeric, errors="coerce").dropna()
    if df.empty:
        raise ModelDataError(f"{path}: no numeric rows")
    return df.to_numpy(dtype=float)


class _KnotCache:
    """Append-only knots t_k = 2^k with exact running integrals G(t_k)."""

    def __init__(self, integrand):
        self._integrand = integrand
        self._lock = threading.Lock()
        self._knots = [0.0, 1.0]
        self._values = [0.0, None]

    def _segment(self, a, b, tol):
        value, _ = quad(self._integrand, a, b, epsabs=tol, epsrel=1e-12, limit=200)
        return value

    def value(self, t: float, tol: float) -> float:
        with self._lock:
            if self._values[1] is None:
                self._values[1] = self._segment(0.0, 1.0, tol)
            while self._knots[-1] < t:
                a = self._knots[-1]
                self._values.append(self._values[-1] + self._segment(a, 2.0 * a, tol))
                self._knots.append(2.0 * a)
            k = max(i for i, knot in enumerate(self._knots) if knot <= t)
            base_t, base_v = self._knots[k], self._values[k]
        if t == base_t:
            return base_v
        return base_v + self._segment(base_t, t, tol)


@dataclass(frozen=True)
class Nonlinearity:
    """Continuous nondecreasing g with g(0) = 0.

    ``power``: λ s^q.  ``power_log``: λ s^q log(1 + s).  ``tabulated``:
    monotone cubic through the samples, continued by the power law fitted to
    the last two samples.
    """
    kind: str
    coefficient: float = 1.0
    exponent: float = 1.0
    delta: Optional[float] = None
    samples: Optional[Tuple[Tuple[float, float], ...]] = None
    _pchip: Optional[PchipInterpolator] = field(default=None, init=False, repr=False, compare=False)
    _cache: Optional[_KnotCache] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in NONLINEARITY_KINDS:
            raise ModelDataError(f"unknown nonlinearity kind '{self.kind}'", "kind")
        if self.delta is not None and not (math.isfinite(self.delta) and self.delta >= 0):
            raise ModelDataError("delta must be a finite nonnegative number", "delta")
        if self.kind == "tabulated":
            self._init_tabulated()
            return
        if not (math.isfinite(self.coefficient) and self.coefficient > 0):
            raise ModelDataError("coefficient must be positive", "coefficient")
        if self.kind == "power" and not (math.isfinite(self.exponent) and self.exponent > 0):
            raise ModelDataError("power nonlinearity needs exponent > 0 so that g(0) = 0", "exponent")
        if self.kind == "power_log" and not (math.isfinite(self.exponent) and self.exponent >= 0):
            raise ModelDataError("power_log nonlinearity needs exponent >= 0", "exponent")
        if self.kind == "power_log":
            object.__setattr__(self, "_cache", _KnotCache(lambda s: float(self(s))))

    def _init_tabulated(self):
        if not self.samples or len(self.samples) < 3:
            raise ModelDataError("tabulated nonlinearity needs at least 3 samples", "samples")
        data = np.asarray(self.samples, dtype=float)
        s, v = data[:, 0], data[:, 1]
        if not np.all(np.isfinite(data)):
            raise ModelDataError("tabulated nonlinearity has non-finite samples", "samples")
        if s[0] != 0.0 or v[0] != 0.0:
            raise ModelDataError("tabulated nonlinearity must start at (0, 0)", "samples")
        if np.any(np.diff(s) <= 0):
            raise ModelDataError("sample abscissae must be strictly increasing", "samples")
        if np.any(np.diff(v) < 0):
            raise ModelDataError("g must be nondecreasing", "samples")
        object.__setattr__(self, "samples", tuple(map(tuple, data.tolist())))
        object.__setattr__(self, "_pchip", PchipInterpolator(s, v, extrapolate=False))

    @classmethod
    def from_csv(cls, path: str, delta: Optional[float] = None) -> "Nonlinearity":
        data = read_samples_csv(path, 2)
        return cls("tabulated", delta=delta, samples=tuple(map(tuple, data.tolist())))

    @property
    def is_pure_power(self) -> bool:
        return self.kind == "power"

    @property
    def _tail(self) -> Tuple[float, float, float]:
        (s1, v1), (s2, v2) = self.samples[-2], self.samples[-1]
        q = math.log(v2 / v1) / math.log(s2 / s1) if v1 > 0 else 0.0
        return s2, v2, q

    def __call__(self, s):
        s_arr = np.clip(np.asarray(s, dtype=float), 0.0, None)
        if self.kind == "power":
            out = self.coefficient * np.power(s_arr, self.exponent)
        elif self.kind == "power_log":
            out = self.coefficient * np.power(s_arr, self.exponent) * np.log1p(s_arr)
        else:
            s_end, v_end, q = self._tail
            inside = s_arr <= s_end
            out = np.where(inside, self._pchip(np.minimum(s_arr, s_end)),
                           v_end * np.power(np.maximum(s_arr, s_end) / s_end, q))
        return float(out) if np.ndim(s) == 0 else out

    def antiderivative(self, t, tol: float = 1e-10):
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0):
            raise ModelDataError("G is only defined for t >= 0", "t")
        if self.kind == "power":
            q = self.exponent
            out = self.coefficient * np.power(t_arr, q + 1.0) / (q + 1.0)
        elif self.kind == "tabulated":
            s_end, v_end, q = self._tail
            inner = self._pchip.antiderivative()
            G_end = float(inner(s_end))
            within = inner(np.minimum(t_arr, s_end))
            beyond = G_end + v_end * s_end / (q + 1.0) * (np.power(np.maximum(t_arr, s_end) / s_end, q + 1.0) - 1.0)
            out = np.where(t_arr <= s_end, within, beyond)
        else:
            out = np.vectorize(lambda x: self._cache.value(x, tol), otypes=[float])(t_arr)
        return float(out) if t_arr.ndim == 0 else out

    def quotient_monotone(self, delta: float, grid=None) -> Tuple[bool, float]:
        """Whether g(t)/t^δ is nondecreasing on a log grid; returns the worst decrease too."""
        t = np.geomspace(1e-6, 1e12, 400) if grid is None else np.asarray(grid, dtype=float)
        q = np.asarray(self(t)) / t ** delta
        steps = np.diff(q)
        worst = float(steps.min()) if steps.size else 0.0
        return bool(np.all(steps >= -1e-12 * (1.0 + np.abs(q[1:])))), worst

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "delta": self.delta}
        if self.kind == "tabulated":
            out["samples"] = [list(row) for row in self.samples]
        else:
            out.update(coefficient=self.coefficient, exponent=self.exponent)
        return out


def antiderivative_G(g: Nonlinearity, t, tol: float = 1e-10):
    return g.antiderivative(t, tol)


def calG(g: Nonlinearity, params: ProblemParams, t):
    """𝒢(t) = (t/2)·g(t)^{-1/(p-1)} for t > 0."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0):
        raise ModelDataError("𝒢 is only defined for t > 0", "t")
    gv = np.asarray(g(t_arr), dtype=float)
    if np.any(gv <= 0):
        raise SingularValueError("g vanishes at a positive argument; 𝒢 is singular there", "nonlinearity")
    out = 0.5 * t_arr * gv ** (-1.0 / (params.p - 1.0))
    return float(out) if t_arr.ndim == 0 else out


@dataclass
class CalGScreen:
    strictly_increasing: bool
    t0: float
    worst_step: float
    warnings: List[str] = field(default_factory=list)


def screen_calG(g: Nonlinearity, params: ProblemParams, t0: float = 1e-6, t_hi: float = 1e12,
                n_points: int = 400) -> CalGScreen:
    """Monotonicity screen of 𝒢 on [t0, t_hi]; dips below t0 only warn."""
    t = np.geomspace(t0, t_hi, n_points)
    values = calG(g, params, t)
    steps = np.diff(values)
    strict = bool(np.all(steps > 1e-13 * values[1:]))
    warnings = []
    small = np.geomspace(max(t0 * 1e-6, 1e-300), t0, 60)
    try:
        small_values = calG(g, params, small)
        if np.any(np.diff(small_values) <= 0):
            warnings.append(f"𝒢 is not increasing below t0 = {t0:g}")
    except SingularValueError:
        warnings.append(f"g vanishes below t0 = {t0:g}")
    for message in warnings:
        logger.warning(message)
    return CalGScreen(strict, t0, float(steps.min()), warnings)


def calG_inverse(g: Nonlinearity, params: ProblemParams, y, tol: float = 1e-10, t0: float = 1e-6):
    """Inverse of 𝒢; closed form for pure powers λs^q with q < p−1."""
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0) or not np.all(np.isfinite(y_arr)):
        raise ModelDataError("𝒢^{-1} needs finite y >= 0", "y")
    if g.is_pure_power:
        q, lam = g.exponent, g.coefficient
        gap = params.p - 1.0 - q
        if abs(gap) < 1e-12:
            raise InvertibilityError(
                f"𝒢 is constant (= {0.5 * lam ** (-1.0 / (params.p - 1.0)):g}) for g = λs^(p−1)",
                {"exponent": q, "p": params.p})
        if gap < 0:
            raise InvertibilityError("𝒢 is decreasing for exponents above p−1", {"exponent": q, "p": params.p})
        out = (2.0 * y_arr * lam ** (1.0 / (params.p - 1.0))) ** ((params.p - 1.0) / gap)
        return float(out) if y_arr.ndim == 0 else out

    screen = screen_calG(g, params, t0)
    if not screen.strictly_increasing:
        raise InvertibilityError(f"𝒢 is not strictly increasing on [{t0:g}, ∞)",
                                 {"worst_step": screen.worst_step, "t0": t0})

    def invert(target):
        if target == 0:
            return 0.0
        lo, hi = t0, max(1.0, t0)
        while calG(g, params, hi) < target:
            hi *= 4.0
            if hi > 1e300:
                raise InvertibilityError(f"𝒢 does not reach {target:g}", {"y": target})
        while calG(g, params, lo) > target:
            lo *= 0.25
            if lo < 1e-300:
                raise InvertibilityError(f"𝒢 stays above {target:g} near 0", {"y": target})
        return brentq(lambda s: calG(g, params, s) - target, lo, hi, xtol=tol * max(1.0, lo), rtol=1e-14)

    out = np.vectorize(invert, otypes=[float])(y_arr)
    return float(out) if y_arr.ndim == 0 else out


@dataclass(frozen=True)
class RadialProfile:
    """b(r): ``constant`` value, ``inverse_power`` value·(1+r)^{-power}, or ``tabulated``."""
    family: str = "constant"
    value: float = 1.0
    power: float = 0.0
    samples: Optional[Tuple[Tuple[float, float], ...]] = None
    _pchip: Optional[PchipInterpolator] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in PROFILE_FAMILIES:
            raise ModelDataError(f"unknown profile family '{self.family}'", "family")
        if not math.isfinite(self.value) or not math.isfinite(self.power):
            raise ModelDataError("profile parameters must be finite", "value")
        if self.family == "tabulated":
            if not self.samples or len(self.samples) < 2:
                raise ModelDataError("tabulated profile needs at least 2 samples", "samples")
            data = np.asarray(self.samples, dtype=float)
            if not np.all(np.isfinite(data)):
                raise ModelDataError("tabulated profile has non-finite samples", "samples")
            if data[0, 0] != 0.0 or np.any(np.diff(data[:, 0]) <= 0):
                raise ModelDataError("profile radii must start at 0 and increase", "samples")
            object.__setattr__(self, "samples", tuple(map(tuple, data.tolist())))
            object.__setattr__(self, "_pchip", PchipInterpolator(data[:, 0], data[:, 1], extrapolate=False))

    def __call__(self, r):
        r_arr = np.asarray(r, dtype=float)
        if self.family == "constant":
            out = np.full_like(r_arr, self.value)
        elif self.family == "inverse_power":
            out = self.value * np.power(1.0 + r_arr, -self.power)
        else:
            # held constant past the last sample
            r_end = self.samples[-1][0]
            out = self._pchip(np.minimum(r_arr, r_end))
        return float(out) if r_arr.ndim == 0 else out

    def to_dict(self) -> dict:
        if self.family == "tabulated":
            return {"family": self.family, "samples": [list(row) for row in self.samples]}
        return {"family": self.family, "value": self.value, "power": self.power}


def angular_samples(N: int, count: int) -> np.ndarray:
    """Angles sampled on a sphere of radius r: θ ∈ {0, π} for N=1, polar for N=2,
    angle from the symmetry axis for N≥3."""
    if N == 1:
        return np.array([0.0, math.pi])
    if N == 2:
        return np.linspace(0.0, 2.0 * math.pi, count, endpoint=False)
    return np.linspace(0.0, math.pi, count)


@dataclass(frozen=True)
class Potential:
    """Nonnegative continuous weight a(x), described in polar form a(r, θ).

    ``radial_profile``: a = b(r).  ``radial_times_angular``: a = b(r) + d(r)·cos(kθ).
    ``general_sampled``: bilinear interpolation of a table (r, θ, a), periodic in θ for N = 2.
    At r = 0 every kind takes the angle-free value b(0) (or the θ = 0 sample).
    """
    kind: str
    N: int
    radial: RadialProfile = field(default_factory=RadialProfile)
    amplitude: Optional[RadialProfile] = None
    mode: int = 1
    samples: Optional[Tuple[Tuple[float, float, float], ...]] = None
    angular_count: int = 256
    _grid: Optional[RegularGridInterpolator] = field(default=None, init=False, repr=False, compare=False)
    _r_max: float = field(default=math.inf, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in POTENTIAL_KINDS:
            raise ModelDataError(f"unknown potential kind '{self.kind}'", "kind")
        if self.N < 1:
            raise ModelDataError("N must be a positive integer", "N")
        if self.kind == "radial_times_angular" and self.amplitude is None:
            raise ModelDataError("radial_times_angular needs an amplitude profile", "amplitude")
        if self.kind == "general_sampled":
            self._init_sampled()
        self._check_nonnegative()

    def _init_sampled(self):
        if not self.samples:
            raise ModelDataError("general_sampled potential needs samples", "samples")
        df = pd.DataFrame(list(self.samples), columns=["r", "theta", "a"])
        if not np.all(np.isfinite(df.to_numpy())):
            raise ModelDataError("sampled potential has non-finite entries", "samples")
        table = df.pivot_table(index="r", columns="theta", values="a", aggfunc="mean")
        if table.isna().to_numpy().any():
            raise ModelDataError("sampled potential must cover a full (r, θ) grid", "samples")
        r_nodes = table.index.to_numpy(dtype=float)
        theta_nodes = table.columns.to_numpy(dtype=float)
        values = table.to_numpy(dtype=float)
        if r_nodes[0] != 0.0 or r_nodes.size < 2 or theta_nodes.size < 2:
            raise ModelDataError("sampled potential needs r from 0 and at least two radii and angles", "samples")
        period = 2.0 * math.pi if self.N == 2 else math.pi
        if self.N == 2 and theta_nodes[-1] < period:
            theta_nodes = np.append(theta_nodes, theta_nodes[0] + period)
            values = np.hstack([values, values[:, :1]])
        object.__setattr__(self, "samples", tuple(map(tuple, df.to_numpy().tolist())))
        object.__setattr__(self, "_grid", RegularGridInterpolator((r_nodes, theta_nodes), values))
        object.__setattr__(self, "_r_max", float(r_nodes[-1]))

    @classmethod
    def from_csv(cls, path: str, N: int, angular_count: int = 256) -> "Potential":
        data = read_samples_csv(path, 3)
        return cls("general_sampled", N, samples=tuple(map(tuple, data.tolist())), angular_count=angular_count)

    def _check_nonnegative(self):
        r = np.concatenate(([0.0], np.geomspace(1e-3, 1e6, 60)))
        theta = angular_samples(self.N, 64)
        R, TH = np.meshgrid(r, theta, indexing="ij")
        values = self.evaluate(R, TH)
        if not np.all(np.isfinite(values)):
            raise ModelDataError("potential is not finite at some finite radius", "potential")
        if np.min(values) < -1e-14:
            raise ModelDataError(f"potential must be nonnegative, found {np.min(values):.3e}", "potential")

    @property
    def is_radial(self) -> bool:
        if self.kind == "radial_profile":
            return True
        r = np.geomspace(1e-3, 1e6, 60)
        return bool(np.max(self.oscillation(r)) <= 1e-14)

    def evaluate(self, r, theta):
        r_arr = np.asarray(r, dtype=float)
        th = np.broadcast_to(np.asarray(theta, dtype=float), r_arr.shape)
        if self.kind == "radial_profile":
            out = np.asarray(self.radial(r_arr), dtype=float) + 0.0 * th
        elif self.kind == "radial_times_angular":
            out = np.asarray(self.radial(r_arr)) + np.asarray(self.amplitude(r_arr)) * np.cos(self.mode * th)
            out = np.where(r_arr == 0.0, np.asarray(self.radial(r_arr)), out)
        else:
            period = 2.0 * math.pi if self.N == 2 else math.pi
            th_wrapped = np.mod(th, 2.0 * math.pi) if self.N == 2 else np.clip(th, 0.0, period)
            rr = np.minimum(r_arr, self._r_max)
            pts = np.stack([rr.ravel(), th_wrapped.ravel()], axis=-1)
            out = self._grid(pts).reshape(r_arr.shape)
            at_center = self._grid(np.array([[0.0, 0.0]]))[0]
            out = np.where(r_arr == 0.0, at_center, out)
        return float(out) if np.ndim(out) == 0 else out

    def evaluate_cartesian(self, x, y):
        if self.N != 2:
            raise ModelDataError("cartesian evaluation is only available for N = 2", "N")
        x_arr, y_arr = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        return self.evaluate(np.hypot(x_arr, y_arr), np.arctan2(y_arr, x_arr))

    def radialize(self, r, max_doublings: int = 6, tol: float = 1e-9) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (a_lower, a_upper, a_osc) on the radii ``r``."""
        r_arr = np.atleast_1d(np.asarray(r, dtype=float))
        if np.any(r_arr < 0):
            raise ModelDataError("radii must be nonnegative", "r")
        if self.kind == "radial_profile":
            b = np.asarray(self.radial(r_arr), dtype=float)
            return b, b.copy(), np.zeros_like(b)
        count = self.angular_count
        lower, upper = self._extrema(r_arr, count)
        for _ in range(max_doublings):
            if self.N == 1:
                break
            count *= 2
            new_lower, new_upper = self._extrema(r_arr, count)
            change = max(np.max(np.abs(new_lower - lower)), np.max(np.abs(new_upper - upper)))
            lower, upper = new_lower, new_upper
            if change < tol:
                break
        return lower, upper, upper - lower

    def _extrema(self, r: np.ndarray, count: int) -> Tuple[np.ndarray, np.ndarray]:
        theta = angular_samples(self.N, count)
        values = np.asarray(self.evaluate(r[:, None] * np.ones_like(theta)[None, :], theta[None, :]))
        return values.min(axis=1), values.max(axis=1)

    def _component(self, r, pick: int):
        r_arr = np.asarray(r, dtype=float)
        out = self.radialize(r_arr.ravel())[pick]
        return float(out[0]) if r_arr.ndim == 0 else out.reshape(r_arr.shape)

    def lower(self, r):
        return self._component(r, 0)

    def upper(self, r):
        return self._component(r, 1)

    def oscillation(self, r):
        return self._component(r, 2)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "N": self.N, "radial": self.radial.to_dict()}
        if self.amplitude is not None:
            out.update(amplitude=self.amplitude.to_dict(), mode=self.mode)
        if self.kind == "general_sampled":
            out["samples"] = len(self.samples)
        return out


def radialize(a: Potential, r) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return a.radialize(r)
