import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from tqdm import tqdm

from blowup.condition_checker import ProbeSchedule, classify_improper_integral
from blowup.dual_transform import DualTransform, ProblemParams
from blowup.problem_model import Nonlinearity

logger = logging.getLogger("RadialSolver")
logger.setLevel(logging.INFO)
if not logger.handlers:
    handler = logging.FileHandler("radial_solver.log", mode="a", encoding="utf-8")
    handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(message)s'))
    logger.addHandler(handler)

Forcing = Callable[[np.ndarray, np.ndarray], np.ndarray]


class NonConvergenceError(RuntimeError):
    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])


class SingularityError(RuntimeError):
    def __init__(self, message, radius=None):
        super().__init__(message)
        self.radius = radius


class SolverIntegrityError(RuntimeError):
    pass


@dataclass(frozen=True)
class RadialGrid:
    """Nodes r = r_max·x² for uniform x on [0, 1]: dense near the singular origin."""
    r_max: float
    n_cells: int = 4096
    x: np.ndarray = field(init=False, repr=False, compare=False)
    r: np.ndarray = field(init=False, repr=False, compare=False)
    drdx: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (math.isfinite(self.r_max) and self.r_max > 0):
            raise ValueError("r_max must be positive")
        if self.n_cells < 4:
            raise ValueError("need at least 4 grid cells")
        x = np.linspace(0.0, 1.0, self.n_cells + 1)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "r", self.r_max * x ** 2)
        object.__setattr__(self, "drdx", 2.0 * self.r_max * x)

    def cumulative(self, values: np.ndarray) -> np.ndarray:
        """∫_0^{r_i} values dr at every node, through a cubic spline in x."""
        return CubicSpline(self.x, values * self.drdx).antiderivative()(self.x)

    def refined(self) -> "RadialGrid":
        return RadialGrid(self.r_max, 2 * self.n_cells)


@dataclass
class RadialSolution:
    alpha: float
    radii: np.ndarray
    w: np.ndarray
    u: np.ndarray
    iterations: int
    picard_residual: float
    a_infty: float
    dw: Optional[np.ndarray] = None
    method: str = "picard"
    converged: bool = True
    blowup_detected: bool = False
    monotone_iterates: bool = True
    ode_crosscheck_deviation: float = math.nan
    blowup_lower_bound_constant: float = math.nan
    gamma_alpha_estimate: Optional[float] = None
    gamma_alpha_bound: Optional[float] = None
    residual_history: List[float] = field(default_factory=list)
    grid: Optional[RadialGrid] = field(default=None, repr=False)

    @property
    def u0(self) -> float:
        return float(self.u[0])

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame({"r": self.radii, "w": self.w, "u": self.u})
        if self.dw is not None:
            df["dw"] = self.dw
        return df

    def interpolate(self, r):
        """w at arbitrary radii inside the solved range; NaN outside."""
        return CubicSpline(self.radii, self.w, extrapolate=False)(r)

    def summary(self) -> dict:
        return {
            "alpha": self.alpha,
            "u0": self.u0,
            "method": self.method,
            "converged": self.converged,
            "iterations": self.iterations,
            "picard_residual": self.picard_residual,
            "ode_crosscheck_deviation": self.ode_crosscheck_deviation,
            "blowup_lower_bound_constant": self.blowup_lower_bound_constant,
            "blowup_detected": self.blowup_detected,
            "gamma_alpha_estimate": self.gamma_alpha_estimate,
            "gamma_alpha_bound": self.gamma_alpha_bound,
            "monotone_iterates": self.monotone_iterates,
            "a_infty": self.a_infty,
            "r_max": float(self.radii[-1]),
            "w_max": float(np.max(self.w)),
        }


def radial_forcing(a_radial: Callable, g: Nonlinearity, dual: DualTransform) -> Forcing:
    """h(r, w) = a(r)·g(f(w))·f'(w)."""
    def forcing(r, w):
        return np.asarray(a_radial(r), dtype=float) * np.asarray(g(dual.f(w))) * np.asarray(dual.fprime(w))
    return forcing


def _radial_map(grid: RadialGrid, h: np.ndarray, alpha: float, params: ProblemParams) -> Tuple[np.ndarray, np.ndarray]:
    N = params.N
    r = grid.r
    J = np.clip(grid.cumulative(r ** (N - 1) * h), 0.0, None)
    flux = np.zeros_like(r)
    flux[1:] = r[1:] ** (1 - N) * J[1:]
    dw = flux ** (1.0 / (params.p - 1.0))
    return alpha + grid.cumulative(dw), dw


def picard_solve(params: ProblemParams, a_radial: Callable, g: Nonlinearity, dual: DualTransform, alpha: float,
                 r_max: float, tol: float = 1e-8, max_iter: int = 500, grid: Optional[RadialGrid] = None,
                 forcing: Optional[Forcing] = None, relaxation: float = 1.0, overflow_guard: float = 1e12,
                 crosscheck: bool = False) -> RadialSolution:
    """Fixed point of w ↦ α + ∫_0^r (t^{1−N}∫_0^t s^{N−1}h(s, w) ds)^{1/(p−1)} dt from w ≡ α."""
    if not alpha > 0:
        raise ValueError(f"α > 0 required, got {alpha}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not 0 < relaxation <= 1:
        raise ValueError("relaxation must lie in (0, 1]")
    grid = grid or RadialGrid(r_max)
    r = grid.r
    a_vals = np.asarray(a_radial(r), dtype=float)
    if np.any(a_vals < 0):
        raise ValueError("a must be nonnegative")
    h_fun = forcing or radial_forcing(a_radial, g, dual)

    w = np.full_like(r, float(alpha))
    dw = np.zeros_like(r)
    history: List[float] = []
    omega, previous, monotone = relaxation, math.inf, True
    for iteration in range(1, max_iter + 1):
        target, dw = _radial_map(grid, np.asarray(h_fun(r, w), dtype=float), alpha, params)
        if not np.all(np.isfinite(target)) or np.max(target) > overflow_guard:
            return _blowup_solution(params, a_radial, g, dual, alpha, grid, target, iteration, history,
                                    overflow_guard, float(np.max(a_vals)))
        update = target - w
        residual = float(np.max(np.abs(update) / (1.0 + np.abs(w))))
        if residual > previous and omega > 1.0 / 64:
            omega *= 0.5
            logger.warning(f"α={alpha}: residual rose to {residual:.3e}, relaxation halved to {omega}")
        if np.any(update < -10.0 * tol * (1.0 + np.abs(w))):
            if monotone:
                logger.warning(f"α={alpha}: Picard iterate decreased at iteration {iteration}")
            monotone = False
        w = w + omega * update
        history.append(residual)
        if residual < tol:
            break
        previous = residual
    else:
        logger.error(f"α={alpha}: no convergence after {max_iter} iterations (residual {history[-1]:.3e})")
        raise NonConvergenceError(f"Picard iteration did not converge in {max_iter} iterations", history)

    solution = RadialSolution(float(alpha), r.copy(), w, np.asarray(dual.f(w)), iteration, history[-1],
                              float(np.max(a_vals)), dw=dw, monotone_iterates=monotone,
                              residual_history=history, grid=grid)
    logger.info(f"α={alpha}: converged in {iteration} iterations, w({r[-1]:g}) = {w[-1]:.6g}")
    if crosscheck:
        shot = ode_shoot(params, a_radial, g, dual, alpha, r_max, tol, grid=grid, forcing=forcing,
                         overflow_guard=overflow_guard)
        n = shot.w.size
        solution.ode_crosscheck_deviation = float(np.max(np.abs(shot.w - w[:n])))
    return solution


def _blowup_solution(params, a_radial, g, dual, alpha, grid, target, iteration, history, guard, a_infty):
    over = ~np.isfinite(target) | (target > guard)
    gamma = float(grid.r[np.argmax(over)])
    w = np.where(over, np.nan, target)
    bound = blowup_radius_bound(g, dual, params, alpha, a_infty)
    logger.error(f"α={alpha}: iterate exceeded {guard:g} at r ≈ {gamma:.4g} "
                 f"(a-priori existence radius ≥ {bound:.4g})")
    if gamma < bound:
        logger.error(f"α={alpha}: blow-up radius estimate contradicts the energy bound")
    u = np.full_like(w, np.nan)
    u[~over] = dual.f(w[~over])
    return RadialSolution(float(alpha), grid.r.copy(), w, u, iteration, math.inf, a_infty, converged=False,
                          blowup_detected=True, gamma_alpha_estimate=gamma, gamma_alpha_bound=bound,
                          residual_history=history, grid=grid)


def ode_shoot(params: ProblemParams, a_radial: Callable, g: Nonlinearity, dual: DualTransform, alpha: float,
              r_max: float, tol: float = 1e-8, grid: Optional[RadialGrid] = None, forcing: Optional[Forcing] = None,
              overflow_guard: float = 1e12) -> RadialSolution:
    """Integrate (w, v), v = r^{N−1}(w')^{p−1}, from a series start near r = 0."""
    if not alpha > 0:
        raise ValueError(f"α > 0 required, got {alpha}")
    grid = grid or RadialGrid(r_max)
    N, p = params.N, params.p
    h_fun = forcing or radial_forcing(a_radial, g, dual)

    def h_at(r, w):
        return float(np.asarray(h_fun(np.array([r]), np.array([w])), dtype=float).ravel()[0])

    r_start = float(grid.r[1])
    h0 = h_at(0.0, alpha)
    v_start = h0 * r_start ** N / N
    w_start = alpha + (p - 1.0) / p * (h0 / N) ** (1.0 / (p - 1.0)) * r_start ** (p / (p - 1.0))

    def rhs(r, y):
        w, v = y
        return [(max(v, 0.0) / r ** (N - 1)) ** (1.0 / (p - 1.0)), r ** (N - 1) * h_at(r, w)]

    def overflow(r, y):
        return y[0] - overflow_guard
    overflow.terminal = True

    sol = solve_ivp(rhs, (r_start, grid.r[-1]), [w_start, v_start], method="DOP853", t_eval=grid.r[1:],
                    rtol=1e-2 * tol, atol=1e-2 * tol, events=overflow)
    if sol.status == -1:
        raise SingularityError(f"step size collapsed near r = {sol.t[-1]:.6g}: {sol.message}", float(sol.t[-1]))

    w = np.concatenate(([alpha], sol.y[0]))
    radii = grid.r[: w.size]
    gamma = float(sol.t_events[0][0]) if sol.status == 1 and sol.t_events[0].size else None
    if gamma is not None:
        logger.error(f"α={alpha}: shooting reached {overflow_guard:g} at r = {gamma:.6g}")
    dw = np.concatenate(([0.0], (np.clip(sol.y[1], 0.0, None) / sol.t ** (N - 1)) ** (1.0 / (p - 1.0))))
    return RadialSolution(float(alpha), radii.copy(), w, np.asarray(dual.f(w)), int(sol.nfev), 0.0,
                          float(np.max(np.asarray(a_radial(radii)))), dw=dw, method="ode_shoot",
                          converged=gamma is None, blowup_detected=gamma is not None, gamma_alpha_estimate=gamma,
                          grid=grid)


def _p_laplacian(v: np.ndarray, r: np.ndarray, params: ProblemParams) -> np.ndarray:
    N, p = params.N, params.p
    dv = np.diff(v) / np.diff(r)
    mid = 0.5 * (r[1:] + r[:-1])
    flux = mid ** (N - 1) * np.sign(dv) * np.abs(dv) ** (p - 1.0)
    out = np.full_like(v, np.nan)
    out[1:-1] = (flux[1:] - flux[:-1]) / (0.5 * (r[2:] - r[:-2])) / r[1:-1] ** (N - 1)
    return out


@dataclass
class ResidualProfile:
    radii: np.ndarray
    residual: np.ndarray
    max_abs: float
    r_min: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"r": self.radii, "residual": self.residual})


def residual_original(solution: RadialSolution, a_radial: Callable, g: Nonlinearity, params: ProblemParams,
                      r_min: float = 0.1, u: Optional[np.ndarray] = None) -> ResidualProfile:
    """Residual of Δ_p u + Δ_p(u^{2γ})·|u|^{2γ−2}u − a g(u) by centred differences on the solution grid."""
    r = solution.radii
    uu = np.asarray(solution.u if u is None else u, dtype=float)
    two_g = 2.0 * params.gamma
    res = (_p_laplacian(uu, r, params)
           + _p_laplacian(np.abs(uu) ** two_g, r, params) * np.abs(uu) ** (two_g - 2.0) * uu
           - np.asarray(a_radial(r)) * np.asarray(g(uu)))
    keep = (r >= r_min) & np.isfinite(res)
    keep[-1] = False
    max_abs = float(np.max(np.abs(res[keep]))) if keep.any() else math.nan
    return ResidualProfile(r[keep], res[keep], max_abs, r_min)


@dataclass
class RefinementStudy:
    cells: List[int]
    max_residuals: List[float]
    orders: List[float]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"cells": self.cells, "max_residual": self.max_residuals,
                             "order": [math.nan] + self.orders})


def residual_refinement_study(params: ProblemParams, a_radial: Callable, g: Nonlinearity, dual: DualTransform,
                              alpha: float, r_max: float, base_cells: int = 512, levels: int = 3,
                              r_min: float = 0.1, tol: float = 1e-11, max_iter: int = 500) -> RefinementStudy:
    """Solve on grids with cells base, 2·base, ... and report observed residual orders."""
    cells, maxima = [], []
    grid = RadialGrid(r_max, base_cells)
    for _ in range(levels):
        solution = picard_solve(params, a_radial, g, dual, alpha, r_max, tol, max_iter, grid=grid)
        maxima.append(residual_original(solution, a_radial, g, params, r_min).max_abs)
        cells.append(grid.n_cells)
        grid = grid.refined()
    orders = [math.log2(a / b) for a, b in zip(maxima[:-1], maxima[1:])]
    logger.info(f"Refinement study α={alpha}: residuals {maxima}, orders {orders}")
    return RefinementStudy(cells, maxima, orders)


@dataclass
class LowerBoundReport:
    M: float
    A1: float
    A2: float
    ratio_inf: float
    forcing_inf: float
    envelope: np.ndarray
    min_margin: float
    holds: bool


def _envelope_constants(dual: DualTransform, g: Nonlinearity, params: ProblemParams, t_lo: float,
                        t_hi: float, n_probes: int = 2000) -> Tuple[float, float, float, float]:
    t = np.unique(np.concatenate(([t_lo], np.geomspace(t_lo, max(t_hi, 2.0 * t_lo), n_probes))))
    f = np.asarray(dual.f(t))
    fp = np.asarray(dual.fprime(t))
    A1 = float(np.min(f / t ** params.envelope_exponent))
    A2 = float(np.min(fp * t ** (2.0 * params.gamma - 1.0)))
    ratio_inf = float(np.min(np.asarray(g(f)) / f ** params.growth_exponent))
    forcing_inf = float(np.min(np.asarray(g(f)) * fp))
    return A1, A2, ratio_inf, forcing_inf


def blowup_lower_bound(solution: RadialSolution, dual: DualTransform, g: Nonlinearity, params: ProblemParams,
                       a_radial: Callable, calA: Optional[float] = None, t_hi: float = 1e8,
                       tol: float = 1e-8) -> LowerBoundReport:
    """M = A₂·A₁^{2γ(2γ−1)}·inf_{t≥α} g(f(t))/f(t)^{2γ(2γ−1)} and the envelope
    w ≥ α + M^{1/(p−1)}∫_0^r (t^{1−N}∫_0^t s^{N−1}a ds)^{1/(p−1)} dt."""
    alpha = solution.alpha
    t_lo = calA if calA is not None and 0 < calA <= alpha else alpha
    t_top = max(t_hi, float(np.nanmax(solution.w)))
    A1, A2, ratio_inf, forcing_inf = _envelope_constants(dual, g, params, t_lo, t_top)
    M = A2 * A1 ** params.growth_exponent * ratio_inf
    if M > forcing_inf * (1.0 + 1e-9):
        raise SolverIntegrityError(f"M = {M:.6g} exceeds inf g(f)f' = {forcing_inf:.6g}")

    grid = solution.grid or RadialGrid(float(solution.radii[-1]), solution.radii.size - 1)
    if grid.r.size != solution.radii.size:
        raise ValueError("solution radii do not match its grid")
    _, shape = _radial_map(grid, np.asarray(a_radial(grid.r), dtype=float), 0.0, params)
    envelope = alpha + M ** (1.0 / (params.p - 1.0)) * grid.cumulative(shape)
    margin = solution.w - envelope
    allowed = 10.0 * tol * (1.0 + np.abs(solution.w))
    finite = np.isfinite(margin)
    holds = bool(np.all(margin[finite] >= -allowed[finite]))
    if not holds:
        worst = int(np.argmin(np.where(finite, margin + allowed, np.inf)))
        raise SolverIntegrityError(f"α={alpha}: w falls below the non-extinction envelope at r = {grid.r[worst]:.6g} "
                                   f"by {-margin[worst]:.3e}")
    solution.blowup_lower_bound_constant = M
    return LowerBoundReport(M, A1, A2, ratio_inf, forcing_inf, envelope, float(np.min(margin[finite])), holds)


def blowup_radius_bound(g: Nonlinearity, dual: DualTransform, params: ProblemParams, alpha: float,
                        a_infty: float) -> float:
    """Lower bound on the existence radius Γ(α):
    Γ(α) ≥ (a_∞·p/(p−1))^{−1/p} ∫_α^∞ G(f(t))^{−1/p} dt, infinite when the integral diverges."""
    if a_infty <= 0:
        return math.inf
    schedule = ProbeSchedule(r0=2.0 * alpha, lower=alpha)

    def integrand(t):
        G = np.asarray(g.antiderivative(np.asarray(dual.f(t))))
        with np.errstate(divide="ignore"):
            return np.where(G > 0, G, np.inf) ** (-1.0 / params.p)

    verdict = classify_improper_integral(integrand, schedule, "unknown", "blowup_radius")
    if verdict.tail == "divergent":
        return math.inf
    scale = (a_infty * params.p / (params.p - 1.0)) ** (-1.0 / params.p)
    return scale * verdict.probe_values[-1][1]


@dataclass
class ThresholdEstimate:
    calA: float
    A1: float
    A2: float
    probe_alphas: List[Tuple[float, bool]]
    stray_failures: List[float] = field(default_factory=list)


@dataclass
class RadialFamily:
    solutions: List[RadialSolution]
    threshold: Optional[ThresholdEstimate]
    ordered: bool = True
    ordering_violations: List[Tuple[float, float, float]] = field(default_factory=list)
    failures: Dict[float, str] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([s.summary() for s in self.solutions])


def sweep_family(params: ProblemParams, a_radial: Callable, g: Nonlinearity, dual: DualTransform,
                 alphas: Sequence[float], r_max: float, tol: float = 1e-8, threads: int = 1,
                 grid: Optional[RadialGrid] = None, max_iter: int = 500, refine_threshold: bool = True,
                 resolution: float = 1e-3, progress: bool = False) -> RadialFamily:
    """Solve for every α, estimate the threshold 𝒜 and check w_{α₁} ≤ w_{α₂} for α₁ < α₂."""
    alphas = sorted(float(a) for a in alphas)
    if not alphas:
        return RadialFamily([], None)
    if alphas[0] <= 0:
        raise ValueError("all α must be positive")
    grid = grid or RadialGrid(r_max)

    def attempt(alpha: float):
        try:
            solution = picard_solve(params, a_radial, g, dual, alpha, r_max, tol, max_iter, grid=grid)
            if solution.blowup_detected:
                return solution, False, "finite blow-up detected"
            bound = blowup_lower_bound(solution, dual, g, params, a_radial, tol=tol)
            return solution, bound.M > 0, None if bound.M > 0 else "M = 0"
        except (NonConvergenceError, SolverIntegrityError, SingularityError) as e:
            return None, False, str(e)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        results = list(tqdm(executor.map(attempt, alphas), total=len(alphas), desc="α sweep", disable=not progress))

    probes = [(alpha, ok) for alpha, (_, ok, _) in zip(alphas, results)]
    failures = {alpha: reason for alpha, (_, ok, reason) in zip(alphas, results) if not ok}
    solutions = [s for s, ok, _ in results if ok]

    threshold = _estimate_threshold(probes, attempt, dual, g, params, refine_threshold, resolution)
    violations = []
    for lo_sol, hi_sol in zip(solutions[:-1], solutions[1:]):
        excess = lo_sol.w - hi_sol.w
        bad = excess > 10.0 * tol * (1.0 + np.abs(hi_sol.w))
        if bad.any():
            violations.append((lo_sol.alpha, hi_sol.alpha, float(grid.r[np.argmax(bad)])))
    if violations:
        logger.error(f"Comparison property violated: {violations}")
    logger.info(f"Sweep over {len(alphas)} values of α: {len(solutions)} succeeded, 𝒜 ≈ "
                f"{threshold.calA if threshold else float('nan'):.4g}")
    return RadialFamily(solutions, threshold, not violations, violations, failures)


def _estimate_threshold(probes, attempt, dual, g, params, refine, resolution) -> ThresholdEstimate:
    """𝒜 is the smallest α that succeeded, refined by bisection against the largest failure below it."""
    probes = list(probes)
    succeeded = [a for a, ok in probes if ok]
    if not succeeded:
        return ThresholdEstimate(math.inf, math.nan, math.nan, probes)
    hi = min(succeeded)
    below = [a for a, ok in probes if not ok and a < hi]
    lo = max(below) if below else 0.0
    stray = sorted(a for a, ok in probes if not ok and a > hi)
    if stray:
        logger.warning(f"Solves failed above the smallest successful α = {hi:g}: {stray}")
    while refine and hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        _, ok, _ = attempt(mid)
        probes.append((mid, ok))
        if ok:
            hi = mid
        else:
            lo = mid
    A1, A2, _, _ = _envelope_constants(dual, g, params, hi, 1e8)
    return ThresholdEstimate(hi, A1, A2, sorted(probes), stray)
