import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import splu
from tqdm import tqdm

from blowup.condition_checker import HypothesisError, compute_Hbar, local_hbar
from blowup.dual_transform import DualTransform, ProblemParams
from blowup.problem_model import Nonlinearity, Potential, calG_inverse
from blowup.quadrature import cumulative_integral
from blowup.radial_solver import (NonConvergenceError, RadialGrid, RadialSolution, SolverIntegrityError,
                                  picard_solve)

logger = logging.getLogger("BallSandwich")
logger.setLevel(logging.INFO)
if not logger.handlers:
    handler = logging.FileHandler("ball_sandwich.log", mode="a", encoding="utf-8")
    handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(message)s'))
    logger.addHandler(handler)

DIFFUSIVITY_FLOOR = 1e-8


class NumericalError(RuntimeError):
    pass


def _profile(a: Potential, which: str):
    return {"lower": a.lower, "upper": a.upper}[which]


@dataclass
class SandwichReport:
    alpha: float
    epsilon: float
    hbar: float
    beta: float
    min_gap: float
    violation_radii: List[float]
    S_beta: float
    r_max: float
    u_center_alpha: float
    u_center_beta: float
    hbar_horizon: Optional[float] = None

    @property
    def S_beta_label(self) -> str:
        if math.isinf(self.S_beta):
            return f"infinity up to R_max={self.r_max:g}"
        return f"{self.S_beta:.6g}"

    @property
    def ordered(self) -> bool:
        return not self.violation_radii

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "epsilon": self.epsilon,
            "hbar": self.hbar,
            "hbar_horizon": self.hbar_horizon,
            "beta": self.beta,
            "min_gap": self.min_gap,
            "violations": len(self.violation_radii),
            "first_violation_radii": self.violation_radii[:10],
            "S_beta": self.S_beta_label,
            "u_center_alpha": self.u_center_alpha,
            "u_center_beta": self.u_center_beta,
        }


def build_bracketing_pair(params: ProblemParams, a: Potential, g: Nonlinearity, dual: DualTransform, alpha: float,
                          epsilon: float, tol: float = 1e-8, r_max: float = 100.0,
                          grid: Optional[RadialGrid] = None, hbar: Optional[float] = None,
                          hbar_horizon: Optional[float] = None, beta: Optional[float] = None,
                          max_iter: int = 500,
                          hbar_r_max: float = 1e6) -> Tuple[RadialSolution, RadialSolution, SandwichReport]:
    """Radial sub-solution w_α (potential ā) and super-solution w_β (potential a̲), β = α + ε + H̄."""
    if params.p < 2:
        raise HypothesisError(f"sandwich construction needs p ≥ 2, got p = {params.p}")
    if not (alpha > 0 and epsilon > 0):
        raise ValueError("α > 0 and ε > 0 required")
    if hbar is None:
        if hbar_horizon is not None:
            hbar = local_hbar(a, g, params, hbar_horizon)
        else:
            verdict = compute_Hbar(a, g, params, r_max=hbar_r_max)
            if not verdict.holds or verdict.hbar_value is None or not math.isfinite(verdict.hbar_value):
                raise HypothesisError("H̄ is not finite for this potential", verdict)
            hbar = verdict.hbar_value
    beta = alpha + epsilon + hbar if beta is None else float(beta)

    grid = grid or RadialGrid(r_max)
    w_alpha = picard_solve(params, _profile(a, "upper"), g, dual, alpha, r_max, tol, max_iter, grid=grid)
    w_beta = picard_solve(params, _profile(a, "lower"), g, dual, beta, r_max, tol, max_iter, grid=grid)

    gap = w_beta.w - w_alpha.w
    finite = np.isfinite(gap)
    bad = finite & (gap < -10.0 * tol * (1.0 + np.abs(w_alpha.w)))
    violation_radii = [float(r) for r in grid.r[bad]]
    S_beta = violation_radii[0] if violation_radii else math.inf
    report = SandwichReport(float(alpha), float(epsilon), float(hbar), beta, float(np.min(gap[finite])),
                            violation_radii, S_beta, float(grid.r[-1]), w_alpha.u0, w_beta.u0, hbar_horizon)
    if violation_radii:
        logger.warning(f"w_β < w_α from r = {S_beta:.6g} ({len(violation_radii)} grid points)")
    logger.info(f"Bracketing pair α={alpha}, β={beta:.6g}, H̄={hbar:.6g}, min gap {report.min_gap:.4g}")
    return w_alpha, w_beta, report


@dataclass
class GrowthBoundReport:
    radii: np.ndarray
    majorant: np.ndarray
    crossover: float
    violations_before_crossover: int

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"r": self.radii, "majorant": self.majorant})


def calG_growth_bound(w_alpha: RadialSolution, a: Potential, g: Nonlinearity, params: ProblemParams) -> GrowthBoundReport:
    """Majorant 𝒢^{-1}(r·(∫_0^r ā)^{1/(p−1)}) and the radius r* past which w_α stays below it."""
    r = w_alpha.radii
    upper = _profile(a, "upper")
    integral = np.clip(cumulative_integral(upper, r[1:], 0.0), 0.0, None)
    majorant = np.concatenate(([math.nan], np.asarray(calG_inverse(g, params, r[1:] * integral ** (1.0 / (params.p - 1.0))))))
    above = w_alpha.w[1:] > majorant[1:]
    if above[-1]:
        raise SolverIntegrityError(f"w_α exceeds the 𝒢-majorant at r_max = {r[-1]:g}")
    if above.any():
        crossover = float(r[1:][np.flatnonzero(above)[-1] + 1])
    else:
        crossover = float(r[1])
    logger.info(f"𝒢-majorant holds from r* = {crossover:.6g}")
    return GrowthBoundReport(r, majorant, crossover, int(above.sum()))


@dataclass
class BallSolution:
    n: float
    h: float
    coords: np.ndarray
    field: np.ndarray
    inside: np.ndarray
    iterations: int
    update_history: List[float]
    lipschitz: float
    bracket_violations: int = 0
    ascent_violations: int = 0

    @property
    def sandwich_ok(self) -> bool:
        return self.bracket_violations == 0

    @property
    def values(self) -> np.ndarray:
        return np.where(self.inside, self.field, np.nan)

    def value_at(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if np.any(np.hypot(pts[:, 0], pts[:, 1]) >= self.n):
            raise ValueError("probe points must lie inside the ball")
        return RegularGridInterpolator((self.coords, self.coords), self.field)(pts)

    def to_frame(self) -> pd.DataFrame:
        X, Y = np.meshgrid(self.coords, self.coords, indexing="ij")
        return pd.DataFrame({"x": X[self.inside], "y": Y[self.inside], "w": self.field[self.inside]})


def _face_coefficients(full: np.ndarray, h: float, p: float) -> Tuple[np.ndarray, np.ndarray]:
    if p == 2:
        return np.ones((full.shape[0] - 1, full.shape[1])), np.ones((full.shape[0], full.shape[1] - 1))
    gx, gy = np.gradient(full, h)
    speed = np.hypot(gx, gy)
    kx = np.maximum((0.5 * (speed[1:, :] + speed[:-1, :])) ** (p - 2.0), DIFFUSIVITY_FLOOR)
    ky = np.maximum((0.5 * (speed[:, 1:] + speed[:, :-1])) ** (p - 2.0), DIFFUSIVITY_FLOOR)
    return kx, ky


def _assemble(inside, index, kx, ky, h, c, full):
    nu = int(index.max()) + 1
    I, J = np.nonzero(inside)
    centre = index[I, J]
    diag = np.full(nu, float(c))
    rhs = np.zeros(nu)
    rows, cols, vals = [centre], [centre], []
    for di, dj, coef in ((1, 0, kx[I, J]), (-1, 0, kx[I - 1, J]), (0, 1, ky[I, J]), (0, -1, ky[I, J - 1])):
        coef = coef / h ** 2
        diag[centre] += coef
        ni, nj = I + di, J + dj
        linked = inside[ni, nj]
        rows.append(centre[linked])
        cols.append(index[ni[linked], nj[linked]])
        vals.append(-coef[linked])
        np.add.at(rhs, centre[~linked], coef[~linked] * full[ni[~linked], nj[~linked]])
    vals.insert(0, diag[centre])
    matrix = sparse.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nu, nu))
    return matrix, rhs


def dirichlet_monotone_solve(params: ProblemParams, a: Potential, g: Nonlinearity, dual: DualTransform, n: float,
                             sub: RadialSolution, sup: RadialSolution, mesh_h: float, tol: float = 1e-8,
                             max_iter: int = 2000, lipschitz: Optional[float] = None) -> BallSolution:
    """Monotone iteration for div(|∇w|^{p−2}∇w) = a·g(f(w))·f'(w) in the disc of radius n
    with w = w_α on the boundary, started from the sub-solution.

    Each step solves −div_h(K∇_h w_{k+1}) + c·w_{k+1} = c·w_k − a·h(w_k) on a
    five-point lattice, c bounding the slope of a·h over the bracket.
    """
    if params.N != 2:
        raise ValueError("lattice solver is implemented for N = 2")
    if params.p < 2:
        raise HypothesisError(f"monotone scheme needs p ≥ 2, got p = {params.p}")
    if not (n > 0 and 0 < mesh_h < n):
        raise ValueError("need n > 0 and 0 < mesh_h < n")
    h = float(mesh_h)
    k = int(math.ceil(n / h)) + 1
    coords = h * np.arange(-k, k + 1)
    X, Y = np.meshgrid(coords, coords, indexing="ij")
    R = np.hypot(X, Y)
    inside = R < n
    touched = np.zeros_like(inside)
    touched[1:, :] |= inside[:-1, :]
    touched[:-1, :] |= inside[1:, :]
    touched[:, 1:] |= inside[:, :-1]
    touched[:, :-1] |= inside[:, 1:]
    boundary = touched & ~inside
    reach = min(float(sub.radii[-1]), float(sup.radii[-1]))
    if R[boundary].max() > reach:
        raise ValueError(f"radial profiles end at r = {reach:g}, boundary needs {R[boundary].max():.4g}")

    index = -np.ones(R.shape, dtype=int)
    index[inside] = np.arange(int(inside.sum()))
    full = sub.interpolate(np.minimum(R, sub.radii[-1]))
    a_vals = np.asarray(a.evaluate_cartesian(X[inside], Y[inside]))
    lower = sub.interpolate(R[inside])
    upper = sup.interpolate(R[inside])

    def forcing(w):
        return a_vals * np.asarray(g(dual.f(w))) * np.asarray(dual.fprime(w))

    if lipschitz is None:
        ws = np.linspace(float(lower.min()), float(max(upper.max(), lower.max())), 513)
        H = np.asarray(g(dual.f(ws))) * np.asarray(dual.fprime(ws))
        slope = float(np.max(np.diff(H) / np.diff(ws))) if ws[-1] > ws[0] else 0.0
        lipschitz = 1.1 * max(slope, 0.0) * float(max(a_vals.max(), 0.0))
    c = float(lipschitz)
    slack = 10.0 * tol + h ** 2 * (1.0 + float(np.max(np.abs(upper))))

    w = lower.copy()
    lu, rhs_bc = None, None
    history: List[float] = []
    bracket_bad = ascent_bad = 0
    for iteration in range(1, max_iter + 1):
        if lu is None or params.p != 2:
            full[inside] = w
            kx, ky = _face_coefficients(full, h, params.p)
            matrix, rhs_bc = _assemble(inside, index, kx, ky, h, c, full)
            lu = splu(matrix)
        w_new = lu.solve(c * w - forcing(w) + rhs_bc)
        if not np.all(np.isfinite(w_new)):
            raise NumericalError(f"linear solve produced non-finite values at iteration {iteration}")
        if (params.p == 2 or iteration > 3) and np.any(w_new < w - slack):
            ascent_bad += 1
        escaped = int(np.sum((w_new < lower - slack) | (w_new > upper + slack)))
        if escaped:
            if not bracket_bad:
                logger.error(f"n={n}: iterate left the bracket at {escaped} nodes (iteration {iteration}); "
                             f"mesh too coarse or hypotheses violated")
            bracket_bad += escaped
        change = float(np.max(np.abs(w_new - w)))
        w = w_new
        history.append(change)
        if change <= tol * max(1.0, float(np.max(np.abs(w)))):
            break
    else:
        raise NonConvergenceError(f"monotone iteration on the ball n={n} did not converge", history)

    full[inside] = w
    logger.info(f"Ball n={n}, h={h}: {iteration} iterations, c={c:.4g}, bracket violations {bracket_bad}")
    return BallSolution(float(n), h, coords, full, inside, iteration, history, c, bracket_bad, ascent_bad)


def solve_balls(params: ProblemParams, a: Potential, g: Nonlinearity, dual: DualTransform, radii: Sequence[float],
                sub: RadialSolution, sup: RadialSolution, mesh_h: float, tol: float = 1e-8,
                progress: bool = False) -> List[BallSolution]:
    return [dirichlet_monotone_solve(params, a, g, dual, n, sub, sup, mesh_h, tol)
            for n in tqdm(sorted(radii), desc="balls", disable=not progress)]


@dataclass
class LimitReport:
    frame: pd.DataFrame
    cauchy_ok: bool
    stabilised: List[bool] = field(default_factory=list)


def extract_limit(solutions: Sequence[BallSolution], probe_points, tol: float = 1e-3) -> LimitReport:
    """Cauchy differences of w_n at fixed points along increasing n."""
    if len(solutions) < 3:
        raise ValueError("need at least three ball solutions")
    ordered = sorted(solutions, key=lambda s: s.n)
    points = np.atleast_2d(np.asarray(probe_points, dtype=float))
    values = np.array([s.value_at(points) for s in ordered])
    rows, stabilised = [], []
    for j, (x, y) in enumerate(points):
        diffs = np.abs(np.diff(values[:, j]))
        stabilised.append(bool(diffs[-1] <= tol))
        for i, s in enumerate(ordered):
            rows.append({"x": x, "y": y, "n": s.n, "w": values[i, j],
                         "cauchy_diff": diffs[i - 1] if i else math.nan})
    cauchy_ok = all(stabilised)
    if not cauchy_ok:
        logger.warning("w_n does not stabilise at every probe point")
    return LimitReport(pd.DataFrame(rows), cauchy_ok, stabilised)
