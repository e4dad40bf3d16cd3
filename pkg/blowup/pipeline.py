import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from blowup.ball_sandwich import build_bracketing_pair, calG_growth_bound, extract_limit, solve_balls
from blowup.condition_checker import CompatibilityReport, hypothesis_matrix
from blowup.config import RunConfig, numerics_dict
from blowup.dual_transform import DualTransform, verify_properties
from blowup.radial_solver import (RadialGrid, blowup_lower_bound, picard_solve, residual_refinement_study,
                                  sweep_family)
from blowup.storage import OutputStore

logger = logging.getLogger("Pipeline")
logger.setLevel(logging.INFO)
if not logger.handlers:
    console_handler = logging.StreamHandler()
    file_handler = logging.FileHandler("pipeline.log", mode="a", encoding="utf-8")
    formatter = logging.Formatter("[%(levelname)s] %(asctime)s - %(message)s", "%Y-%m-%d %H:%M:%S")
    console_handler.setFormatter(formatter)
    file_handler.setFormatter(formatter)
    console_handler.setLevel(logging.WARNING)
    logger.addHandler(console_handler)
    logger.addHandler(file_handler)

EXIT_CODES = {"ok": 0, "error": 1, "hypothesis_failed": 2}


class GateClosed(Exception):
    pass


@dataclass
class RunReport:
    task: str
    config: Dict[str, Any]
    status: str = "ok"
    theorem_covered: bool = True
    gates: Dict[str, Any] = field(default_factory=dict)
    properties: Optional[Dict[str, Any]] = None
    verdicts: List[Dict[str, Any]] = field(default_factory=list)
    solutions: List[Dict[str, Any]] = field(default_factory=list)
    threshold: Optional[Dict[str, Any]] = None
    refinement: Optional[Dict[str, Any]] = None
    sandwich: Optional[Dict[str, Any]] = None
    balls: List[Dict[str, Any]] = field(default_factory=list)
    limit: Optional[Dict[str, Any]] = None
    timing: Dict[str, float] = field(default_factory=dict)
    files: List[Dict[str, Any]] = field(default_factory=list)
    errors: List[Dict[str, str]] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.status]

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "status": self.status,
            "exit_code": self.exit_code,
            "theorem_covered": self.theorem_covered,
            "config": self.config,
            "gates": self.gates,
            "properties": self.properties,
            "verdicts": self.verdicts,
            "solutions": self.solutions,
            "threshold": self.threshold,
            "refinement": self.refinement,
            "sandwich": self.sandwich,
            "balls": self.balls,
            "limit": self.limit,
            "timing": self.timing,
            "files": self.files,
            "errors": self.errors,
        }


class _RunContext:
    def __init__(self, config: RunConfig, store: OutputStore, report: RunReport, override: bool, threads: int,
                 progress: bool):
        self.config = config
        self.params = config.params
        self.g = config.nonlinearity
        self.a = config.potential
        self.numerics = config.numerics
        self.store = store
        self.report = report
        self.override = override
        self.threads = threads
        self.progress = progress
        self.matrix: Optional[CompatibilityReport] = None
        self.pair = None
        self._dual = None
        self._grid = None

    @property
    def dual(self) -> DualTransform:
        if self._dual is None:
            self._dual = DualTransform(self.params, self.numerics.transform_tol)
        return self._dual

    @property
    def grid(self) -> RadialGrid:
        if self._grid is None:
            self._grid = RadialGrid(self.numerics.r_max, self.numerics.n_cells)
        return self._grid

    def a_radial(self) -> Callable:
        if self.a.kind == "radial_profile":
            return self.a.radial
        return self.a.lower


def _stage_transform(ctx: _RunContext):
    t_min, t_max, count = ctx.numerics.transform_grid
    positive = np.geomspace(t_min, t_max, int(count))
    grid = np.concatenate((-positive[::-1], [0.0], positive))
    floor = 2.0 * ctx.params.gamma - 1.0
    delta = max(ctx.g.delta, floor) if ctx.g.delta is not None else floor
    report = verify_properties(ctx.params, grid, delta, dual=ctx.dual)
    ctx.report.properties = report.to_dict()
    ctx.store.write_csv("transform_properties.csv", report.summary_frame())
    ctx.store.write_csv("transform_table.csv", report.table)
    ctx.store.write_dat("transform_table.dat", report.table[["t", "f", "fprime"]])


def _stage_hypotheses(ctx: _RunContext):
    matrix = hypothesis_matrix(ctx.params, ctx.g, ctx.a, hbar_r_max=ctx.numerics.hbar_r_max)
    ctx.matrix = matrix
    ctx.report.verdicts = [item.to_dict() for v in matrix.verdicts.values() for item in [v] + v.related]
    ctx.report.gates = {**matrix.checks, "radial_family_ok": matrix.radial_family_ok,
                        "sandwich_ok": matrix.sandwich_ok, "ball_ok": _ball_ok(ctx, matrix)}
    ctx.report.gates["flags"] = list(matrix.flags)
    ctx.store.write_csv("verdicts.csv", matrix.verdict_frame())
    for name, verdict in matrix.verdicts.items():
        if verdict.probe_values:
            ctx.store.write_csv(f"probes_{name}.csv", verdict.probe_frame())


def _ball_ok(ctx: _RunContext, matrix: CompatibilityReport) -> bool:
    # bounded balls only need the oscillation budget up to the largest radius
    v = matrix.verdicts
    return bool(v["KO_G"].holds and v["growth_g"].holds and v["potential_div"].holds
                and matrix.checks["p_at_least_two"] and matrix.checks["delta_admissible"]
                and matrix.checks["delta_monotone"])


def _gate(flag: str) -> Callable[[_RunContext], None]:
    def stage(ctx: _RunContext):
        if ctx.report.gates.get(flag):
            return
        reasons = "; ".join(ctx.matrix.flags) if ctx.matrix else flag
        if ctx.override:
            ctx.report.theorem_covered = False
            logger.warning(f"Hypothesis gate '{flag}' overridden: {reasons}")
            return
        ctx.report.errors.append({"stage": f"gate:{flag}", "type": "HypothesisError", "message": reasons})
        raise GateClosed(reasons)
    return stage


def _stage_radial(ctx: _RunContext):
    n = ctx.numerics
    a_radial = ctx.a_radial()
    solution = picard_solve(ctx.params, a_radial, ctx.g, ctx.dual, n.alpha, n.r_max, n.tol, n.max_iter,
                            grid=ctx.grid, overflow_guard=n.overflow_guard, crosscheck=n.crosscheck)
    if not solution.blowup_detected:
        blowup_lower_bound(solution, ctx.dual, ctx.g, ctx.params, a_radial, tol=n.tol)
    summary = solution.summary()
    summary["theorem_covered"] = ctx.report.theorem_covered
    ctx.report.solutions.append(summary)
    ctx.store.write_csv(f"radial_alpha_{n.alpha:g}.csv", solution.to_frame())
    ctx.store.write_dat(f"radial_alpha_{n.alpha:g}.dat", solution.to_frame())
    if solution.blowup_detected:
        return
    study = residual_refinement_study(ctx.params, a_radial, ctx.g, ctx.dual, n.alpha, min(n.r_max, 20.0))
    ctx.report.refinement = {"cells": study.cells, "max_residuals": study.max_residuals, "orders": study.orders}
    ctx.store.write_csv("residual_refinement.csv", study.to_frame())


def _stage_sweep(ctx: _RunContext):
    n = ctx.numerics
    family = sweep_family(ctx.params, ctx.a_radial(), ctx.g, ctx.dual, n.alphas, n.r_max, n.tol, ctx.threads,
                          grid=ctx.grid, max_iter=n.max_iter, refine_threshold=n.refine_threshold,
                          progress=ctx.progress)
    for solution in family.solutions:
        summary = solution.summary()
        summary["theorem_covered"] = ctx.report.theorem_covered
        ctx.report.solutions.append(summary)
    if family.threshold is not None:
        t = family.threshold
        ctx.report.threshold = {"calA": t.calA, "A1": t.A1, "A2": t.A2, "ordered": family.ordered,
                                "ordering_violations": family.ordering_violations,
                                "failures": {f"{k:g}": v for k, v in family.failures.items()},
                                "probe_alphas": [list(p) for p in t.probe_alphas],
                                "stray_failures": t.stray_failures}
    if family.solutions:
        profiles = pd.DataFrame({"r": ctx.grid.r})
        for solution in family.solutions:
            profiles[f"w_{solution.alpha:g}"] = solution.w
        ctx.store.write_csv("family.csv", family.to_frame())
        ctx.store.write_dat("family_profiles.dat", profiles)


def _stage_sandwich(ctx: _RunContext):
    n = ctx.numerics
    horizon = max(n.ball_radii) + 2.0 * n.mesh_h if ctx.params.N == 2 else None
    w_alpha, w_beta, report = build_bracketing_pair(ctx.params, ctx.a, ctx.g, ctx.dual, n.alpha, n.epsilon, n.tol,
                                                    n.r_max, grid=ctx.grid, hbar_horizon=horizon,
                                                    max_iter=n.max_iter, hbar_r_max=n.hbar_r_max)
    bound = calG_growth_bound(w_alpha, ctx.a, ctx.g, ctx.params)
    ctx.pair = (w_alpha, w_beta)
    ctx.report.sandwich = {**report.to_dict(), "calG_crossover": bound.crossover,
                           "theorem_covered": ctx.report.theorem_covered}
    profiles = pd.DataFrame({"r": w_alpha.radii, "w_alpha": w_alpha.w, "w_beta": w_beta.w,
                             "calG_majorant": bound.majorant})
    ctx.store.write_csv("sandwich_profiles.csv", profiles)
    ctx.store.write_dat("sandwich_profiles.dat", profiles)


def _stage_balls(ctx: _RunContext):
    n = ctx.numerics
    if ctx.params.N != 2:
        raise ValueError("ball solves are implemented for N = 2")
    w_alpha, w_beta = ctx.pair
    balls = solve_balls(ctx.params, ctx.a, ctx.g, ctx.dual, n.ball_radii, w_alpha, w_beta, n.mesh_h, n.tol,
                        progress=ctx.progress)
    for ball in balls:
        ctx.report.balls.append({"n": ball.n, "h": ball.h, "iterations": ball.iterations,
                                 "sandwich_ok": ball.sandwich_ok, "bracket_violations": ball.bracket_violations,
                                 "ascent_violations": ball.ascent_violations, "lipschitz": ball.lipschitz})
        ctx.store.write_csv(f"ball_n{ball.n:g}.csv", ball.to_frame())
    if len(balls) >= 3:
        limit = extract_limit(balls, n.probe_points)
        ctx.report.limit = {"cauchy_ok": limit.cauchy_ok, "stabilised": limit.stabilised}
        ctx.store.write_csv("ball_limit.csv", limit.frame)


STAGES: Dict[str, Callable[[_RunContext], None]] = {
    "transform": _stage_transform,
    "hypotheses": _stage_hypotheses,
    "gate_radial": _gate("radial_family_ok"),
    "gate_sandwich": _gate("sandwich_ok"),
    "gate_ball": _gate("ball_ok"),
    "radial": _stage_radial,
    "sweep": _stage_sweep,
    "sandwich": _stage_sandwich,
    "balls": _stage_balls,
}


def plan_stages(config: RunConfig) -> List[str]:
    task = config.task
    if task == "verify_transform":
        return ["transform"]
    if task == "check_hypotheses":
        return ["hypotheses"]
    if task == "solve_radial":
        return ["hypotheses", "gate_radial", "radial"]
    if task == "sweep_family":
        return ["hypotheses", "gate_radial", "sweep"]
    if task == "sandwich":
        return ["hypotheses", "gate_sandwich", "sandwich"]
    if task == "ball_solve":
        return ["hypotheses", "gate_ball", "sandwich", "balls"]
    stages = ["transform", "hypotheses"]
    if config.potential.kind == "radial_profile":
        return stages + ["gate_radial", "radial", "sweep"]
    if config.params.N == 2:
        return stages + ["gate_ball", "sandwich", "balls"]
    return stages + ["gate_sandwich", "sandwich"]


def run(config: RunConfig, output_dir: Optional[str] = None, override_hypotheses: bool = False, threads: int = 1,
        progress: bool = False) -> RunReport:
    """Execute the task graph of ``config`` and write artifacts plus one report.json."""
    store = OutputStore(output_dir or config.output_dir)
    report = RunReport(config.task, {**config.to_dict(), "numerics": numerics_dict(config.numerics)})
    ctx = _RunContext(config, store, report, override_hypotheses, max(1, int(threads)), progress)
    try:
        for stage in plan_stages(config):
            started = time.perf_counter()
            try:
                STAGES[stage](ctx)
            except GateClosed:
                report.status = "hypothesis_failed"
                logger.warning(f"Stopped at {stage}: hypotheses not satisfied")
                break
            except Exception as e:
                report.status = "error"
                report.errors.append({"stage": stage, "type": type(e).__name__, "message": str(e)})
                logger.error(f"Stage {stage} failed: {e}")
                break
            finally:
                report.timing[stage] = time.perf_counter() - started
    finally:
        report.files = store.manifest()
        store.write_json("report.json", report.to_dict(), record=False)
    logger.info(f"Task {config.task} finished with status {report.status}")
    return report


def write_error_report(output_dir: str, task: Optional[str], errors: List[str]) -> RunReport:
    """Report for runs that never got a valid configuration."""
    store = OutputStore(output_dir)
    report = RunReport(task or "unknown", {}, status="error",
                       errors=[{"stage": "config", "type": "ConfigValidationError", "message": m} for m in errors])
    store.write_json("report.json", report.to_dict(), record=False)
    return report
