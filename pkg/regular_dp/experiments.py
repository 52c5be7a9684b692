"""
The reproducible bundle written by `regular-dp report`.

It covers the sign regimes of the two-state shortest-path model, the
perturbation curve of its a = 0, b > 0 case and the optimistic PI run that
stops strictly between J* and J*_S.
"""

import logging
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import BaseModel

from .extreal import to_token
from .model import FiniteModel
from .models import DetSpParams, build_detsp
from .oracle import brute_force_optima
from .regions import SRegionDescriptor
from .regularity import check_strong_pi_conditions, fixed_point_scan
from .schema import ExperimentConfig, Token
from .solvers import (
    PerturbationSchedule,
    TieBreakRule,
    find_proper_policy,
    optimistic_pi,
    perturbation_solve,
    policy_iteration,
    value_iteration,
)
from .storage import write_json, write_perturbation_csv, write_trace_csv

logger = logging.getLogger(__name__)

REGIMES: tuple[tuple[float, float], ...] = ((1.0, 5.0), (0.0, 3.0), (0.0, -2.0), (-1.0, 5.0))
SCAN_AXIS = tuple(np.linspace(-5.0, 5.0, 21))


class RunEntry(BaseModel):
    outcome: str
    value: Token
    iterations: int
    cycle_length: int = 0


class RegimeRow(BaseModel):
    a: float
    b: float
    model_fingerprint: str
    j_star: Token
    j_star_s: Token
    fixed_points: list[float]
    vi_from_above: RunEntry
    vi_from_below: RunEntry
    pi_keep_current: RunEntry
    pi_always_switch: RunEntry
    strong_pi_conditions: bool


class BundleReport(BaseModel):
    config: ExperimentConfig
    regimes: list[RegimeRow]
    optimistic_limit: Token
    perturbation_limit: Token
    perturbation_extrapolated: bool


def _run_entry(trace) -> RunEntry:
    return RunEntry(
        outcome=trace.outcome.value,
        value=to_token(trace.final.values[0]),
        iterations=trace.iterations,
        cycle_length=len(trace.cycle),
    )


def regime_row(a: float, b: float, cfg: Optional[ExperimentConfig] = None) -> RegimeRow:
    cfg = cfg or ExperimentConfig()
    model = build_detsp(DetSpParams(a=a, b=b))
    S = SRegionDescriptor.all_real(horizon_cap=cfg.horizon_cap, blowup_bound=cfg.blowup_bound)
    oracle = brute_force_optima(model, S, limit=cfg.enumeration_limit)
    fixed = fixed_point_scan(model, [SCAN_AXIS, None], tol=cfg.tol)
    mu = find_proper_policy(model)
    limits = dict(horizon_cap=cfg.horizon_cap, blowup_bound=cfg.blowup_bound)
    return RegimeRow(
        a=a,
        b=b,
        model_fingerprint=model.fingerprint,
        j_star=to_token(oracle.j_star.values[0]),
        j_star_s=to_token(oracle.j_star_s.values[0]),
        fixed_points=[float(J.values[0]) for J in fixed],
        vi_from_above=_run_entry(value_iteration(model, model.lift(b + 2.0), tol=cfg.tol, max_iter=cfg.max_iter)),
        vi_from_below=_run_entry(value_iteration(model, model.lift(b - 1.0), tol=cfg.tol, max_iter=cfg.max_iter)),
        pi_keep_current=_run_entry(policy_iteration(model, mu, TieBreakRule.KEEP_CURRENT_IF_TIED, **limits)),
        pi_always_switch=_run_entry(policy_iteration(model, mu, TieBreakRule.ALWAYS_SWITCH_IF_TIED, **limits)),
        strong_pi_conditions=check_strong_pi_conditions(model, S).conditions_hold,
    )


def pathology_model() -> FiniteModel:
    return build_detsp(DetSpParams(a=0.0, b=3.0))


def write_bundle(output_dir: Path, cfg: Optional[ExperimentConfig] = None) -> BundleReport:
    """Writes regimes.json, perturbation.csv and optimistic.csv into output_dir."""
    cfg = cfg or ExperimentConfig()
    output_dir = Path(output_dir)
    rows = [regime_row(a, b, cfg) for a, b in REGIMES]

    model = pathology_model()
    labels = list(model.state_labels)
    schedule = PerturbationSchedule.geometric(cfg.perturbation_steps)
    perturbation = perturbation_solve(model, schedule, inner_tol=cfg.tol, inner=cfg.inner)
    write_perturbation_csv(perturbation, labels, output_dir / "perturbation.csv")

    optimistic = optimistic_pi(model, model.lift(1.0), m_schedule=cfg.m, tol=cfg.tol, max_iter=cfg.max_iter)
    write_trace_csv(optimistic, labels, output_dir / "optimistic.csv")

    report = BundleReport(
        config=cfg,
        regimes=rows,
        optimistic_limit=to_token(optimistic.final.values[0]),
        perturbation_limit=to_token(perturbation.estimate.values[0]),
        perturbation_extrapolated=perturbation.extrapolated,
    )
    write_json(report, output_dir / "regimes.json")
    logger.info(f"report bundle written to {output_dir}")
    return report
