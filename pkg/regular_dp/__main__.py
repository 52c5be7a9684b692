import json
import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Optional

import click
import numpy as np
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from . import config
from .errors import RegularDpError
from .extreal import CostFunction, parse_token, to_token
from .model import FiniteModel
from .models import BUILDERS, build
from .oracle import brute_force_optima
from .regions import SRegionDescriptor, SRegionKind
from .regularity import classify_policies, scan_residuals
from .schema import BuilderSpec, ExperimentConfig, ReportHeader, ScanSummary, SolveSummary
from .solvers import (
    Evaluation,
    Outcome,
    PerturbationSchedule,
    TieBreakRule,
    find_proper_policy,
    lp_solve,
    optimistic_pi,
    perturbation_solve,
    policy_iteration,
    value_iteration,
)
from . import experiments, storage

logger = logging.getLogger(__name__)
console = Console()

EXIT_CODES = {
    Outcome.CONVERGED: 0,
    Outcome.STALLED: 10,
    Outcome.OSCILLATING: 11,
    Outcome.DIVERGED: 12,
}
ERROR_EXIT = 1


@contextmanager
def reported_errors():
    """Turns library and parse errors into a one-line diagnostic and exit code 1."""
    try:
        yield
    except (RegularDpError, ValidationError, ValueError, KeyError, OSError) as exc:
        logger.debug("command failed", exc_info=True)
        click.echo(f"error: {exc}", err=True)
        sys.exit(ERROR_EXIT)


def _finite_states(finite_states: Optional[str]) -> Optional[list[int]]:
    return [int(x) for x in finite_states.split(",")] if finite_states else None


def _region(cfg: ExperimentConfig) -> SRegionDescriptor:
    states = frozenset(cfg.finite_states) if cfg.finite_states is not None else None
    return SRegionDescriptor.from_name(
        cfg.region,
        finite_states=states,
        probe_count=cfg.probe_count,
        horizon_cap=cfg.horizon_cap,
        blowup_bound=cfg.blowup_bound,
        seed=cfg.seed,
    )


def _start(model: FiniteModel, tokens: Optional[list]) -> CostFunction:
    if tokens is None:
        return model.terminal
    if len(tokens) == 1:
        return model.lift(parse_token(tokens[0]))
    return CostFunction.from_json(tokens)


def _values_table(title: str, model: FiniteModel, columns: dict[str, CostFunction]) -> Table:
    table = Table(title=title)
    table.add_column("state")
    for name in columns:
        table.add_column(name, justify="right")
    for x, label in enumerate(model.state_labels):
        table.add_row(label, *(str(to_token(J.values[x])) for J in columns.values()))
    return table


@click.group()
@click.option("--log-level", default=config.LOG_LEVEL, help="Logging level for diagnostics on stderr")
def cli(log_level: str):
    """Regular-policy dynamic programming on finite models."""
    logging.basicConfig(stream=sys.stderr, level=log_level.upper(), format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.argument("builder", type=click.Choice(sorted(BUILDERS)))
@click.option("--param", "params", multiple=True, help="Builder parameter as key=value (value parsed as JSON)")
@click.option("--seed", type=int, default=None, help="Seed for random builders")
@click.option("--output", type=click.Path(dir_okay=False), required=True, help="Model file to write")
def generate(builder: str, params: tuple[str, ...], seed: Optional[int], output: str):
    """Write a model file produced by a named builder."""
    with reported_errors():
        values = {}
        for item in params:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ValueError(f"--param expects key=value, got {item!r}")
            try:
                values[key] = json.loads(raw)
            except json.JSONDecodeError:
                values[key] = raw
        if seed is not None:
            values["seed"] = seed
        model = build(builder, values)
        storage.dump_model(model, output, generated_by=BuilderSpec(name=builder, params=values))
        logger.info(f"wrote {model.name} to {output}")


@cli.command()
@click.argument("model_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--algo", type=click.Choice(["vi", "pi", "optimistic-pi", "perturbation", "lp"]), default="vi")
@click.option("--start", "start", default=None, help="Initial J: one value (0 on the stop set) or a JSON list")
@click.option("--initial-policy", default=None, help="Comma-separated control labels for PI")
@click.option("--tie", "tie_break", type=click.Choice([r.value for r in TieBreakRule]), default="keep-current")
@click.option("--evaluation", type=click.Choice([e.value for e in Evaluation]), default="iterative")
@click.option("--tol", type=float, default=config.TOL)
@click.option("--max-iter", type=int, default=config.MAX_ITER)
@click.option("--m", "m", type=int, default=config.OPTIMISTIC_M, help="Policy-evaluation steps in optimistic PI")
@click.option("--steps", type=int, default=config.PERTURBATION_STEPS, help="Length of the halving delta schedule")
@click.option("--inner", type=click.Choice(["pi", "vi"]), default="pi")
@click.option("--lp-box", type=float, default=config.LP_BOX)
@click.option("--lp-weights", default=None, help="JSON list of positive state weights")
@click.option("--horizon-cap", type=int, default=config.HORIZON_CAP, help="Iteration cap when PI evaluates improper policies")
@click.option("--blowup-bound", type=float, default=config.BLOWUP_BOUND, help="Magnitude past which a drifting iterate is infinite")
@click.option("--output-dir", type=click.Path(file_okay=False), default=".")
def solve(
    model_file, algo, start, initial_policy, tie_break, evaluation, tol, max_iter, m, steps, inner, lp_box, lp_weights,
    horizon_cap, blowup_bound, output_dir,
):
    """Run one solver and write summary.json plus a CSV trace."""
    with reported_errors():
        cfg = ExperimentConfig(
            algo=algo,
            tol=tol,
            max_iter=max_iter,
            start=None if start is None else (json.loads(start) if start.lstrip().startswith("[") else [start]),
            initial_policy=initial_policy.split(",") if initial_policy else None,
            tie_break=tie_break,
            evaluation=evaluation,
            m=m,
            perturbation_steps=steps,
            inner=inner,
            lp_box=lp_box,
            lp_weights=json.loads(lp_weights) if lp_weights else None,
            horizon_cap=horizon_cap,
            blowup_bound=blowup_bound,
            output_dir=output_dir,
        )
        model, digest = storage.load_model(model_file)
        labels = list(model.state_labels)
        out = Path(output_dir)
        extra = {}
        if algo in ("vi", "optimistic-pi"):
            J0 = _start(model, cfg.start)
            if algo == "vi":
                trace = value_iteration(model, J0, tol=tol, max_iter=max_iter)
            else:
                trace = optimistic_pi(model, J0, m_schedule=m, tol=tol, max_iter=max_iter)
        elif algo == "pi":
            mu0 = model.policy_by_labels(cfg.initial_policy) if cfg.initial_policy else _default_policy(model)
            trace = policy_iteration(
                model, mu0, TieBreakRule(tie_break), Evaluation(evaluation), max_iter, horizon_cap, blowup_bound
            )
        else:
            trace = None
        if trace is not None:
            storage.write_trace_csv(trace, labels, out / "trace.csv")
            outcome, final, iterations = trace.outcome, trace.final, trace.iterations
            extra = dict(
                policy=trace.policies[-1].labels(model) if trace.policies else None,
                cycle=[mu.labels(model) for mu in trace.cycle],
                diverged_states=list(trace.diverged_states),
                exhausted=trace.exhausted,
            )
        elif algo == "perturbation":
            result = perturbation_solve(model, PerturbationSchedule.geometric(steps), inner_tol=tol, inner=inner, max_iter=max_iter)
            storage.write_perturbation_csv(result, labels, out / "perturbation.csv")
            outcome = Outcome.CONVERGED if result.extrapolated else Outcome.STALLED
            final, iterations = result.estimate, len(result.deltas)
            extra = dict(per_delta=[J.to_json() for J in result.values])
        else:
            result = lp_solve(model, cfg.lp_weights, box=lp_box)
            outcome, final, iterations = Outcome.CONVERGED, result.values, 1
            extra = dict(box_active=list(result.box_active))

        summary = SolveSummary(
            config=cfg,
            model_name=model.name,
            model_sha256=digest,
            outcome=outcome.value,
            iterations=iterations,
            final=final.to_json(),
            **extra,
        )
        storage.write_json(summary, out / "summary.json")
        console.print(_values_table(f"{algo}: {outcome.value} after {iterations} iterations", model, {"J": final}))
    sys.exit(EXIT_CODES[outcome])


def _default_policy(model: FiniteModel):
    try:
        return find_proper_policy(model)
    except RegularDpError:
        return model.policy_by_labels([controls[0] for controls in model.controls])


def _header(cfg: ExperimentConfig, model: FiniteModel, digest: str) -> ReportHeader:
    return ReportHeader(config=cfg, model_name=model.name, model_sha256=digest)


@cli.command()
@click.argument("model_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--region", type=click.Choice([k.value for k in SRegionKind]), default="all-real")
@click.option("--finite-states", default=None, help="Comma-separated states that must be real (zero-on-stop-set)")
@click.option("--probe-count", type=int, default=config.PROBE_COUNT)
@click.option("--horizon-cap", type=int, default=config.HORIZON_CAP)
@click.option("--blowup-bound", type=float, default=config.BLOWUP_BOUND)
@click.option("--seed", type=int, default=0)
@click.option("--output", type=click.Path(dir_okay=False), required=True)
def classify(model_file, region, finite_states, probe_count, horizon_cap, blowup_bound, seed, output):
    """Classify every stationary policy and check the PI properties."""
    with reported_errors():
        cfg = ExperimentConfig(
            region=region,
            finite_states=_finite_states(finite_states),
            probe_count=probe_count,
            horizon_cap=horizon_cap,
            blowup_bound=blowup_bound,
            seed=seed,
            output_dir=str(Path(output).parent),
        )
        model, digest = storage.load_model(model_file)
        S = _region(cfg)
        report = classify_policies(model, S, limit=cfg.enumeration_limit, include_pi_checks=True)
        storage.write_json(storage.classify_report(model, _header(cfg, model, digest), report), output)

        table = Table(title=f"{model.name}, S = {S.label}")
        for column in ("policy", "proper", "S-regular", "J_mu"):
            table.add_column(column)
        for r in report.records:
            table.add_row(",".join(r.policy.labels(model)), str(r.proper), r.s_regular.value, str(r.cost.to_json()))
        console.print(table)
        console.print(f"{storage.regular_count(report)} certified regular policies; J*_S = {report.j_star_s.to_json()}")


def _axis(spec: str) -> np.ndarray:
    low, high, step = (float(v) for v in spec.split(":"))
    if step <= 0 or high < low:
        raise ValueError(f"grid axis {spec!r} must be low:high:step with step > 0")
    return np.linspace(low, high, int(round((high - low) / step)) + 1)


@cli.command()
@click.argument("model_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--grid", default="-5:5:0.5", help="low:high:step used for every state outside the stop set")
@click.option("--axis", "axes", multiple=True, help="Per-state override as STATE=low:high:step")
@click.option("--tol", type=float, default=config.TOL)
@click.option("--output-dir", type=click.Path(file_okay=False), default=".")
def scan(model_file, grid, axes, tol, output_dir):
    """Evaluate ||TJ - J|| on a product grid and list the fixed points."""
    with reported_errors():
        cfg = ExperimentConfig(tol=tol, output_dir=output_dir)
        model, digest = storage.load_model(model_file)
        grid_axes = [None if model.stop_mask[x] else _axis(grid) for x in range(model.n_states)]
        for item in axes:
            state, _, spec = item.partition("=")
            grid_axes[int(state)] = _axis(spec)
        labels = list(model.state_labels)
        rows, fixed, total = [], [], 0
        for points, residuals in scan_residuals(model, grid_axes):
            total += len(points)
            for point, residual in zip(points, residuals):
                is_fixed = bool(residual <= tol)
                rows.append({**dict(zip(labels, map(to_token, point))), "residual": to_token(residual), "fixed": int(is_fixed)})
                if is_fixed:
                    fixed.append([to_token(v) for v in point])
        out = Path(output_dir)
        storage.write_scan_csv(rows, labels, out / "scan.csv")
        storage.write_json(
            ScanSummary(config=cfg, model_name=model.name, model_sha256=digest, grid_points=total, tol=tol, fixed_points=fixed),
            out / "fixed_points.json",
        )
        console.print(f"{len(fixed)} of {total} grid points are fixed points of T")


@cli.command()
@click.argument("model_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--region", type=click.Choice([k.value for k in SRegionKind]), default="all-real")
@click.option("--finite-states", default=None)
@click.option("--limit", type=int, default=config.ENUMERATION_LIMIT, help="Maximum number of enumerated policies")
@click.option("--horizon-cap", type=int, default=config.HORIZON_CAP)
@click.option("--blowup-bound", type=float, default=config.BLOWUP_BOUND)
@click.option("--output", type=click.Path(dir_okay=False), required=True)
def oracle(model_file, region, finite_states, limit, horizon_cap, blowup_bound, output):
    """Brute-force J* and J*_S by enumerating every stationary policy."""
    with reported_errors():
        cfg = ExperimentConfig(
            region=region,
            finite_states=_finite_states(finite_states),
            enumeration_limit=limit,
            horizon_cap=horizon_cap,
            blowup_bound=blowup_bound,
            output_dir=str(Path(output).parent),
        )
        model, digest = storage.load_model(model_file)
        result = brute_force_optima(model, _region(cfg), limit=limit)
        storage.write_json(
            storage.oracle_report(model, _header(cfg, model, digest), result.report, result.convention_exercised),
            output,
        )
        console.print(_values_table(model.name, model, {"J*": result.j_star, "J*_S": result.j_star_s}))


@cli.command()
@click.option("--output-dir", type=click.Path(file_okay=False), default="report")
@click.option("--tol", type=float, default=config.TOL)
@click.option("--horizon-cap", type=int, default=config.HORIZON_CAP)
@click.option("--blowup-bound", type=float, default=config.BLOWUP_BOUND)
def report(output_dir, tol, horizon_cap, blowup_bound):
    """Write the shortest-path regime table, perturbation curve and optimistic-PI bundle."""
    with reported_errors():
        cfg = ExperimentConfig(tol=tol, horizon_cap=horizon_cap, blowup_bound=blowup_bound, output_dir=output_dir)
        bundle = experiments.write_bundle(Path(output_dir), cfg)
        table = Table(title="two-state shortest path regimes")
        for column in ("a", "b", "J*", "J*_S", "VI from above", "PI always-switch"):
            table.add_column(column)
        for row in bundle.regimes:
            table.add_row(
                f"{row.a:g}", f"{row.b:g}", str(row.j_star), str(row.j_star_s),
                f"{row.vi_from_above.outcome} {row.vi_from_above.value}", row.pi_always_switch.outcome,
            )
        console.print(table)


def main():
    cli()


if __name__ == "__main__":
    main()
