"""
Reading and writing model files, traces and reports.

Every file is written atomically: the content goes to a temporary file in
the target directory which is then renamed over the destination.
"""

import csv
import hashlib
import io
import logging
import os
import tempfile
from collections import defaultdict
from pathlib import Path
from typing import Optional, Sequence, Union

from pydantic import BaseModel

from .errors import ModelValidationError
from .extreal import CostFunction, to_token
from .model import Action, FiniteModel, Outcome, StationaryPolicy
from .models import build
from .regularity import RegularityReport, SRegularity
from .schema import (
    ActionEntry,
    BuilderSpec,
    ClassifyReport,
    ModelFile,
    OracleReport,
    PolicyRecordEntry,
    ReportHeader,
    StateEntry,
    StrongPiEntry,
    TransitionEntry,
    WeakPiEntry,
)
from .solvers import PerturbationResult, SolveTrace

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def atomic_write_text(path: PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile("w", dir=path.parent, prefix=f".{path.name}.", delete=False, encoding="utf-8") as tmp:
        tmp.write(text)
    os.replace(tmp.name, path)
    logger.debug(f"wrote {path}")


def sha256_file(path: PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(record: BaseModel, path: PathLike) -> None:
    atomic_write_text(path, record.model_dump_json(indent=2) + "\n")


# Model files -------------------------------------------------------------

def model_from_file(spec: ModelFile) -> FiniteModel:
    """Builds the FiniteModel a parsed model file describes; errors carry state/control coordinates."""
    if spec.builder is not None:
        return build(spec.builder.name, spec.builder.params)
    n = len(spec.states)
    ids = [s.id for s in spec.states]
    if sorted(ids) != list(range(n)):
        raise ModelValidationError(f"state ids must be 0..{n - 1}, got {ids}")
    labels = {s.id: s.label if s.label is not None else str(s.id) for s in spec.states}
    per_state: dict[int, list[Action]] = defaultdict(list)
    for entry in spec.actions:
        if not 0 <= entry.state < n:
            raise ModelValidationError("action refers to an unknown state", state=entry.state)
        outcomes = tuple(Outcome(t.prob, t.next, t.cost) for t in entry.transitions)
        per_state[entry.state].append(Action(entry.control, outcomes, entry.cost))
    for x in range(n):
        labels_seen = [a.label for a in per_state[x]]
        if len(set(labels_seen)) != len(labels_seen):
            raise ModelValidationError("duplicate control label", state=x)
    terminal = CostFunction.from_json(spec.terminal) if spec.terminal is not None else None
    return FiniteModel.from_actions(
        [per_state[x] for x in range(n)],
        discount=spec.discount,
        terminal=terminal,
        stop_set=spec.stop_set,
        state_labels=[labels[x] for x in range(n)],
        name=spec.name,
    )


def model_to_file(model: FiniteModel, generated_by: Optional[BuilderSpec] = None) -> ModelFile:
    actions = []
    for x, controls in enumerate(model.controls):
        for u, label in enumerate(controls):
            row = model.transitions[x, u]
            actions.append(
                ActionEntry(
                    state=x,
                    control=label,
                    cost=float(model.costs[x, u]),
                    transitions=[TransitionEntry(prob=float(row[y]), next=int(y)) for y in range(len(row)) if row[y] > 0],
                )
            )
    return ModelFile(
        name=model.name,
        states=[StateEntry(id=x, label=label) for x, label in enumerate(model.state_labels)],
        stop_set=sorted(model.stop_set),
        discount=model.discount,
        terminal=model.terminal.to_json(),
        actions=actions,
        generated_by=generated_by,
    )


def load_model(path: PathLike) -> tuple[FiniteModel, str]:
    """The model in `path` and the sha256 of the file's bytes."""
    spec = ModelFile.model_validate_json(Path(path).read_text(encoding="utf-8"))
    return model_from_file(spec), sha256_file(path)


def dump_model(model: FiniteModel, path: PathLike, generated_by: Optional[BuilderSpec] = None) -> None:
    write_json(model_to_file(model, generated_by), path)


# Traces ------------------------------------------------------------------

def _csv_text(fieldnames: Sequence[str], rows: list[dict]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buffer.getvalue()


def write_trace_csv(trace: SolveTrace, labels: Sequence[str], path: PathLike) -> None:
    """Columns: iteration, one per state in id order, residual."""
    fieldnames = ["iteration", *labels, "residual"]
    rows = []
    for step, J, residual in zip(trace.steps, trace.iterates, trace.residuals):
        row = {"iteration": step, "residual": to_token(residual)}
        row.update(zip(labels, J.to_json()))
        rows.append(row)
    atomic_write_text(path, _csv_text(fieldnames, rows))


def write_perturbation_csv(result: PerturbationResult, labels: Sequence[str], path: PathLike) -> None:
    fieldnames = ["delta", *labels]
    rows = [{"delta": delta, **dict(zip(labels, J.to_json()))} for delta, J in zip(result.deltas, result.values)]
    atomic_write_text(path, _csv_text(fieldnames, rows))


def write_scan_csv(rows: list[dict], labels: Sequence[str], path: PathLike) -> None:
    atomic_write_text(path, _csv_text([*labels, "residual", "fixed"], rows))


# Reports -----------------------------------------------------------------

def policy_labels(model: FiniteModel, mu: StationaryPolicy) -> list[str]:
    return mu.labels(model)


def regularity_entries(model: FiniteModel, report: RegularityReport) -> dict:
    """Fields of ClassifyReport filled from a RegularityReport."""
    fields = dict(
        region=report.region,
        sampler_relative=report.sampler_relative,
        policies=[
            PolicyRecordEntry(
                policy=policy_labels(model, r.policy),
                proper=r.proper,
                s_regular=r.s_regular.value,
                cost=r.cost.to_json(),
                exact=r.exact,
            )
            for r in report.records
        ],
        j_star=report.j_star.to_json(),
        j_star_s=report.j_star_s.to_json(),
        zero_set=list(report.zero_set),
        infinite_set=list(report.infinite_set),
    )
    if report.weak_pi is not None:
        fields["weak_pi"] = WeakPiEntry(
            holds=report.weak_pi.holds,
            witness=[policy_labels(model, mu) for mu in report.weak_pi.witness],
            rule=report.weak_pi.rule,
        )
    if report.strong_pi is not None:
        s = report.strong_pi
        fields["strong_pi"] = StrongPiEntry(
            finite_region=s.finite_region,
            regular_exists=s.regular_exists,
            minima_attained=s.minima_attained,
            irregular_diverge=s.irregular_diverge,
            conditions_hold=s.conditions_hold,
            property_holds=s.property_holds,
            failing_policies=[policy_labels(model, mu) for mu in s.failing_policies],
        )
    return fields


def classify_report(model: FiniteModel, header: ReportHeader, report: RegularityReport) -> ClassifyReport:
    return ClassifyReport(**header.model_dump(), **regularity_entries(model, report))


def oracle_report(model: FiniteModel, header: ReportHeader, report: RegularityReport, exercised: bool) -> OracleReport:
    return OracleReport(**header.model_dump(), **regularity_entries(model, report), convention_exercised=exercised)


def regular_count(report: RegularityReport) -> int:
    return sum(r.s_regular is SRegularity.CERTIFIED for r in report.records)
