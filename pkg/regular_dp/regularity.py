"""
Classification of stationary policies.

Proper/improper is a graph property of the policy's chain. S-regularity is
checked numerically against a finite set of probes drawn from S, so a
Certified verdict is relative to that sampler.
"""

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from . import config
from .chains import reachable_from, recurrent_classes
from .errors import GridLimitError, MissingStopSetError
from .extreal import CostFunction, abs_gap
from .model import FiniteModel, StationaryPolicy, apply_Tmu, argmin_sets, q_values
from .oracle import PolicyEvaluation, certify_divergence, evaluate_policy, evaluation_table
from .regions import SRegionDescriptor

logger = logging.getLogger(__name__)

PERIOD_LIMIT = 16
SCAN_CHUNK = 1 << 16


def classify_proper(model: FiniteModel, mu: StationaryPolicy) -> bool:
    """True iff every recurrent class of mu's chain lies inside the stop set."""
    if not model.stop_set:
        raise MissingStopSetError(f"{model.name} has no stop set")
    P, _ = model.policy_matrix(mu)
    return all(model.stop_mask[members].all() for members in recurrent_classes(P))


class SRegularity(Enum):
    CERTIFIED = "certified"
    REFUTED = "refuted"
    UNKNOWN = "unknown"


def certify_s_regular(
    model: FiniteModel,
    mu: StationaryPolicy,
    S: SRegionDescriptor,
    horizon_cap: Optional[int] = None,
    evaluation: Optional[PolicyEvaluation] = None,
    anchors: Sequence[CostFunction] = (),
) -> SRegularity:
    """Checks J_mu in S, T_mu J_mu = J_mu, and T_mu^k J -> J_mu from every probe J."""
    horizon_cap = horizon_cap or S.horizon_cap
    evaluation = evaluation or evaluate_policy(model, mu, horizon_cap, S.blowup_bound)
    J_mu = evaluation.cost
    if not S.contains(model, J_mu):
        return SRegularity.REFUTED if evaluation.certified else SRegularity.UNKNOWN
    if not evaluation.certified:
        return SRegularity.UNKNOWN
    if not apply_Tmu(model, mu, J_mu).isclose(J_mu, config.TOL):
        return SRegularity.REFUTED

    probes = S.probes(model, anchors=(J_mu, *anchors))
    finite = [p for p in probes if p.is_finite]
    verdicts = []
    if finite and J_mu.is_finite:
        verdicts.append(_affine_attraction(model, mu, J_mu, finite, horizon_cap, S.blowup_bound))
    for probe in probes:
        if not (probe.is_finite and J_mu.is_finite):
            verdicts.append(_iterated_attraction(model, mu, J_mu, probe, horizon_cap, S.blowup_bound))
    if SRegularity.REFUTED in verdicts:
        return SRegularity.REFUTED
    if SRegularity.UNKNOWN in verdicts:
        return SRegularity.UNKNOWN
    return SRegularity.CERTIFIED


def _affine_attraction(
    model: FiniteModel,
    mu: StationaryPolicy,
    J_mu: CostFunction,
    probes: list[CostFunction],
    horizon_cap: int,
    blowup_bound: float,
) -> SRegularity:
    """For real J, T_mu^k J - J_mu = (alpha P_mu)^k (J - J_mu); powers are taken by squaring."""
    P, _ = model.policy_matrix(mu)
    M = model.discount * P
    gaps = np.stack([p.values - J_mu.values for p in probes], axis=1)
    power, k = M, 1
    while True:
        error = power @ gaps
        if np.max(np.abs(error), initial=0.0) <= config.TOL:
            return SRegularity.CERTIFIED
        if k >= horizon_cap:
            break
        power, k = power @ power, 2 * k
    if np.max(np.abs(error)) > blowup_bound:
        return SRegularity.REFUTED
    step = error
    for _ in range(PERIOD_LIMIT):
        step = M @ step
        if np.max(np.abs(step - error)) <= config.TOL:
            return SRegularity.REFUTED
    return SRegularity.UNKNOWN


def _iterated_attraction(
    model: FiniteModel,
    mu: StationaryPolicy,
    J_mu: CostFunction,
    probe: CostFunction,
    horizon_cap: int,
    blowup_bound: float,
) -> SRegularity:
    from .model import EventuallyStationaryPolicy, policy_cost

    limit = policy_cost(
        model.with_terminal(probe),
        EventuallyStationaryPolicy.stationary(mu),
        horizon_cap=horizon_cap,
        blowup_bound=blowup_bound,
    )
    if not limit.certified:
        return SRegularity.UNKNOWN
    if any(limit.oscillating) or not limit.values.isclose(J_mu, config.TOL):
        return SRegularity.REFUTED
    return SRegularity.CERTIFIED


@dataclass(frozen=True)
class PolicyRecord:
    policy: StationaryPolicy
    proper: Optional[bool]
    s_regular: SRegularity
    cost: CostFunction
    exact: bool


@dataclass(frozen=True)
class WeakPiResult:
    holds: bool
    witness: tuple[StationaryPolicy, ...] = ()
    rule: Optional[str] = None


@dataclass(frozen=True)
class StrongPiReport:
    finite_region: bool
    regular_exists: bool
    minima_attained: bool
    irregular_diverge: bool
    property_holds: bool
    failing_policies: tuple[StationaryPolicy, ...] = ()

    @property
    def conditions_hold(self) -> bool:
        return self.finite_region and self.regular_exists and self.minima_attained and self.irregular_diverge


@dataclass(frozen=True)
class RegularityReport:
    region: str
    records: tuple[PolicyRecord, ...]
    j_star: CostFunction
    j_star_s: CostFunction
    zero_set: tuple[int, ...]
    infinite_set: tuple[int, ...]
    weak_pi: Optional[WeakPiResult] = None
    strong_pi: Optional[StrongPiReport] = None
    sampler_relative: bool = field(default=True)

    def record(self, mu: StationaryPolicy) -> PolicyRecord:
        return next(r for r in self.records if r.policy == mu)

    @property
    def regular_policies(self) -> list[StationaryPolicy]:
        return [r.policy for r in self.records if r.s_regular is SRegularity.CERTIFIED]


def zero_and_infinite_sets(J: CostFunction) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """X_s = {x | J(x) = 0} and X_inf = {x | J(x) = +inf}."""
    zero = tuple(int(x) for x in np.flatnonzero(J.values == 0))
    infinite = tuple(int(x) for x in np.flatnonzero(J.values == np.inf))
    return zero, infinite


def _records(model: FiniteModel, S: SRegionDescriptor, limit: int, anchors=()) -> tuple[PolicyRecord, ...]:
    records = []
    for evaluation in evaluation_table(model, limit, S.horizon_cap, S.blowup_bound):
        mu = evaluation.policy
        proper = classify_proper(model, mu) if model.stop_set else None
        verdict = certify_s_regular(model, mu, S, evaluation=evaluation, anchors=anchors)
        records.append(PolicyRecord(mu, proper, verdict, evaluation.cost, evaluation.exact))
    return tuple(records)


def _min_over_regular(model: FiniteModel, records: Sequence[PolicyRecord]) -> CostFunction:
    regular = [r.cost.values for r in records if r.s_regular is SRegularity.CERTIFIED]
    if not regular:
        logger.info(f"{model.name} has no certified regular policy")
        return CostFunction.constant(model.n_states, np.inf)
    return CostFunction(np.min(regular, axis=0))


def opt_over_regular(model: FiniteModel, S: SRegionDescriptor, limit: int = config.ENUMERATION_LIMIT) -> CostFunction:
    """J*_S: the componentwise minimum of J_mu over certified S-regular policies."""
    return _min_over_regular(model, _records(model, S, limit))


def classify_policies(
    model: FiniteModel,
    S: SRegionDescriptor,
    limit: int = config.ENUMERATION_LIMIT,
    j_star: Optional[CostFunction] = None,
    include_pi_checks: bool = False,
) -> RegularityReport:
    records = _records(model, S, limit)
    if j_star is None:
        j_star = CostFunction(np.min([r.cost.values for r in records], axis=0))
    zero, infinite = zero_and_infinite_sets(j_star)
    weak = strong = None
    if include_pi_checks:
        weak = _weak_pi(model, records, rule=None)
        strong = _strong_pi(model, S, records)
    return RegularityReport(
        region=S.label,
        records=records,
        j_star=j_star,
        j_star_s=_min_over_regular(model, records),
        zero_set=zero,
        infinite_set=infinite,
        weak_pi=weak,
        strong_pi=strong,
    )


# Fixed points and the well-behaved region --------------------------------

def _grid_axes(model: FiniteModel, grid: Sequence[Optional[Sequence[float]]]) -> list[np.ndarray]:
    if len(grid) != model.n_states:
        raise ValueError(f"grid needs one axis per state, got {len(grid)} for {model.n_states}")
    axes = []
    for x, axis in enumerate(grid):
        if axis is None:
            axis = [0.0] if model.stop_mask[x] else None
        if axis is None or len(axis) == 0:
            raise ValueError(f"state {x} has an empty grid axis")
        axes.append(np.asarray(axis, dtype=float))
    return axes


def scan_residuals(model: FiniteModel, grid: Sequence[Optional[Sequence[float]]]):
    """Yields (points, residuals) chunks for every point of the product grid.

    The residual of J is ||TJ - J||_sup. Stop-set axes may be given as None,
    meaning {0}.
    """
    axes = _grid_axes(model, grid)
    size = int(np.prod([len(a) for a in axes], dtype=object))
    if size > config.GRID_LIMIT:
        raise GridLimitError(f"grid has {size} points, limit is {config.GRID_LIMIT}")
    product = itertools.product(*axes)
    while True:
        chunk = list(itertools.islice(product, SCAN_CHUNK))
        if not chunk:
            return
        points = np.array(chunk, dtype=float)
        if np.isfinite(points).all():
            expectation = np.einsum("xuy,by->bxu", model.transitions, points)
            q = model.costs[None] + model.discount * expectation
            TJ = np.where(model.legal[None], q, np.inf).min(axis=2)
        else:
            TJ = np.array([q_values(model, CostFunction(p)).min(axis=1) for p in points])
        residuals = abs_gap(TJ, points).max(axis=1)
        yield points, residuals


def fixed_point_scan(
    model: FiniteModel, grid: Sequence[Optional[Sequence[float]]], tol: float = config.TOL
) -> list[CostFunction]:
    """All grid points J with ||TJ - J||_sup <= tol."""
    found = []
    for points, residuals in scan_residuals(model, grid):
        found.extend(CostFunction(p) for p in points[residuals <= tol])
    return found


@dataclass(frozen=True)
class WellBehavedRegion:
    """W_S = {J | J*_S <= J <= J~ for some J~ in S}."""

    model: FiniteModel
    region: SRegionDescriptor
    lower: CostFunction

    @property
    def upper_kind(self) -> str:
        return {
            "all-real": "J real-valued, 0 on the stop set",
            "bounded-below": "J real-valued, 0 on the stop set",
            "nonneg-extended": "J <= 0 on the stop set",
            "zero-on-stop-set": "J = 0 on the stop set, real on the listed states",
            "expectation-vanishing": "J itself in S",
        }[self.region.label]

    def contains(self, J: CostFunction) -> bool:
        return self.lower.leq(J) and self.region.below_some_member(self.model, J)


def well_behaved_region(
    model: FiniteModel, S: SRegionDescriptor, limit: int = config.ENUMERATION_LIMIT
) -> WellBehavedRegion:
    return WellBehavedRegion(model, S, opt_over_regular(model, S, limit))


# PI properties -----------------------------------------------------------

def greedy_sets(model: FiniteModel, J: CostFunction) -> list[np.ndarray]:
    """Per state, the controls u with H(x, u, J) = (TJ)(x) within tolerance."""
    return argmin_sets(q_values(model, J), model.legal)


def _greedy_policies(model: FiniteModel, J: CostFunction):
    return (StationaryPolicy(choice) for choice in itertools.product(*greedy_sets(model, J)))


def _weak_pi(model: FiniteModel, records: Sequence[PolicyRecord], rule=None) -> WeakPiResult:
    regular = {r.policy: r.cost for r in records if r.s_regular is SRegularity.CERTIFIED}
    if rule is not None:
        from .solvers import improve_policy

        for start in regular:
            path = [start]
            while True:
                nxt = improve_policy(model, path[-1], regular[path[-1]], rule)
                if nxt not in regular:
                    break
                if nxt in path:
                    return WeakPiResult(True, tuple(path), rule.value)
                path.append(nxt)
        return WeakPiResult(False, (), rule.value)

    successors = {
        mu: [nu for nu in _greedy_policies(model, J) if nu in regular] for mu, J in regular.items()
    }
    # An infinite PI sequence inside the regular class exists iff a cycle is reachable.
    for start in regular:
        path = [start]
        on_path = {start}
        stack = [iter(successors[start])]
        while stack:
            nxt = next(stack[-1], None)
            if nxt is None:
                stack.pop()
                on_path.discard(path.pop())
                continue
            if nxt in on_path:
                return WeakPiResult(True, tuple(path))
            path.append(nxt)
            on_path.add(nxt)
            stack.append(iter(successors[nxt]))
    return WeakPiResult(False)


def check_weak_pi_property(
    model: FiniteModel, S: SRegionDescriptor, rule=None, limit: int = config.ENUMERATION_LIMIT
) -> WeakPiResult:
    """Whether PI can generate an infinite sequence of S-regular policies.

    With `rule=None` any greedy successor may be chosen; with a TieBreakRule
    the sequence is the one PI generates under that rule.
    """
    return _weak_pi(model, _records(model, S, limit), rule)


def _strong_pi(model: FiniteModel, S: SRegionDescriptor, records: Sequence[PolicyRecord]) -> StrongPiReport:
    regular = {r.policy: r.cost for r in records if r.s_regular is SRegularity.CERTIFIED}
    irregular = [r.policy for r in records if r.s_regular is not SRegularity.CERTIFIED]
    probes = S.probes(model, anchors=tuple(regular.values()))
    finite_region = not S.admits_infinite and all(p.is_finite for p in probes)

    failing = []
    for mu in irregular:
        for probe in probes:
            if not certify_divergence(model, mu, probe, S.horizon_cap, S.blowup_bound).plus_states:
                failing.append(mu)
                break

    closed = bool(regular) and all(
        nu in regular for J in regular.values() for nu in _greedy_policies(model, J)
    )
    return StrongPiReport(
        finite_region=finite_region,
        regular_exists=bool(regular),
        minima_attained=True,
        irregular_diverge=not failing,
        property_holds=closed,
        failing_policies=tuple(failing),
    )


def check_strong_pi_conditions(
    model: FiniteModel, S: SRegionDescriptor, limit: int = config.ENUMERATION_LIMIT
) -> StrongPiReport:
    """The four sufficient conditions for the strong PI property, plus a direct check of the property.

    Minima are always attained since every control set is finite.
    """
    return _strong_pi(model, S, _records(model, S, limit))


# Termination -------------------------------------------------------------

def terminating_from(model: FiniteModel, mu: StationaryPolicy, states: np.ndarray) -> bool:
    """Whether mu's chain reaches the stop set with probability 1 from every state in `states`."""
    P, _ = model.policy_matrix(mu)
    reach = reachable_from(P, states)
    return all(model.stop_mask[members].all() for members in recurrent_classes(P) if reach[members].any())


@dataclass(frozen=True)
class NearOptimalTermination:
    holds: bool
    finite_states: tuple[int, ...]
    j_star: CostFunction
    best_terminating: CostFunction


def check_near_optimal_termination(
    model: FiniteModel, eps: float = config.TOL, limit: int = config.ENUMERATION_LIMIT
) -> NearOptimalTermination:
    """At every state with finite optimal cost, some terminating policy comes within eps of J*."""
    if not model.stop_set:
        raise MissingStopSetError(f"{model.name} has no stop set")
    table = evaluation_table(model, limit)
    j_star = np.min([e.cost.values for e in table], axis=0)
    finite = j_star < np.inf
    best = np.full(model.n_states, np.inf)
    for e in table:
        if terminating_from(model, e.policy, finite):
            best = np.minimum(best, e.cost.values)
    gap = np.where(finite, abs_gap(best, j_star), 0.0)
    return NearOptimalTermination(
        holds=bool(np.all(gap <= eps)),
        finite_states=tuple(int(x) for x in np.flatnonzero(finite)),
        j_star=CostFunction(j_star),
        best_terminating=CostFunction(best),
    )
