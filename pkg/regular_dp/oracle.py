"""
Brute-force ground truth for finite models.

Every stationary policy is enumerated and evaluated, exactly by a linear
solve when the policy terminates (or alpha < 1) and by the certified
limsup iteration of `model.policy_cost` otherwise. Solvers are validated
against the optima computed here.
"""

import itertools
import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Iterator, TYPE_CHECKING

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from . import config
from .chains import long_run_drift
from .errors import EnumerationLimitError, ImproperPolicyError, MissingStopSetError
from .extreal import CostFunction, mixes_infinities
from .model import EventuallyStationaryPolicy, FiniteModel, StationaryPolicy, policy_cost

if TYPE_CHECKING:
    from .regions import SRegionDescriptor
    from .regularity import RegularityReport

logger = logging.getLogger(__name__)


class PolicyEnumeration:
    """Every stationary policy of a model, each exactly once, in lexicographic order of control ids."""

    def __init__(self, model: FiniteModel, limit: int = config.ENUMERATION_LIMIT):
        self.model = model
        if model.policy_count > limit:
            raise EnumerationLimitError(
                f"{model.name} has {model.policy_count} stationary policies, limit is {limit}"
            )

    def __len__(self) -> int:
        return self.model.policy_count

    def __iter__(self) -> Iterator[StationaryPolicy]:
        for choice in itertools.product(*(range(len(u)) for u in self.model.controls)):
            yield StationaryPolicy(choice)


def enumerate_policies(model: FiniteModel, limit: int = config.ENUMERATION_LIMIT) -> PolicyEnumeration:
    return PolicyEnumeration(model, limit)


def _solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    if A.size == 0:
        return np.zeros(0)
    lu, piv = lu_factor(A, check_finite=True)
    if np.min(np.abs(np.diag(lu))) < config.SINGULAR_PIVOT:
        raise ImproperPolicyError("evaluation system is singular")
    return lu_solve((lu, piv), b)


def exact_policy_cost(model: FiniteModel, mu: StationaryPolicy) -> CostFunction:
    """Solves (I - alpha P_mu) J = g_mu on the non-stop states.

    Stop states keep J_bar when alpha = 1 and decay to 0 when alpha < 1.
    """
    P, g = model.policy_matrix(mu)
    free, stop = ~model.stop_mask, model.stop_mask
    stop_values = np.zeros(model.n_states)
    if model.discount == 1:
        stop_values[stop] = model.terminal.values[stop]
    A = np.eye(int(free.sum())) - model.discount * P[np.ix_(free, free)]
    rhs = g[free] + model.discount * P[np.ix_(free, stop)] @ stop_values[stop]
    try:
        solution = _solve(A, rhs)
    except ImproperPolicyError:
        if model.stop_set:
            from .regularity import classify_proper

            if classify_proper(model, mu):
                logger.warning(f"singular evaluation for policy {mu.choice} that reaches the stop set")
        raise
    values = stop_values
    values[free] = solution
    return CostFunction(values)


def expected_termination_steps(model: FiniteModel, mu: StationaryPolicy) -> np.ndarray:
    """Expected number of stages before mu reaches the stop set, per state."""
    if not model.stop_set:
        raise MissingStopSetError(f"{model.name} has no stop set")
    P, _ = model.policy_matrix(mu)
    free = ~model.stop_mask
    steps = np.zeros(model.n_states)
    steps[free] = _solve(np.eye(int(free.sum())) - P[np.ix_(free, free)], np.ones(int(free.sum())))
    return steps


@dataclass(frozen=True)
class PolicyEvaluation:
    policy: StationaryPolicy
    cost: CostFunction
    exact: bool
    certified: bool


def evaluate_policy(
    model: FiniteModel,
    mu: StationaryPolicy,
    horizon_cap: int = config.HORIZON_CAP,
    blowup_bound: float = config.BLOWUP_BOUND,
) -> PolicyEvaluation:
    """J_mu by linear solve when the chain terminates (or alpha < 1), certified iteration otherwise."""
    from .regularity import classify_proper

    solvable = model.discount < 1 or (bool(model.stop_set) and classify_proper(model, mu))
    if solvable and model.terminal.is_finite:
        return PolicyEvaluation(mu, exact_policy_cost(model, mu), exact=True, certified=True)
    estimate = policy_cost(
        model, EventuallyStationaryPolicy.stationary(mu), horizon_cap=horizon_cap, blowup_bound=blowup_bound
    )
    return PolicyEvaluation(mu, estimate.values, exact=False, certified=estimate.certified)


@lru_cache(maxsize=64)
def _evaluation_table(
    model: FiniteModel, limit: int, horizon_cap: int, blowup_bound: float
) -> tuple[PolicyEvaluation, ...]:
    policies = enumerate_policies(model, limit)
    logger.info(f"evaluating {len(policies)} stationary policies of {model.name}")
    return tuple(evaluate_policy(model, mu, horizon_cap, blowup_bound) for mu in policies)


def evaluation_table(
    model: FiniteModel,
    limit: int = config.ENUMERATION_LIMIT,
    horizon_cap: int = config.HORIZON_CAP,
    blowup_bound: float = config.BLOWUP_BOUND,
) -> tuple[PolicyEvaluation, ...]:
    return _evaluation_table(model, limit, horizon_cap, blowup_bound)


def policy_cost_table(
    model: FiniteModel,
    limit: int = config.ENUMERATION_LIMIT,
    horizon_cap: int = config.HORIZON_CAP,
    blowup_bound: float = config.BLOWUP_BOUND,
) -> dict[StationaryPolicy, CostFunction]:
    return {e.policy: e.cost for e in _evaluation_table(model, limit, horizon_cap, blowup_bound)}


@dataclass(frozen=True)
class OracleResult:
    j_star: CostFunction
    j_star_s: CostFunction
    policy_costs: dict[StationaryPolicy, CostFunction]
    report: "RegularityReport"
    convention_exercised: bool

    def optimal_policies(self, tol: float = config.TOL) -> list[StationaryPolicy]:
        return [mu for mu, J in self.policy_costs.items() if J.isclose(self.j_star, tol)]


def brute_force_optima(
    model: FiniteModel, S: "SRegionDescriptor", limit: int = config.ENUMERATION_LIMIT
) -> OracleResult:
    from .regularity import classify_policies

    table = policy_cost_table(model, limit, S.horizon_cap, S.blowup_bound)
    stacked = np.array([J.values for J in table.values()])
    j_star = CostFunction(stacked.min(axis=0))
    report = classify_policies(model, S, limit=limit, j_star=j_star)
    exercised = any(_mixes_at(model, J) for J in (*table.values(), j_star))
    if exercised:
        logger.warning(f"(+inf) + (-inf) occurs in H on {model.name}")
    return OracleResult(
        j_star=j_star,
        j_star_s=report.j_star_s,
        policy_costs=table,
        report=report,
        convention_exercised=exercised,
    )


def _mixes_at(model: FiniteModel, J: CostFunction) -> bool:
    if J.is_finite:
        return False
    for x, u in zip(*np.nonzero(model.legal)):
        successors = J.values[model.transitions[x, u] > 0]
        if mixes_infinities(successors):
            return True
    return False


class DivergenceVerdict(Enum):
    DIVERGES_PLUS = "diverges+"
    DIVERGES_MINUS = "diverges-"
    BOUNDED = "bounded"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class DivergenceReport:
    verdict: DivergenceVerdict
    plus_states: tuple[int, ...] = ()
    minus_states: tuple[int, ...] = ()


def _report(plus: np.ndarray, minus: np.ndarray, bounded: bool) -> DivergenceReport:
    plus_states = tuple(int(x) for x in np.flatnonzero(plus))
    minus_states = tuple(int(x) for x in np.flatnonzero(minus))
    if plus_states:
        verdict = DivergenceVerdict.DIVERGES_PLUS
    elif minus_states:
        verdict = DivergenceVerdict.DIVERGES_MINUS
    elif bounded:
        verdict = DivergenceVerdict.BOUNDED
    else:
        verdict = DivergenceVerdict.UNKNOWN
    return DivergenceReport(verdict, plus_states, minus_states)


def certify_divergence(
    model: FiniteModel,
    mu: StationaryPolicy,
    J: CostFunction,
    horizon_cap: int = config.HORIZON_CAP,
    blowup_bound: float = config.BLOWUP_BOUND,
) -> DivergenceReport:
    """Decides whether limsup_k (T_mu^k J)(x) is +inf, -inf or bounded."""
    model.check_cost_function(J)
    P, g = model.policy_matrix(mu)
    if J.is_finite:
        if model.discount < 1:
            return _report(np.zeros(len(J), bool), np.zeros(len(J), bool), bounded=True)
        if model.is_deterministic:
            cycle_cost = _cycle_costs(P, g)
            return _report(cycle_cost > config.TOL, cycle_cost < -config.TOL, bounded=True)
        drift = long_run_drift(P, g)
        return _report(drift > 0, drift < 0, bounded=True)

    shifted = model.with_terminal(J)
    estimate = policy_cost(
        shifted, EventuallyStationaryPolicy.stationary(mu), horizon_cap=horizon_cap, blowup_bound=blowup_bound
    )
    values = estimate.values.values
    return _report(values == np.inf, values == -np.inf, bounded=estimate.certified)


def _cycle_costs(P: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Per state, the total stage cost of the cycle its deterministic path ends in."""
    successor = P.argmax(axis=1)
    n = len(successor)
    result = np.zeros(n)
    for start in range(n):
        seen: dict[int, int] = {}
        path = []
        x = start
        while x not in seen:
            seen[x] = len(path)
            path.append(x)
            x = int(successor[x])
        result[start] = g[path[seen[x]:]].sum()
    return result


