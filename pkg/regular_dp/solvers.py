"""
Value iteration, policy iteration (exact and optimistic), the perturbation
method, the linear-programming method and the VI rate bounds.

Algorithmic outcomes (stall, oscillation, divergence) are values in the
returned trace; only bad inputs raise.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import linprog

from . import config
from .chains import long_run_drift
from .errors import LpError, PreconditionError, SolverError
from .extreal import CostFunction, WeightedNorm, abs_gap, sup_distance, weighted_sup_distance
from .model import FiniteModel, StationaryPolicy, apply_T, apply_Tmu, argmin_sets, q_values
from .oracle import evaluate_policy, exact_policy_cost, expected_termination_steps
from .regions import SRegionDescriptor
from .regularity import SRegularity, certify_s_regular, opt_over_regular, well_behaved_region

logger = logging.getLogger(__name__)


class TieBreakRule(Enum):
    KEEP_CURRENT_IF_TIED = "keep-current"
    LOWEST_CONTROL_ID = "lowest-id"
    ALWAYS_SWITCH_IF_TIED = "always-switch"


class Evaluation(Enum):
    EXACT_LINEAR_SOLVE = "exact"
    ITERATIVE_WITH_CAP = "iterative"


class Outcome(Enum):
    CONVERGED = "converged"
    STALLED = "stalled"
    OSCILLATING = "oscillating"
    DIVERGED = "diverged"


@dataclass
class SolveTrace:
    algorithm: str
    iterates: list[CostFunction] = field(default_factory=list)
    residuals: list[float] = field(default_factory=list)
    policies: list[StationaryPolicy] = field(default_factory=list)
    steps: list[int] = field(default_factory=list)
    outcome: Optional[Outcome] = None
    iterations: int = 0
    cycle: tuple[StationaryPolicy, ...] = ()
    diverged_states: tuple[int, ...] = ()
    exhausted: bool = False

    @property
    def final(self) -> CostFunction:
        return self.iterates[-1]

    def record(
        self, J: CostFunction, residual: float, policy: Optional[StationaryPolicy] = None, step: Optional[int] = None
    ) -> None:
        self.steps.append(len(self.steps) if step is None else step)
        self.iterates.append(J)
        self.residuals.append(float(residual))
        if policy is not None:
            self.policies.append(policy)


def _residual(a: CostFunction, b: CostFunction) -> float:
    return float(sup_distance(a, b)) if len(a) else 0.0


# Value iteration ---------------------------------------------------------

def value_iteration(
    model: FiniteModel,
    J0: CostFunction,
    tol: float = config.TOL,
    max_iter: int = config.MAX_ITER,
    target: Optional[CostFunction] = None,
    thin: int = 1,
) -> SolveTrace:
    """J_{k+1} = T J_k from J0.

    `iterations` counts applications of T, including the one that confirms
    the residual. With `thin` > 1 only every thin-th iterate (and the last)
    is kept.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    model.check_cost_function(J0)
    trace = SolveTrace("vi")
    window: deque = deque(maxlen=config.DRIFT_WINDOW)
    J = J0
    for k in range(max_iter):
        TJ, greedy = apply_T(model, J)
        residual = _residual(TJ, J)
        trace.iterations = k + 1
        logger.debug(f"vi iteration {k}: residual {residual:.3e}")
        if residual <= tol:
            trace.record(J, residual, greedy, step=k)
            stalled = (k == 0 and target is None) or (target is not None and not J.isclose(target, tol))
            trace.outcome = Outcome.STALLED if stalled else Outcome.CONVERGED
            break
        if k % thin == 0:
            trace.record(J, residual, greedy, step=k)
        window.append((J, greedy))
        if len(window) == window.maxlen:
            plus, minus = _vi_drift(model, window, TJ)
            if plus.any() or minus.any():
                trace.record(TJ, _residual(apply_T(model, TJ)[0], TJ), greedy, step=k + 1)
                trace.diverged_states = tuple(int(x) for x in np.flatnonzero(plus | minus))
                trace.outcome = Outcome.DIVERGED
                break
            if _repeats(window, TJ, tol):
                trace.record(TJ, _residual(apply_T(model, TJ)[0], TJ), greedy, step=k + 1)
                trace.outcome = Outcome.OSCILLATING
                break
        J = TJ
    else:
        trace.record(J, _residual(apply_T(model, J)[0], J), step=max_iter)
        trace.outcome = Outcome.STALLED
        trace.exhausted = True
        logger.warning(f"value iteration on {model.name} hit max_iter={max_iter}")
    if target is not None and trace.outcome is Outcome.CONVERGED and not trace.final.isclose(target, tol):
        trace.outcome = Outcome.STALLED
    logger.info(f"vi on {model.name}: {trace.outcome.value} after {trace.iterations} iterations")
    return trace


def _vi_drift(model: FiniteModel, window: deque, latest: CostFunction) -> tuple[np.ndarray, np.ndarray]:
    """States certified to go to +inf (blow-up rule) or -inf (blow-up or negative drift rule).

    T^k J <= T_mu^k J for every mu, so a strictly falling state at which the
    greedy policy has negative long-run drift is certified to reach -inf.
    """
    stacked = np.array([J.values for J, _ in window] + [latest.values])
    finite = np.isfinite(stacked).all(axis=0)
    with np.errstate(invalid="ignore"):
        steps = np.diff(stacked, axis=0)
    rising = finite & np.all(steps > 0, axis=0)
    falling = finite & np.all(steps < 0, axis=0)
    plus = rising & (stacked[-1] > config.BLOWUP_BOUND)
    minus = falling & (stacked[-1] < -config.BLOWUP_BOUND)
    if model.discount == 1.0 and falling.any():
        P, g = model.policy_matrix(window[-1][1])
        minus |= falling & (long_run_drift(P, g) < 0)
    return plus, minus


def _repeats(window: deque, latest: CostFunction, tol: float) -> bool:
    for lag, (J, _) in enumerate(reversed(window), start=1):
        if lag >= 2 and np.all(abs_gap(J.values, latest.values) <= tol):
            return True
    return False


@dataclass(frozen=True)
class VIRegionReport:
    j_star_s: CostFunction
    inside: tuple[tuple[CostFunction, CostFunction], ...]
    outside: tuple[tuple[CostFunction, CostFunction], ...]
    inside_converged: bool
    outside_below_bound: bool


def vi_region_check(
    model: FiniteModel,
    S: SRegionDescriptor,
    samples: int = 10,
    seed: int = 0,
    tol: float = config.TOL,
    max_iter: int = config.MAX_ITER,
    spread: float = 10.0,
    agreement_tol: float = 1e-7,
) -> VIRegionReport:
    """Runs VI from seeded starts inside and outside W_S.

    Inside starts must converge to J*_S. Outside starts are only recorded,
    together with whether their limits stay below J*_S + tol.
    """
    region = well_behaved_region(model, S)
    lower = region.lower
    rng = np.random.default_rng(seed)
    off_stop = ~model.stop_mask
    inside, outside = [], []
    inside_ok, bound_ok = True, True
    for _ in range(samples):
        for sign, bucket in ((1.0, inside), (-1.0, outside)):
            values = np.array(lower.values)
            if not np.isfinite(values[off_stop]).all():
                continue
            values[off_stop] += sign * rng.uniform(0.5, spread, size=int(off_stop.sum()))
            start = CostFunction(values)
            if (sign > 0) != region.contains(start):
                continue
            limit = value_iteration(model, start, tol=tol, max_iter=max_iter).final
            bucket.append((start, limit))
            if sign > 0:
                inside_ok &= limit.isclose(lower, agreement_tol)
            elif start.leq(lower):
                bound_ok &= limit.leq(lower, tol)
    return VIRegionReport(lower, tuple(inside), tuple(outside), inside_ok, bound_ok)


# Policy iteration --------------------------------------------------------

def improve_policy(
    model: FiniteModel, mu: StationaryPolicy, J: CostFunction, rule: TieBreakRule
) -> StationaryPolicy:
    """A greedy policy at J, i.e. T_nu J = T J, chosen among ties by `rule`."""
    choice = []
    for x, ids in enumerate(argmin_sets(q_values(model, J), model.legal)):
        ids = [int(u) for u in ids]
        if rule is TieBreakRule.KEEP_CURRENT_IF_TIED and mu[x] in ids:
            choice.append(mu[x])
        elif rule is TieBreakRule.ALWAYS_SWITCH_IF_TIED:
            others = [u for u in ids if u != mu[x]]
            choice.append(others[0] if others else mu[x])
        else:
            choice.append(ids[0])
    return StationaryPolicy(tuple(choice))


def _evaluate(
    model: FiniteModel, mu: StationaryPolicy, evaluation: Evaluation, horizon_cap: int, blowup_bound: float
) -> CostFunction:
    if evaluation is Evaluation.EXACT_LINEAR_SOLVE:
        return exact_policy_cost(model, mu)
    return evaluate_policy(model, mu, horizon_cap, blowup_bound).cost


def policy_iteration(
    model: FiniteModel,
    mu0: StationaryPolicy,
    rule: TieBreakRule = TieBreakRule.KEEP_CURRENT_IF_TIED,
    evaluation: Evaluation = Evaluation.ITERATIVE_WITH_CAP,
    max_iter: int = config.MAX_ITER,
    horizon_cap: int = config.HORIZON_CAP,
    blowup_bound: float = config.BLOWUP_BOUND,
) -> SolveTrace:
    """Alternates evaluation of J_{mu^k} with greedy improvement.

    ITERATIVE_WITH_CAP solves the linear system for chains that reach the stop
    set (or when alpha < 1) and falls back to certified limsup iteration for
    the rest, so improper policies get their infinite costs. EXACT_LINEAR_SOLVE
    raises ImproperPolicyError on them.
    """
    model.check_policy(mu0)
    trace = SolveTrace("pi")
    seen: dict[StationaryPolicy, int] = {}
    mu = mu0
    for k in range(max_iter):
        J = _evaluate(model, mu, evaluation, horizon_cap, blowup_bound)
        TJ, _ = apply_T(model, J)
        seen[mu] = k
        trace.record(J, _residual(TJ, J), mu)
        trace.iterations = k + 1
        nxt = improve_policy(model, mu, J, rule)
        logger.debug(f"pi step {k}: {mu.choice} -> {nxt.choice}")
        if nxt == mu:
            minus = np.flatnonzero(J.values == -np.inf)
            if minus.size:
                trace.outcome = Outcome.DIVERGED
                trace.diverged_states = tuple(int(x) for x in minus)
            else:
                trace.outcome = Outcome.CONVERGED
            break
        if nxt in seen:
            trace.cycle = tuple(trace.policies[seen[nxt]:])
            trace.outcome = Outcome.OSCILLATING
            break
        mu = nxt
    else:
        trace.outcome = Outcome.STALLED
        trace.exhausted = True
    logger.info(f"pi on {model.name}: {trace.outcome.value} after {trace.iterations} evaluations")
    return trace


def optimistic_pi(
    model: FiniteModel,
    J0: CostFunction,
    m_schedule: Union[int, Sequence[int]] = config.OPTIMISTIC_M,
    tol: float = config.TOL,
    max_iter: int = config.MAX_ITER,
    target: Optional[CostFunction] = None,
) -> SolveTrace:
    """T_{mu^k} J_k = T J_k, then J_{k+1} = T_{mu^k}^{m_k} J_k, from J0 >= T J0."""
    model.check_cost_function(J0)
    schedule = [m_schedule] if isinstance(m_schedule, int) else list(m_schedule)
    if not schedule or any(m < 1 for m in schedule):
        raise ValueError("m_schedule entries must be positive")
    TJ0, _ = apply_T(model, J0)
    if not TJ0.leq(J0, tol):
        bad = np.flatnonzero(TJ0.values > J0.values + tol).tolist()
        raise PreconditionError(f"optimistic PI needs J0 >= T J0; violated at states {bad}")

    trace = SolveTrace("optimistic-pi")
    J = J0
    for k in range(max_iter):
        TJ, mu = apply_T(model, J)
        residual = _residual(TJ, J)
        trace.record(J, residual, mu)
        trace.iterations = k + 1
        if residual <= tol:
            stalled = (k == 0 and target is None) or (target is not None and not J.isclose(target, tol))
            trace.outcome = Outcome.STALLED if stalled else Outcome.CONVERGED
            break
        for _ in range(schedule[min(k, len(schedule) - 1)]):
            J = apply_Tmu(model, mu, J)
    else:
        trace.outcome = Outcome.STALLED
        trace.exhausted = True
    logger.info(f"optimistic pi on {model.name}: {trace.outcome.value} after {trace.iterations} iterations")
    return trace


@dataclass(frozen=True)
class OptimisticAudit:
    all_regular: bool
    all_in_region: bool
    irregular_policies: tuple[StationaryPolicy, ...]
    outside_iterates: tuple[int, ...]


def audit_optimistic_trace(model: FiniteModel, trace: SolveTrace, S: SRegionDescriptor) -> OptimisticAudit:
    """Checks after the fact that every generated policy is S-regular and every iterate lies in S."""
    irregular = tuple(
        mu for mu in dict.fromkeys(trace.policies)
        if certify_s_regular(model, mu, S) is not SRegularity.CERTIFIED
    )
    outside = tuple(k for k, J in enumerate(trace.iterates) if not S.contains(model, J))
    return OptimisticAudit(not irregular, not outside, irregular, outside)


# Perturbation ------------------------------------------------------------

@dataclass(frozen=True)
class PerturbationSchedule:
    deltas: tuple[float, ...]

    def __post_init__(self):
        deltas = tuple(float(d) for d in self.deltas)
        if not deltas or any(d <= 0 for d in deltas):
            raise ValueError("perturbation deltas must be positive")
        if any(b >= a for a, b in zip(deltas, deltas[1:])):
            raise ValueError("perturbation deltas must be strictly decreasing")
        object.__setattr__(self, "deltas", deltas)

    @classmethod
    def geometric(cls, steps: int = config.PERTURBATION_STEPS, start: float = 1.0, ratio: float = 0.5):
        return cls(tuple(start * ratio**k for k in range(steps)))


@dataclass(frozen=True)
class PerturbationResult:
    estimate: CostFunction
    deltas: tuple[float, ...]
    values: tuple[CostFunction, ...]
    extrapolated: bool


def find_proper_policy(model: FiniteModel) -> StationaryPolicy:
    """A policy that reaches the stop set from every state, by backward layering.

    Each state picks the lowest control with positive probability of entering
    an earlier layer. Without a stop set (alpha < 1) the lowest-id policy is returned.
    """
    if not model.stop_set:
        if model.discount < 1:
            return StationaryPolicy((0,) * model.n_states)
        raise SolverError(f"{model.name} has no stop set and alpha = 1")
    reached = model.stop_mask.copy()
    choice = [0] * model.n_states
    while not reached.all():
        layer = []
        for x in np.flatnonzero(~reached):
            hits = model.transitions[x][:, reached].sum(axis=1)
            legal = np.flatnonzero(model.legal[x] & (hits > 0))
            if legal.size:
                choice[x] = int(legal[0])
                layer.append(x)
        if not layer:
            raise SolverError(f"no proper policy exists for {model.name}")
        reached[layer] = True
    return StationaryPolicy(tuple(choice))


def perturbation_solve(
    model: FiniteModel,
    schedule: Optional[PerturbationSchedule] = None,
    inner_tol: float = config.TOL,
    inner: str = "pi",
    max_iter: int = config.MAX_ITER,
    fit_points: int = 5,
) -> PerturbationResult:
    """Solves the delta-perturbed problems and extrapolates J*_delta to delta = 0."""
    schedule = schedule or PerturbationSchedule.geometric()
    values = []
    for delta in schedule.deltas:
        perturbed = model.perturbed(delta)
        if inner == "pi":
            trace = policy_iteration(perturbed, find_proper_policy(perturbed), max_iter=max_iter)
        elif inner == "vi":
            trace = value_iteration(perturbed, perturbed.terminal, tol=inner_tol, max_iter=max_iter)
        else:
            raise ValueError(f"unknown inner solver {inner!r}")
        if trace.outcome is not Outcome.CONVERGED:
            raise SolverError(f"inner {inner} solve failed at delta={delta:g}: {trace.outcome.value}")
        values.append(trace.final)
        logger.debug(f"delta={delta:g}: {trace.final.to_json()}")

    deltas = np.array(schedule.deltas)
    curve = np.array([J.values for J in values])
    tail = slice(-min(fit_points, len(values)), None)
    estimate = np.array(curve[-1])
    extrapolated = len(values) >= 2
    finite = np.isfinite(curve[tail]).all(axis=0)
    if extrapolated and finite.any():
        xs, ys = deltas[tail], curve[tail][:, finite]
        slope, intercept = np.polyfit(xs, ys, 1)
        misfit = np.abs(np.outer(xs, slope) + intercept - ys).max()
        if misfit <= inner_tol * (1.0 + np.abs(ys).max()):
            estimate[finite] = intercept
        else:
            extrapolated = False
    if not extrapolated:
        logger.warning(f"perturbation curve of {model.name} is not affine near 0; reporting the last value")
    estimate[model.stop_mask] = 0.0
    return PerturbationResult(CostFunction(estimate), tuple(schedule.deltas), tuple(values), extrapolated)


# Linear programming ------------------------------------------------------

@dataclass(frozen=True)
class LpResult:
    values: CostFunction
    box_active: tuple[int, ...]
    objective: float


def lp_solve(
    model: FiniteModel,
    beta: Optional[Sequence[float]] = None,
    box: float = config.LP_BOX,
) -> LpResult:
    """Maximizes sum_i beta_i J(i) subject to J(i) <= H(i, u, J) for all (i, u), inside [-box, box]."""
    n = model.n_states
    weights = np.ones(n) if beta is None else np.asarray(beta, dtype=float)
    if weights.shape != (n,) or np.any(weights <= 0):
        raise ValueError("LP weights must be positive, one per state")
    if not box > 0 or not np.isfinite(box):
        raise ValueError("LP box must be a positive real")
    xs, us = np.nonzero(model.legal)
    A = np.zeros((len(xs), n))
    A[np.arange(len(xs)), xs] = 1.0
    A -= model.discount * model.transitions[xs, us]
    b = model.costs[xs, us]
    bounds = [(0.0, 0.0) if model.stop_mask[x] else (-box, box) for x in range(n)]
    result = linprog(
        -weights,
        A_ub=A,
        b_ub=b,
        bounds=bounds,
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if result.status == 2:
        raise LpError(f"LP infeasible inside box [-{box}, {box}]")
    if result.status != 0:
        raise LpError(f"LP failed: {result.message}")
    values = np.array(result.x)
    values[model.stop_mask] = 0.0
    active = tuple(int(x) for x in np.flatnonzero((np.abs(values) >= box - config.TOL) & ~model.stop_mask))
    if active:
        logger.warning(f"LP box [-{box}, {box}] is active at states {list(active)}")
    return LpResult(CostFunction(values), active, float(weights @ values))


# VI rate bounds ----------------------------------------------------------

@dataclass(frozen=True)
class RateCheck:
    contraction_lhs: float
    contraction_rhs: float
    error_lhs: float
    error_rhs: float
    modulus: float
    modulus_exceeds: bool


def contraction_modulus(model: FiniteModel, mu: StationaryPolicy, v: WeightedNorm) -> float:
    """max_x sum_y alpha p(y | x, mu(x)) v(y) / v(x), over the states outside the stop set."""
    P, _ = model.policy_matrix(mu)
    free = ~model.stop_mask
    w = v.as_array()
    if not free.any():
        return 0.0
    rows = model.discount * P[np.ix_(free, free)] @ w[free] / w[free]
    return float(rows.max())


def hitting_time_norm(model: FiniteModel, mu: StationaryPolicy) -> tuple[WeightedNorm, float]:
    """Weights v = expected steps to the stop set (1 on it) and the modulus of T_mu in that norm."""
    steps = expected_termination_steps(model, mu)
    weights = np.where(model.stop_mask, 1.0, steps)
    free = ~model.stop_mask
    beta = float(((steps[free] - 1.0) / steps[free]).max()) if free.any() else 0.0
    return WeightedNorm(tuple(weights)), beta


def vi_rate_check(
    model: FiniteModel,
    J: CostFunction,
    v: WeightedNorm,
    beta: float,
    j_star_s: Optional[CostFunction] = None,
    optimal_policy: Optional[StationaryPolicy] = None,
    S: Optional[SRegionDescriptor] = None,
) -> RateCheck:
    """Both sides of ||TJ - J*_S||_v <= beta ||J - J*_S||_v and of the a-posteriori error bound."""
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    S = S or SRegionDescriptor.all_real()
    if j_star_s is None:
        j_star_s = opt_over_regular(model, S)
    if not j_star_s.leq(J):
        raise PreconditionError("rate bounds need J >= J*_S")
    TJ, _ = apply_T(model, J)
    mu = optimal_policy or apply_T(model, j_star_s)[1]
    modulus = contraction_modulus(model, mu, v)
    exceeds = modulus > beta + 1e-12
    if exceeds:
        logger.warning(f"empirical contraction modulus {modulus:.6f} exceeds beta={beta}")
    distance = float(weighted_sup_distance(J, j_star_s, v))
    with np.errstate(invalid="ignore"):
        slack = np.where(J.values == TJ.values, 0.0, J.values - TJ.values) / v.as_array()
    return RateCheck(
        contraction_lhs=float(weighted_sup_distance(TJ, j_star_s, v)),
        contraction_rhs=beta * distance,
        error_lhs=distance,
        error_rhs=float(slack.max()) / (1.0 - beta),
        modulus=modulus,
        modulus_exceeds=exceeds,
    )
