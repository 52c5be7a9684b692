"""
Finite instances of the abstract DP model.

A model supplies the monotone mapping

    H(x, u, J) = g(x, u) + alpha * sum_y p(y | x, u) J(y)

from which the Bellman operator T, the policy operators T_mu, finite-horizon
compositions and policy costs (limsup of k-stage costs started at J_bar)
are built.
"""

import hashlib
import logging
from collections import deque, namedtuple
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Optional, Sequence, TYPE_CHECKING

import numpy as np

from . import config
from .chains import is_deterministic, long_run_drift
from .errors import ModelValidationError, PolicyError, ShapeError
from .extreal import CostFunction, ExtendedReal, abs_gap, ext_add, ext_matvec, ext_scale

if TYPE_CHECKING:
    from .regions import SRegionDescriptor

logger = logging.getLogger(__name__)

Outcome = namedtuple("Outcome", "prob state cost", defaults=(0.0,))


@dataclass(frozen=True)
class Action:
    """One control at one state: a stage cost plus a finite successor distribution.

    Per-successor costs in `outcomes` are folded into the expected stage cost.
    """

    label: str
    outcomes: tuple[Outcome, ...]
    cost: float = 0.0

    def expected_cost(self) -> float:
        return float(self.cost) + sum(o.prob * o.cost for o in self.outcomes)


@dataclass(frozen=True)
class StationaryPolicy:
    choice: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "choice", tuple(int(u) for u in self.choice))

    def __len__(self) -> int:
        return len(self.choice)

    def __getitem__(self, x: int) -> int:
        return self.choice[x]

    def labels(self, model: "FiniteModel") -> list[str]:
        return [model.controls[x][u] for x, u in enumerate(self.choice)]


@dataclass(frozen=True)
class EventuallyStationaryPolicy:
    """mu_0, ..., mu_{k-1} followed by `tail` forever."""

    tail: StationaryPolicy
    prefix: tuple[StationaryPolicy, ...] = ()

    @classmethod
    def stationary(cls, mu: StationaryPolicy) -> "EventuallyStationaryPolicy":
        return cls(tail=mu)


class PairSetKind(Enum):
    ALL_PAIRS = "all"
    FINITE_COST_PAIRS = "finite-cost"
    REGULAR_STATIONARY_PAIRS = "regular-stationary"


@dataclass(frozen=True)
class PairSetDescriptor:
    kind: PairSetKind
    region: Optional["SRegionDescriptor"] = None


@dataclass(frozen=True, eq=False)
class FiniteModel:
    controls: tuple[tuple[str, ...], ...]
    transitions: np.ndarray  # (n, m, n); unused control slots are all zero
    costs: np.ndarray  # (n, m) expected stage costs
    discount: float = 1.0
    terminal: Optional[CostFunction] = None
    stop_set: frozenset[int] = field(default_factory=frozenset)
    state_labels: tuple[str, ...] = ()
    name: str = "model"

    def __post_init__(self):
        n = len(self.controls)
        transitions = np.array(self.transitions, dtype=float)
        costs = np.array(self.costs, dtype=float)
        transitions.setflags(write=False)
        costs.setflags(write=False)
        object.__setattr__(self, "controls", tuple(tuple(str(c) for c in u) for u in self.controls))
        object.__setattr__(self, "transitions", transitions)
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(self, "stop_set", frozenset(int(x) for x in self.stop_set))
        if self.terminal is None:
            object.__setattr__(self, "terminal", CostFunction.zeros(n))
        if not self.state_labels:
            object.__setattr__(self, "state_labels", tuple(str(x) for x in range(n)))
        self._validate()

    @classmethod
    def from_actions(
        cls,
        actions: Sequence[Sequence[Action]],
        discount: float = 1.0,
        terminal: Optional[CostFunction] = None,
        stop_set: Sequence[int] = (),
        state_labels: Sequence[str] = (),
        name: str = "model",
    ) -> "FiniteModel":
        n = len(actions)
        m = max((len(a) for a in actions), default=0)
        transitions = np.zeros((n, m, n))
        costs = np.zeros((n, m))
        for x, state_actions in enumerate(actions):
            if not state_actions:
                raise ModelValidationError("control set U(x) is empty", state=x)
            for u, action in enumerate(state_actions):
                for outcome in action.outcomes:
                    if not 0 <= outcome.state < n:
                        raise ModelValidationError(
                            f"successor {outcome.state} out of range", state=x, control=u
                        )
                    transitions[x, u, outcome.state] += outcome.prob
                costs[x, u] = action.expected_cost()
        return cls(
            controls=tuple(tuple(a.label for a in state_actions) for state_actions in actions),
            transitions=transitions,
            costs=costs,
            discount=discount,
            terminal=terminal,
            stop_set=frozenset(stop_set),
            state_labels=tuple(state_labels),
            name=name,
        )

    def _validate(self) -> None:
        n, m = self.n_states, self.max_controls
        if self.transitions.shape != (n, m, n) or self.costs.shape != (n, m):
            raise ModelValidationError(
                f"table shapes {self.transitions.shape} / {self.costs.shape} do not match {n} states"
            )
        if not 0 < self.discount <= 1:
            raise ModelValidationError(f"discount must lie in (0, 1], got {self.discount}")
        if len(self.terminal) != n:
            raise ModelValidationError(f"terminal function has length {len(self.terminal)}, expected {n}")
        if len(self.state_labels) != n:
            raise ModelValidationError("one label per state is required")
        for x in range(n):
            if not self.controls[x]:
                raise ModelValidationError("control set U(x) is empty", state=x)
            for u in range(m):
                row = self.transitions[x, u]
                if u >= len(self.controls[x]):
                    if row.any() or self.costs[x, u] != 0:
                        raise ModelValidationError("data stored for a missing control", state=x, control=u)
                    continue
                if (row < 0).any():
                    raise ModelValidationError("negative transition probability", state=x, control=u)
                if abs(row.sum() - 1.0) > config.PROBABILITY_SUM_TOL:
                    raise ModelValidationError(
                        f"transition probabilities sum to {row.sum()!r}", state=x, control=u
                    )
                if not np.isfinite(self.costs[x, u]):
                    raise ModelValidationError("stage cost must be finite", state=x, control=u)
        for x in sorted(self.stop_set):
            if not 0 <= x < n:
                raise ModelValidationError("stop-set state out of range", state=x)
            for u in range(len(self.controls[x])):
                if self.costs[x, u] != 0:
                    raise ModelValidationError("stop-set state is not cost-free", state=x, control=u)
                leaving = [y for y in np.flatnonzero(self.transitions[x, u] > 0) if y not in self.stop_set]
                if leaving:
                    raise ModelValidationError("stop-set state is not absorbing", state=x, control=u)

    # Shape and bookkeeping -------------------------------------------------

    @property
    def n_states(self) -> int:
        return len(self.controls)

    @property
    def max_controls(self) -> int:
        return max((len(u) for u in self.controls), default=0)

    @cached_property
    def legal(self) -> np.ndarray:
        mask = np.zeros((self.n_states, self.max_controls), dtype=bool)
        for x, u in enumerate(self.controls):
            mask[x, : len(u)] = True
        return mask

    @cached_property
    def stop_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_states, dtype=bool)
        mask[list(self.stop_set)] = True
        return mask

    @property
    def policy_count(self) -> int:
        return int(np.prod([len(u) for u in self.controls], dtype=object))

    @cached_property
    def is_deterministic(self) -> bool:
        rows = self.transitions[self.legal]
        return is_deterministic(rows)

    @cached_property
    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(repr((self.controls, self.discount, sorted(self.stop_set))).encode())
        for array in (self.transitions, self.costs, self.terminal.values):
            digest.update(np.ascontiguousarray(array).tobytes())
        return digest.hexdigest()

    def __eq__(self, other) -> bool:
        if not isinstance(other, FiniteModel):
            return NotImplemented
        return (
            self.controls == other.controls
            and np.array_equal(self.transitions, other.transitions)
            and np.array_equal(self.costs, other.costs)
            and self.discount == other.discount
            and self.terminal == other.terminal
            and self.stop_set == other.stop_set
            and self.state_labels == other.state_labels
        )

    def __hash__(self) -> int:
        return hash(self.fingerprint)

    def check_cost_function(self, J: CostFunction) -> None:
        if len(J) != self.n_states:
            raise ShapeError(f"cost function has length {len(J)}, model has {self.n_states} states")

    def check_policy(self, mu: StationaryPolicy) -> None:
        if len(mu) != self.n_states:
            raise PolicyError(f"policy covers {len(mu)} states, model has {self.n_states}")
        for x, u in enumerate(mu.choice):
            if not 0 <= u < len(self.controls[x]):
                raise PolicyError(f"control {u} is not legal at state {x}")

    def policy_matrix(self, mu: StationaryPolicy) -> tuple[np.ndarray, np.ndarray]:
        """Transition matrix and stage-cost vector of the chain driven by mu."""
        self.check_policy(mu)
        rows = np.arange(self.n_states)
        choice = np.array(mu.choice, dtype=int)
        return self.transitions[rows, choice], self.costs[rows, choice]

    def policy_by_labels(self, labels: Sequence[str]) -> StationaryPolicy:
        try:
            return StationaryPolicy(tuple(self.controls[x].index(lbl) for x, lbl in enumerate(labels)))
        except ValueError as exc:
            raise PolicyError(f"unknown control label in {list(labels)}") from exc

    def lift(self, value) -> CostFunction:
        """`value` on every state outside the stop set, 0 on it."""
        values = np.full(self.n_states, float(value))
        values[self.stop_mask] = 0.0
        return CostFunction(values)

    def embed(self, values: Sequence[float]) -> CostFunction:
        """Places values for the non-stop states (in id order) into a full cost function."""
        full = np.zeros(self.n_states)
        free = np.flatnonzero(~self.stop_mask)
        if len(values) != len(free):
            raise ShapeError(f"expected {len(free)} values, got {len(values)}")
        full[free] = np.asarray(values, dtype=float)
        return CostFunction(full)

    def with_terminal(self, terminal: CostFunction) -> "FiniteModel":
        """Same dynamics, iterated from `terminal` instead of J_bar."""
        return replace(self, terminal=terminal)

    def perturbed(self, delta: float) -> "FiniteModel":
        """The delta-perturbed model: stage costs g + delta off the stop set."""
        costs = np.array(self.costs)
        off_stop = self.legal & ~self.stop_mask[:, None]
        costs[off_stop] += delta
        return FiniteModel(
            controls=self.controls,
            transitions=self.transitions,
            costs=costs,
            discount=self.discount,
            terminal=self.terminal,
            stop_set=self.stop_set,
            state_labels=self.state_labels,
            name=f"{self.name}+delta={delta:g}",
        )


# Operators ---------------------------------------------------------------

def apply_H(model: FiniteModel, x: int, u: int, J: CostFunction) -> ExtendedReal:
    model.check_cost_function(J)
    if not 0 <= u < len(model.controls[x]):
        raise PolicyError(f"control {u} is not legal at state {x}")
    expectation = ext_matvec(model.transitions[x, u], J.values)
    return ext_add(model.costs[x, u], ext_scale(model.discount, expectation))


def q_values(model: FiniteModel, J: CostFunction) -> np.ndarray:
    """H(x, u, J) for every pair; +inf in slots of missing controls."""
    model.check_cost_function(J)
    expectation = model.discount * ext_matvec(model.transitions, J.values)
    q = model.costs + expectation
    return np.where(model.legal, q, np.inf)


def argmin_sets(q: np.ndarray, legal: np.ndarray, tol: float = config.TOL) -> list[np.ndarray]:
    """Per state, the sorted control ids whose H value is within tol of the minimum."""
    best = np.where(legal, q, np.inf).min(axis=1)
    close = legal & (abs_gap(q, best[:, None]) <= tol)
    return [np.flatnonzero(row) for row in close]


def apply_T(model: FiniteModel, J: CostFunction) -> tuple[CostFunction, StationaryPolicy]:
    q = q_values(model, J)
    greedy = StationaryPolicy(tuple(int(ids[0]) for ids in argmin_sets(q, model.legal)))
    return CostFunction(q.min(axis=1)), greedy


def _tmu(model: FiniteModel, P: np.ndarray, g: np.ndarray, values: np.ndarray) -> np.ndarray:
    return g + model.discount * ext_matvec(P, values)


def apply_Tmu(model: FiniteModel, mu: StationaryPolicy, J: CostFunction) -> CostFunction:
    model.check_cost_function(J)
    P, g = model.policy_matrix(mu)
    return CostFunction(_tmu(model, P, g, J.values))


def compose_prefix(
    model: FiniteModel, policies: Sequence[StationaryPolicy], J: CostFunction
) -> CostFunction:
    """T_{mu_0}(T_{mu_1}(... T_{mu_k} J))."""
    for mu in reversed(list(policies)):
        J = apply_Tmu(model, mu, J)
    return J


# Policy cost -------------------------------------------------------------

@dataclass(frozen=True)
class PolicyCost:
    values: CostFunction
    converged: tuple[bool, ...]
    oscillating: tuple[bool, ...]
    iterations: int

    @property
    def certified(self) -> bool:
        return all(self.converged)


def policy_cost(
    model: FiniteModel,
    pi: EventuallyStationaryPolicy,
    horizon_cap: int = config.HORIZON_CAP,
    blowup_bound: float = config.BLOWUP_BOUND,
    tol: float = config.TOL,
    window: int = config.DRIFT_WINDOW,
) -> PolicyCost:
    """Limsup of the k-stage costs of pi started from J_bar.

    With alpha = 1 and a real-valued J_bar the growth rate of the k-stage cost
    is the long-run average cost of the tail chain pushed through the prefix,
    which certifies +inf / -inf exactly. Otherwise a state is certified
    infinite when its iterate drifts monotonically past +/-blowup_bound over
    the trailing window.
    """
    if horizon_cap < 1 or blowup_bound <= 0:
        raise ValueError("horizon_cap must be >= 1 and blowup_bound > 0")
    prefix = [m for m in pi.prefix]
    for mu in prefix:
        model.check_policy(mu)
    P, g = model.policy_matrix(pi.tail)
    n = model.n_states

    plus = np.zeros(n, dtype=bool)
    minus = np.zeros(n, dtype=bool)
    if model.discount == 1.0 and model.terminal.is_finite:
        drift = long_run_drift(P, g)
        for mu in reversed(prefix):
            drift = model.policy_matrix(mu)[0] @ drift
        drift[np.abs(drift) <= 1e-10] = 0.0
        plus, minus = drift > 0, drift < 0

    def through_prefix(values: np.ndarray) -> np.ndarray:
        for mu in reversed(prefix):
            Pm, gm = model.policy_matrix(mu)
            values = _tmu(model, Pm, gm, values)
        return values

    V = model.terminal.values
    history: deque = deque(maxlen=window)
    settled = np.zeros(n, dtype=bool)
    periodic = np.zeros(n, dtype=bool)
    k = 0
    for k in range(1, horizon_cap + 1):
        V = _tmu(model, P, g, V)
        history.append(through_prefix(V))
        if len(history) < 2:
            continue
        active = ~(plus | minus)
        settled = abs_gap(history[-1], history[-2]) <= tol
        if np.all(settled | ~active):
            break
        if len(history) == window:
            plus |= active & _drifts_past(history, blowup_bound, +1)
            minus |= active & _drifts_past(history, blowup_bound, -1)
            periodic = _periodic(history, tol)
            if np.all(settled | periodic | plus | minus):
                break

    stacked = np.array(history)
    last = stacked[-1]
    values = np.where(settled, last, stacked.max(axis=0))
    values = np.where(plus, np.inf, np.where(minus, -np.inf, values))
    spread = abs_gap(stacked.max(axis=0), stacked.min(axis=0)) > tol
    oscillating = ~settled & periodic & spread & ~(plus | minus)
    converged = settled | periodic | plus | minus
    if not converged.all():
        logger.info(f"policy cost uncertified at states {np.flatnonzero(~converged).tolist()} after {k} steps")
    return PolicyCost(
        values=CostFunction(values),
        converged=tuple(bool(c) for c in converged),
        oscillating=tuple(bool(o) for o in oscillating),
        iterations=k,
    )


def _drifts_past(history: deque, bound: float, sign: int) -> np.ndarray:
    stacked = sign * np.array(history)
    with np.errstate(invalid="ignore"):
        steps = np.diff(stacked, axis=0)
    monotone = np.all((steps > 0) | (stacked[1:] == np.inf), axis=0)
    return monotone & (stacked[-1] > bound)


def _periodic(history: deque, tol: float) -> np.ndarray:
    """States whose trailing window repeats with some period 1 <= p <= len/2."""
    stacked = np.array(history)
    found = np.zeros(stacked.shape[1], dtype=bool)
    for p in range(1, len(stacked) // 2 + 1):
        found |= np.all(abs_gap(stacked[p:], stacked[:-p]) <= tol, axis=0)
    return found


def restricted_opt_cost(
    model: FiniteModel, C: PairSetDescriptor, limit: int = config.ENUMERATION_LIMIT
) -> CostFunction:
    """Infimum of J_pi(x) over the stationary pairs (pi, x) admitted by C."""
    from .oracle import policy_cost_table
    from .regions import SRegionDescriptor
    from .regularity import opt_over_regular

    if C.kind is PairSetKind.REGULAR_STATIONARY_PAIRS:
        return opt_over_regular(model, C.region or SRegionDescriptor.all_real(), limit=limit)
    # a state where every policy costs +inf has an empty finite-cost slice, so J*_C = J* there too
    table = np.array([J.values for J in policy_cost_table(model, limit).values()])
    return CostFunction(table.min(axis=0))
