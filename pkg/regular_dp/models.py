"""
Model builders: the two-state shortest-path pathology, line-grid stopping
problems, and seeded random SSP / nonnegative / discounted instances.

Random instances draw from `numpy.random.default_rng(seed)` (PCG64), so a
seed fixes the instance bit for bit on every platform.
"""

import logging
from typing import Any, Callable, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from . import config
from .extreal import CostFunction
from .model import Action, FiniteModel, Outcome

logger = logging.getLogger(__name__)

Move = Literal["left", "right", "stay"]


class DetSpParams(BaseModel):
    a: float = Field(description="cost of the self-transition at state 1")
    b: float = Field(description="cost of the transition to t")


class GridControlParams(BaseModel):
    n: int = Field(ge=2, description="number of cells; cell 0 is the stop set")
    left_cost: float = 1.0
    right_cost: float = 1.0
    stay_cost: float = 0.0
    entry_cost: Optional[float] = Field(default=None, description="cost of the move from cell 1 into cell 0")
    moves: tuple[Move, ...] = ("left", "right", "stay")
    step_costs: dict[str, float] = Field(default_factory=dict, description='overrides keyed "cell:move"')

    @model_validator(mode="after")
    def _check_moves(self):
        if not self.moves or len(set(self.moves)) != len(self.moves):
            raise ValueError("moves must be a nonempty set")
        if "left" not in self.moves:
            raise ValueError("the stop cell is unreachable without the left move")
        return self


class RandomSspParams(BaseModel):
    n_states: int = Field(default=5, ge=2)
    n_controls: int = Field(default=2, ge=1)
    cost_range: tuple[float, float] = (0.0, 1.0)
    proper_bias: float = Field(default=1.0, ge=0.0, le=1.0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_range(self):
        low, high = self.cost_range
        if not low <= high:
            raise ValueError(f"cost_range {self.cost_range} is empty")
        return self


class NonnegParams(BaseModel):
    n_states: int = Field(default=5, ge=2)
    n_controls: int = Field(default=2, ge=1)
    seed: int = 0


class DiscountedParams(BaseModel):
    n_states: int = Field(default=5, ge=1)
    n_controls: int = Field(default=2, ge=1)
    alpha: float = Field(default=0.9, gt=0.0, lt=1.0)
    seed: int = 0


def build_detsp(p: DetSpParams) -> FiniteModel:
    """State 1 either loops at cost a or moves to the absorbing state t at cost b."""
    actions = [
        [Action("self", (Outcome(1.0, 0),), p.a), Action("to-t", (Outcome(1.0, 1),), p.b)],
        [Action("stay", (Outcome(1.0, 1),), 0.0)],
    ]
    return FiniteModel.from_actions(
        actions, discount=1.0, stop_set=[1], state_labels=["1", "t"], name=f"detsp(a={p.a:g},b={p.b:g})"
    )


def build_grid_control(p: GridControlParams) -> FiniteModel:
    """Deterministic moves on cells 0..n-1; moves that would leave the line are not offered."""
    offsets = {"left": -1, "right": 1, "stay": 0}
    default = {"left": p.left_cost, "right": p.right_cost, "stay": p.stay_cost}
    actions = [[Action("stop", (Outcome(1.0, 0),), 0.0)]]
    for cell in range(1, p.n):
        cell_actions = []
        for move in p.moves:
            target = cell + offsets[move]
            if not 0 <= target < p.n:
                continue
            cost = default[move]
            if target == 0 and p.entry_cost is not None:
                cost = p.entry_cost
            cost = p.step_costs.get(f"{cell}:{move}", cost)
            cell_actions.append(Action(move, (Outcome(1.0, target),), cost))
        actions.append(cell_actions)
    return FiniteModel.from_actions(
        actions, discount=1.0, stop_set=[0], state_labels=[str(c) for c in range(p.n)], name=f"grid(n={p.n})"
    )


def _random_transitions(
    rng: np.random.Generator, n: int, m: int, cost_range: tuple[float, float], proper_bias: float
) -> tuple[np.ndarray, np.ndarray]:
    """Tables for an SSP whose last state is the cost-free terminal.

    Control 0 always sends at least 0.2 * proper_bias of its mass to the
    terminal; every other control does so with probability proper_bias.
    All draws happen in a fixed order whatever the branch taken.
    """
    terminal = n - 1
    transitions = np.zeros((n, m, n))
    costs = np.zeros((n, m))
    for x in range(terminal):
        for u in range(m):
            weights = rng.dirichlet(np.ones(terminal))
            mass = proper_bias * rng.uniform(0.2, 1.0)
            coin = rng.random()
            cost = rng.uniform(*cost_range)
            if u > 0 and coin >= proper_bias:
                mass = 0.0
            transitions[x, u, :terminal] = (1.0 - mass) * weights
            transitions[x, u, terminal] = mass
            transitions[x, u] /= transitions[x, u].sum()
            costs[x, u] = cost
    transitions[terminal, 0, terminal] = 1.0
    return transitions, costs


def _ssp_model(transitions: np.ndarray, costs: np.ndarray, name: str) -> FiniteModel:
    n, m, _ = transitions.shape
    controls = tuple(tuple(f"u{u}" for u in range(m)) for _ in range(n - 1)) + (("stop",),)
    return FiniteModel(
        controls=controls,
        transitions=transitions,
        costs=costs,
        discount=1.0,
        stop_set=frozenset({n - 1}),
        state_labels=tuple([str(x) for x in range(n - 1)] + ["t"]),
        name=name,
    )


def build_random_ssp(p: RandomSspParams) -> FiniteModel:
    rng = np.random.default_rng(p.seed)
    transitions, costs = _random_transitions(rng, p.n_states, p.n_controls, p.cost_range, p.proper_bias)
    return _ssp_model(transitions, costs, f"random-ssp(seed={p.seed})")


def build_nonneg_mdp(p: NonnegParams) -> FiniteModel:
    """A random SSP with costs in [0, 1], about a third of them zero, and half the controls able to stall."""
    rng = np.random.default_rng(p.seed)
    transitions, costs = _random_transitions(rng, p.n_states, p.n_controls, (0.0, 1.0), 0.5)
    costs[rng.random(costs.shape) < 1 / 3] = 0.0
    return _ssp_model(transitions, costs, f"nonneg-mdp(seed={p.seed})")


def build_discounted(p: DiscountedParams) -> FiniteModel:
    rng = np.random.default_rng(p.seed)
    n, m = p.n_states, p.n_controls
    transitions = rng.dirichlet(np.ones(n), size=(n, m))
    transitions /= transitions.sum(axis=2, keepdims=True)
    costs = rng.uniform(0.0, 1.0, size=(n, m))
    return FiniteModel(
        controls=tuple(tuple(f"u{u}" for u in range(m)) for _ in range(n)),
        transitions=transitions,
        costs=costs,
        discount=p.alpha,
        name=f"discounted(alpha={p.alpha:g},seed={p.seed})",
    )


BUILDERS: dict[str, tuple[type[BaseModel], Callable[[Any], FiniteModel]]] = {
    "detsp": (DetSpParams, build_detsp),
    "grid": (GridControlParams, build_grid_control),
    "random-ssp": (RandomSspParams, build_random_ssp),
    "nonneg-mdp": (NonnegParams, build_nonneg_mdp),
    "discounted": (DiscountedParams, build_discounted),
}


def build(name: str, params: dict) -> FiniteModel:
    """Runs a named builder; raises KeyError for unknown names and pydantic's ValidationError for bad params."""
    params_type, builder = BUILDERS[name]
    return builder(params_type.model_validate(params))


def finite_cost_states(model: FiniteModel, limit: int = config.ENUMERATION_LIMIT) -> tuple[int, ...]:
    """X_f: the states with J*(x) < +inf."""
    from .oracle import policy_cost_table

    j_star = np.min([J.values for J in policy_cost_table(model, limit).values()], axis=0)
    return tuple(int(x) for x in np.flatnonzero(j_star < np.inf))


def scaled(J: CostFunction, c: float) -> CostFunction:
    """c * J with 0 and +/-inf coordinates left unchanged."""
    values = np.where(np.isfinite(J.values), c * J.values, J.values)
    return CostFunction(values)
