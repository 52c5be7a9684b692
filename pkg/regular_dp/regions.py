"""Function classes S used to define regular policies, with membership tests and probe samplers."""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Optional, Sequence, TYPE_CHECKING

import numpy as np

from . import config
from .extreal import CostFunction, ext_matvec

if TYPE_CHECKING:
    from .model import FiniteModel

logger = logging.getLogger(__name__)

RANDOM_PROBE_SPAN = 10.0


class SRegionKind(Enum):
    ALL_REAL = "all-real"
    NONNEG_EXTENDED = "nonneg-extended"
    BOUNDED_BELOW = "bounded-below"
    ZERO_ON_STOP_SET = "zero-on-stop-set"
    EXPECTATION_VANISHING = "expectation-vanishing"


@dataclass(frozen=True)
class SRegionDescriptor:
    """A region S of cost functions.

    Stop-set coordinates are 0 in every kind. `finite_states` only matters for
    ZERO_ON_STOP_SET, where it lists the states that must carry real values.
    """

    kind: SRegionKind
    finite_states: Optional[frozenset[int]] = None
    probe_count: int = config.PROBE_COUNT
    horizon_cap: int = config.HORIZON_CAP
    blowup_bound: float = config.BLOWUP_BOUND
    seed: int = 0

    @classmethod
    def all_real(cls, **kwargs) -> "SRegionDescriptor":
        return cls(SRegionKind.ALL_REAL, **kwargs)

    @classmethod
    def nonneg_extended(cls, **kwargs) -> "SRegionDescriptor":
        return cls(SRegionKind.NONNEG_EXTENDED, **kwargs)

    @classmethod
    def bounded_below(cls, **kwargs) -> "SRegionDescriptor":
        return cls(SRegionKind.BOUNDED_BELOW, **kwargs)

    @classmethod
    def zero_on_stop_set(cls, finite_states: Optional[Sequence[int]] = None, **kwargs) -> "SRegionDescriptor":
        states = frozenset(int(x) for x in finite_states) if finite_states is not None else None
        return cls(SRegionKind.ZERO_ON_STOP_SET, finite_states=states, **kwargs)

    @classmethod
    def expectation_vanishing(cls, **kwargs) -> "SRegionDescriptor":
        return cls(SRegionKind.EXPECTATION_VANISHING, **kwargs)

    @classmethod
    def from_name(cls, name: str, **kwargs) -> "SRegionDescriptor":
        return cls(SRegionKind(name), **kwargs)

    @property
    def label(self) -> str:
        return self.kind.value

    @property
    def admits_infinite(self) -> bool:
        return self.kind in (SRegionKind.NONNEG_EXTENDED, SRegionKind.ZERO_ON_STOP_SET)

    def contains(self, model: "FiniteModel", J: CostFunction) -> bool:
        model.check_cost_function(J)
        values = J.values
        if np.any(values[model.stop_mask] != 0):
            return False
        if self.kind in (SRegionKind.ALL_REAL, SRegionKind.BOUNDED_BELOW):
            return bool(np.isfinite(values).all())
        if self.kind is SRegionKind.NONNEG_EXTENDED:
            return bool(np.all(values >= 0))
        if self.kind is SRegionKind.ZERO_ON_STOP_SET:
            if np.any(values == -np.inf):
                return False
            if self.finite_states is not None:
                return bool(np.isfinite(values[sorted(self.finite_states)]).all())
            return True
        return _expectation_vanishes(model, values, self.horizon_cap)

    def below_some_member(self, model: "FiniteModel", J: CostFunction) -> bool:
        """Closed-form test of "J <= J~ for some J~ in S"."""
        values = J.values
        if np.any(values[model.stop_mask] > 0):
            return False
        if self.kind in (SRegionKind.ALL_REAL, SRegionKind.BOUNDED_BELOW):
            return bool(np.all(values < np.inf))
        if self.kind is SRegionKind.NONNEG_EXTENDED:
            return True
        if self.kind is SRegionKind.ZERO_ON_STOP_SET:
            if np.any(values[model.stop_mask] != 0):
                return False
            if self.finite_states is not None:
                return bool(np.all(values[sorted(self.finite_states)] < np.inf))
            return True
        return self.contains(model, J)

    def probes(
        self,
        model: "FiniteModel",
        anchors: Sequence[CostFunction] = (),
        seed: Optional[int] = None,
    ) -> list[CostFunction]:
        """Up to `probe_count` members of S: J_bar, anchors, their shifts and scalings, then random draws."""
        rng = np.random.default_rng(self.seed if seed is None else seed)
        off_stop = ~model.stop_mask
        candidates = []
        for base in (model.terminal, *anchors):
            values = np.array(base.values)
            values[model.stop_mask] = 0.0
            candidates.append(values)
            for shift in (1.0, -1.0):
                shifted = values.copy()
                shifted[off_stop] += shift
                candidates.append(shifted)
            candidates.append(2.0 * values)
            candidates.append(0.5 * values)
        for constant in (0.0, 1.0, -1.0, RANDOM_PROBE_SPAN):
            candidates.append(model.lift(constant).values)

        low = 0.0 if self.kind is SRegionKind.NONNEG_EXTENDED else -RANDOM_PROBE_SPAN
        chosen: list[CostFunction] = []
        seen = set()

        def offer(values: np.ndarray) -> None:
            J = CostFunction(values)
            if J not in seen and self.contains(model, J):
                seen.add(J)
                chosen.append(J)

        for values in candidates:
            if len(chosen) >= self.probe_count:
                return chosen
            offer(values)
        for _ in range(4 * self.probe_count):
            if len(chosen) >= self.probe_count:
                break
            values = np.zeros(model.n_states)
            values[off_stop] = rng.uniform(low, RANDOM_PROBE_SPAN, size=int(off_stop.sum()))
            offer(values)
        if not chosen:
            logger.warning(f"no probe found inside region {self.label} for {model.name}")
        return chosen


def _expectation_vanishes(model: "FiniteModel", values: np.ndarray, horizon_cap: int) -> bool:
    """E{J(x_k)} -> 0 along every stationary policy, from every state where its cost is finite.

    The state distribution is pushed through P_mu exactly; "-> 0" means the
    trailing window ending at horizon_cap stays within tolerance of 0.
    """
    window = min(config.DRIFT_WINDOW, horizon_cap)
    for mu, finite_from in _finite_cost_masks(model):
        if not finite_from.any():
            continue
        P, _ = model.policy_matrix(mu)
        dist = np.linalg.matrix_power(P, horizon_cap - window)[finite_from]
        for _ in range(window):
            dist = dist @ P
            expectation = ext_matvec(dist, values)
            if np.any(np.abs(expectation) > config.TOL):
                return False
    return True


@lru_cache(maxsize=32)
def _finite_cost_masks(model: "FiniteModel") -> tuple:
    from .oracle import policy_cost_table

    return tuple((mu, J.values < np.inf) for mu, J in policy_cost_table(model).items())
