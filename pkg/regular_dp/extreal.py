"""
Extended-real arithmetic and cost functions over a finite state index set.

Values live in R ∪ {-inf, +inf} and are stored as IEEE floats, with NaN
forbidden. Two conventions differ from IEEE and are applied everywhere:

  (+inf) + (-inf) = +inf     an infinite-cost branch dominates
  0 * (+/-inf)    = 0        zero-probability successors contribute nothing
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Sequence, Union

import numpy as np

from . import config
from .errors import ShapeError

logger = logging.getLogger(__name__)

INF_TOKEN = "+inf"
NEG_INF_TOKEN = "-inf"


class Tag(Enum):
    FINITE = "finite"
    POS_INF = "+inf"
    NEG_INF = "-inf"


class ExtendedReal(float):
    """A float that is never NaN, tagged as finite, +inf or -inf."""

    def __new__(cls, value: Union[float, str] = 0.0):
        if isinstance(value, str):
            value = parse_token(value)
        number = float(value)
        if math.isnan(number):
            raise ValueError("ExtendedReal cannot be NaN")
        return super().__new__(cls, number)

    @property
    def tag(self) -> Tag:
        if self == math.inf:
            return Tag.POS_INF
        if self == -math.inf:
            return Tag.NEG_INF
        return Tag.FINITE

    @property
    def is_finite(self) -> bool:
        return self.tag is Tag.FINITE

    def __repr__(self) -> str:
        if self.tag is Tag.FINITE:
            return f"ExtendedReal({float(self)!r})"
        return f"ExtendedReal({self.tag.value!r})"


POS_INF = ExtendedReal(math.inf)
NEG_INF = ExtendedReal(-math.inf)

Number = Union[float, int, ExtendedReal]


def parse_token(token: Union[str, float, int]) -> float:
    """Reads a number or one of the '+inf' / '-inf' sentinels."""
    if isinstance(token, str):
        text = token.strip().lower()
        if text in ("+inf", "inf", "infinity", "+infinity"):
            return math.inf
        if text in ("-inf", "-infinity"):
            return -math.inf
        return float(text)
    return float(token)


def to_token(value: float) -> Union[float, str]:
    if value == math.inf:
        return INF_TOKEN
    if value == -math.inf:
        return NEG_INF_TOKEN
    return float(value)


def ext_add(a: Number, b: Number) -> ExtendedReal:
    a, b = float(a), float(b)
    if math.isinf(a) and math.isinf(b) and a != b:
        logger.warning("(+inf) + (-inf) resolved to +inf")
        return POS_INF
    return ExtendedReal(a + b)


def ext_scale(p: float, a: Number) -> ExtendedReal:
    if p < 0:
        raise ValueError(f"scale factor must be nonnegative, got {p}")
    if p == 0:
        return ExtendedReal(0.0)
    return ExtendedReal(p * float(a))


def ext_sum(terms: Iterable[Number]) -> ExtendedReal:
    """Sum under the extended conventions; +inf absorbs everything."""
    values = [float(t) for t in terms]
    if any(v == math.inf for v in values):
        return POS_INF
    if any(v == -math.inf for v in values):
        return NEG_INF
    return ExtendedReal(math.fsum(values))


def mixes_infinities(values: Iterable[Number]) -> bool:
    """True when a sum over `values` would exercise the (+inf) + (-inf) rule."""
    seen = {float(v) for v in values if math.isinf(float(v))}
    return len(seen) == 2


def isclose(a: Number, b: Number, tol: float = config.TOL) -> bool:
    a, b = float(a), float(b)
    if math.isinf(a) or math.isinf(b):
        return a == b
    return abs(a - b) <= tol


# Vectorized kernels --------------------------------------------------------

def ext_matvec(weights: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Probability-weighted sums over the last axis of `weights`.

    Zero weights never touch infinite entries; any positive weight on a +inf
    entry gives +inf, otherwise any positive weight on -inf gives -inf.
    """
    values = np.asarray(values, dtype=float)
    finite = np.isfinite(values)
    if finite.all():
        return weights @ values
    out = weights[..., finite] @ values[finite]
    hits_neg = (weights[..., values == -math.inf] > 0).any(axis=-1)
    hits_pos = (weights[..., values == math.inf] > 0).any(axis=-1)
    mixed = int(np.count_nonzero(hits_neg & hits_pos))
    if mixed:
        logger.warning(f"(+inf) + (-inf) resolved to +inf in {mixed} weighted sums")
    out = np.where(hits_neg, -math.inf, out)
    return np.where(hits_pos, math.inf, out)


def abs_gap(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """|a - b| with equal infinities at distance 0 and any other infinite gap +inf."""
    same = a == b
    with np.errstate(invalid="ignore"):
        gap = np.abs(a - b)
    return np.where(same, 0.0, np.where(np.isnan(gap), math.inf, gap))


# Cost functions ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CostFunction:
    """An immutable vector of extended reals indexed by state id."""

    values: np.ndarray

    def __post_init__(self):
        array = np.array(self.values, dtype=float).reshape(-1)
        if np.isnan(array).any():
            raise ValueError("cost functions cannot contain NaN")
        array.setflags(write=False)
        object.__setattr__(self, "values", array)

    @classmethod
    def constant(cls, n: int, value: Number) -> "CostFunction":
        return cls(np.full(n, float(value)))

    @classmethod
    def zeros(cls, n: int) -> "CostFunction":
        return cls(np.zeros(n))

    @classmethod
    def from_json(cls, tokens: Sequence[Union[float, int, str]]) -> "CostFunction":
        return cls(np.array([parse_token(t) for t in tokens], dtype=float))

    def to_json(self) -> list:
        return [to_token(v) for v in self.values]

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, index: int) -> ExtendedReal:
        return ExtendedReal(self.values[index])

    def __iter__(self) -> Iterator[ExtendedReal]:
        return (ExtendedReal(v) for v in self.values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CostFunction):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    def __hash__(self) -> int:
        return hash(tuple(self.values.tolist()))

    def __le__(self, other: "CostFunction") -> bool:
        _check_lengths(self, other)
        return bool(np.all(self.values <= other.values))

    def __ge__(self, other: "CostFunction") -> bool:
        _check_lengths(self, other)
        return bool(np.all(self.values >= other.values))

    def leq(self, other: "CostFunction", tol: float = config.TOL) -> bool:
        """Pointwise order with slack `tol` on finite coordinates."""
        _check_lengths(self, other)
        a, b = self.values, other.values
        return bool(np.all((a <= b) | (abs_gap(a, b) <= tol)))

    def isclose(self, other: "CostFunction", tol: float = config.TOL) -> bool:
        _check_lengths(self, other)
        return bool(np.all(abs_gap(self.values, other.values) <= tol))

    @property
    def is_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())

    def __repr__(self) -> str:
        return f"CostFunction({self.to_json()})"


@dataclass(frozen=True)
class WeightedNorm:
    weights: tuple[float, ...]

    def __post_init__(self):
        weights = tuple(float(w) for w in self.weights)
        if not weights or any(not (w > 0) or math.isinf(w) for w in weights):
            raise ValueError("weights must be finite and strictly positive")
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, n: int) -> "WeightedNorm":
        return cls(tuple([1.0] * n))

    def as_array(self) -> np.ndarray:
        return np.array(self.weights)


def _check_lengths(a: CostFunction, b: CostFunction) -> None:
    if len(a) != len(b):
        raise ShapeError(f"cost functions differ in length: {len(a)} != {len(b)}")


def weighted_sup_distance(J: CostFunction, J2: CostFunction, v: WeightedNorm) -> ExtendedReal:
    _check_lengths(J, J2)
    if len(v.weights) != len(J):
        raise ShapeError(f"weights have length {len(v.weights)}, expected {len(J)}")
    if len(J) == 0:
        return ExtendedReal(0.0)
    return ExtendedReal(np.max(abs_gap(J.values, J2.values) / v.as_array()))


def sup_distance(J: CostFunction, J2: CostFunction) -> ExtendedReal:
    return weighted_sup_distance(J, J2, WeightedNorm.uniform(len(J)))
