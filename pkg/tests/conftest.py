import pytest

from regular_dp.model import StationaryPolicy
from regular_dp.models import (
    DetSpParams,
    NonnegParams,
    RandomSspParams,
    build_detsp,
    build_nonneg_mdp,
    build_random_ssp,
)

# Control ids at state "1" of the two-state shortest-path model.
SELF, TO_T = 0, 1
MU = StationaryPolicy((TO_T, 0))
MU_PRIME = StationaryPolicy((SELF, 0))


def ssp_instance(seed: int):
    """A small all-proper SSP: 2..6 states (terminal included), 1..3 controls."""
    return build_random_ssp(
        RandomSspParams(n_states=2 + seed % 5, n_controls=1 + (seed // 5) % 3, proper_bias=1.0, seed=seed)
    )


def nonneg_instance(seed: int):
    return build_nonneg_mdp(NonnegParams(n_states=2 + seed % 4, n_controls=1 + seed % 3, seed=seed))


def mixed_instance(seed: int):
    """A random SSP whose controls other than 0 may stall, with stage costs of either sign."""
    return build_random_ssp(
        RandomSspParams(
            n_states=2 + seed % 4, n_controls=2 + seed % 2, cost_range=(-0.5, 1.0), proper_bias=0.5, seed=seed
        )
    )


@pytest.fixture
def detsp():
    def make(a: float, b: float):
        return build_detsp(DetSpParams(a=a, b=b))

    return make


@pytest.fixture(scope="session")
def ssp_corpus():
    return [ssp_instance(seed) for seed in range(200)]
