"""Structure of the Markov chain induced by a stationary policy."""

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

DRIFT_ZERO_TOL = 1e-10


def recurrent_classes(P: np.ndarray) -> list[np.ndarray]:
    """Closed communicating classes of a row-stochastic matrix, as index arrays."""
    n_components, labels = connected_components(
        csr_matrix(P > 0), directed=True, connection="strong"
    )
    classes = []
    for component in range(n_components):
        members = labels == component
        if not (P[np.ix_(members, ~members)] > 0).any():
            classes.append(np.flatnonzero(members))
    return sorted(classes, key=lambda c: int(c[0]))


def stationary_distribution(P_class: np.ndarray) -> np.ndarray:
    """Invariant distribution of an irreducible stochastic matrix."""
    k = P_class.shape[0]
    system = np.vstack([P_class.T - np.eye(k), np.ones((1, k))])
    rhs = np.zeros(k + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def long_run_drift(P: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Average cost per stage ρ = P* g, the growth rate of the k-stage cost.

    Values within DRIFT_ZERO_TOL of zero are snapped to exactly 0.
    """
    n = P.shape[0]
    rho = np.zeros(n)
    recurrent = np.zeros(n, dtype=bool)
    for members in recurrent_classes(P):
        pi = stationary_distribution(P[np.ix_(members, members)])
        rho[members] = pi @ g[members]
        recurrent[members] = True
    transient = ~recurrent
    if transient.any():
        A = np.eye(int(transient.sum())) - P[np.ix_(transient, transient)]
        b = P[np.ix_(transient, recurrent)] @ rho[recurrent]
        rho[transient] = np.linalg.solve(A, b)
    rho[np.abs(rho) <= DRIFT_ZERO_TOL] = 0.0
    return rho


def reachable_from(P: np.ndarray, sources: np.ndarray) -> np.ndarray:
    """Boolean mask of states reachable with positive probability from `sources`."""
    seen = np.zeros(P.shape[0], dtype=bool)
    frontier = list(np.flatnonzero(sources))
    seen[frontier] = True
    while frontier:
        x = frontier.pop()
        for y in np.flatnonzero(P[x] > 0):
            if not seen[y]:
                seen[y] = True
                frontier.append(int(y))
    return seen


def is_deterministic(P: np.ndarray) -> bool:
    return bool(np.all((P == 0) | (P == 1)) and np.all((P == 1).sum(axis=-1) == 1))
