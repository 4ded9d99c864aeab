"""Exact 2-Wasserstein distance between equal-size, equal-weight ensembles.

For two n-point equal-weight measures an optimal transport plan is induced by
a permutation, so W2 reduces to a linear assignment problem on the squared
Euclidean cost matrix. `w2_exact` solves it with scipy's O(n^3) assignment
solver; `w2_bruteforce` enumerates all n! permutations and is the testing
oracle for small n.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .measures import ParticleEnsemble

BRUTEFORCE_MAX_N = 8


@dataclass(frozen=True)
class Coupling:
    """Permutation coupling: source i is matched to target assignment[i].

    cost is the normalized squared-distance total (1/n) sum_i |x_i - y_{a(i)}|^2.
    """

    assignment: np.ndarray
    cost: float

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.intp)
        n = a.size
        if n < 1 or not np.array_equal(np.sort(a), np.arange(n)):
            raise ValueError("assignment must be a permutation of 0..n-1")
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)
        if self.cost < 0:
            raise ValueError("coupling cost must be nonnegative")

    @property
    def n(self) -> int:
        return self.assignment.size


@dataclass(frozen=True)
class W2Result:
    distance: float
    coupling: Coupling

    def to_json_dict(self, include_coupling: bool = False) -> dict:
        d = {"distance": self.distance, "n": self.coupling.n, "cost": self.coupling.cost}
        if include_coupling:
            d["assignment"] = self.coupling.assignment.tolist()
        return d

    def to_json(self, include_coupling: bool = False) -> str:
        return json.dumps(self.to_json_dict(include_coupling))


def _check_pair(mu: ParticleEnsemble, nu: ParticleEnsemble) -> None:
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    if mu.n != nu.n:
        raise ValueError(f"particle count mismatch: {mu.n} vs {nu.n}")


def w2_exact(mu: ParticleEnsemble, nu: ParticleEnsemble) -> W2Result:
    """Exact W2 between equal-weight ensembles via optimal assignment."""
    _check_pair(mu, nu)
    cost_matrix = cdist(mu.points, nu.points, "sqeuclidean")
    rows, cols = linear_sum_assignment(cost_matrix)
    assignment = np.empty(mu.n, dtype=np.intp)
    assignment[rows] = cols
    cost = float(cost_matrix[rows, cols].sum() / mu.n)
    return W2Result(float(np.sqrt(cost)), Coupling(assignment, cost))


def w2_bruteforce(mu: ParticleEnsemble, nu: ParticleEnsemble) -> W2Result:
    """Exhaustive-minimum W2 over all n! permutations (oracle, n <= 8)."""
    _check_pair(mu, nu)
    if mu.n > BRUTEFORCE_MAX_N:
        raise ValueError(f"brute force capped at n = {BRUTEFORCE_MAX_N}, got n = {mu.n}")
    cost_matrix = cdist(mu.points, nu.points, "sqeuclidean")
    idx = np.arange(mu.n)
    best_cost = np.inf
    best_perm = None
    for perm in itertools.permutations(range(mu.n)):
        total = cost_matrix[idx, perm].sum()
        if total < best_cost:
            best_cost = total
            best_perm = perm
    cost = float(best_cost / mu.n)
    return W2Result(float(np.sqrt(cost)), Coupling(np.asarray(best_perm), cost))


def sup_w2(traj_a, traj_b) -> float:
    """Max over shared grid times of the exact W2 between matching snapshots.

    Both arguments are MeasureTrajectory objects on identical time grids with
    identical particle counts.
    """
    if not np.array_equal(traj_a.times, traj_b.times):
        raise ValueError("trajectories must share an identical time grid")
    return max(
        w2_exact(a, b).distance for a, b in zip(traj_a.snapshots, traj_b.snapshots)
    )
