"""Upper-bound minimization over EP(F) by conditional gradient.

For a point s of EP(F) the bound is

    g(s) = sum_a log sum_i exp(-s'_ai)

where ``s'_ai = s_ai`` for Potts encodings and, for trees, the sum of s over
the root-to-leaf path of label i. ``g(s) >= log Z`` for every s in EP(F).
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import softmax

from .densekernel import NAIVE
from .extension import ExtensionKind, check_compatible, greedy_vertex
from .lpgrad import dense_lp_subgradient
from .model import CrfInstance


class StepRule(enum.Enum):
    FIXED = "fixed"
    LINE_SEARCH = "line-search"


@dataclass(frozen=True)
class SolverConfig:
    max_iter: int = 100
    eps: float = 1e-6
    step: StepRule = StepRule.FIXED
    temperature: float = 1.0
    backend: str = NAIVE

    def __post_init__(self):
        object.__setattr__(self, "step", StepRule(self.step))
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.eps >= 0:
            raise ValueError("eps must be non-negative")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")


class IterationRecord(NamedTuple):
    k: int
    bound: float
    gap: float
    step: float
    seconds: float


@dataclass
class Trajectory:
    records: list = field(default_factory=list)
    final_bound: float = float("nan")
    converged: bool = False

    def append(self, record: IterationRecord):
        if self.records and record.k <= self.records[-1].k:
            raise ValueError("iteration index must increase")
        self.records.append(record)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def __len__(self):
        return len(self.records)


class FrankWolfeResult(NamedTuple):
    s: np.ndarray
    marginals: np.ndarray
    trajectory: Trajectory

    @property
    def bound(self) -> float:
        return self.trajectory.final_bound


def _path_sums(instance: CrfInstance, s) -> np.ndarray:
    """s' as an (N, L) table."""
    s = np.asarray(s, dtype=float).reshape(instance.num_variables, instance.num_columns)
    if instance.tree is None:
        return s
    return s @ instance.tree.path_matrix.T.astype(float)


def _check_temperature(temperature):
    if not temperature > 0:
        raise ValueError("temperature must be positive")


def objective_g(instance: CrfInstance, kind, s) -> float:
    """log of the partition function of the fully factorized Q(A) ~ exp(-s(A))."""
    return objective_g_T(instance, kind, s, 1.0)


def objective_g_T(instance: CrfInstance, kind, s, temperature: float) -> float:
    """sum_a T log sum_i exp(-s'_ai / T)."""
    _check_temperature(temperature)
    check_compatible(kind, instance)
    neg = -_path_sums(instance, s)
    # row max kept out of the scaling so that g_T >= sum of row maxima holds in floating point
    top = neg.max(axis=1)
    rest = temperature * np.log(np.exp((neg - top[:, None]) / temperature).sum(axis=1))
    return float((top + rest).sum())


def marginals(instance: CrfInstance, kind, s, temperature: float = 1.0) -> np.ndarray:
    """q_ai = softmax(-s'_a / T)_i, an (N, L) table."""
    _check_temperature(temperature)
    check_compatible(kind, instance)
    return softmax(-_path_sums(instance, s) / temperature, axis=1)


def lifted_marginals(instance: CrfInstance, kind, s, temperature: float = 1.0) -> np.ndarray:
    """(N, M) table: label marginals plus subtree sums for meta-labels."""
    q = marginals(instance, kind, s, temperature)
    if instance.tree is None:
        return q
    return q @ instance.tree.path_matrix.astype(float)


def neg_gradient(instance: CrfInstance, kind, s, temperature: float = 1.0) -> np.ndarray:
    """-grad g_T(s) as a flat N*M vector; entries lie in [0, 1]."""
    return lifted_marginals(instance, kind, s, temperature).reshape(-1)


def conditional_gradient(instance: CrfInstance, kind, s, temperature: float = 1.0) -> np.ndarray:
    """argmin over EP(F) of <grad g(s), .>, i.e. the greedy vertex at -grad g(s)."""
    kind = check_compatible(kind, instance)
    return _vertex(instance, kind, neg_gradient(instance, kind, s, temperature))


def _vertex(instance, kind, w, backend=NAIVE):
    if instance.is_dense and kind is not ExtensionKind.POTTS_ALTERNATE:
        return dense_lp_subgradient(instance, w, backend)
    return greedy_vertex(kind, instance, w)


def initial_point(instance: CrfInstance, kind, backend: str = NAIVE) -> np.ndarray:
    """Greedy vertex at the all-ones weight vector."""
    kind = check_compatible(kind, instance)
    return _vertex(instance, kind, np.ones(instance.ground_size), backend)


def line_search(instance: CrfInstance, kind, s_k, s_star, temperature: float = 1.0,
                tol: float = 1e-8, max_steps: int = 60) -> float:
    """Minimize g_T on the segment from s_k to s_star by bisection on the derivative."""
    s_k = np.asarray(s_k, dtype=float)
    d = np.asarray(s_star, dtype=float) - s_k
    if not np.any(d):
        return 0.0

    def slope(gamma):
        return -float(neg_gradient(instance, kind, s_k + gamma * d, temperature) @ d)

    if slope(0.0) >= 0:
        return 0.0
    if slope(1.0) <= 0:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(max_steps):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def frank_wolfe(instance: CrfInstance, kind, config: SolverConfig | None = None) -> FrankWolfeResult:
    """Conditional gradient on g_T over EP(F).

    Row k of the trajectory holds g_T(s_k), the duality gap
    <s_k - s*, grad g_T(s_k)> and the step taken from s_k (0 when stopping).
    The fixed schedule uses gamma_k = 2 / (k + 2), so the first step is 1.
    """
    config = config or SolverConfig()
    kind = check_compatible(kind, instance)
    T = config.temperature
    start = time.perf_counter()
    s = initial_point(instance, kind, config.backend)
    traj = Trajectory()
    tol = config.eps * max(1.0, abs(objective_g_T(instance, kind, s, T)))
    for k in range(config.max_iter):
        q = neg_gradient(instance, kind, s, T)
        s_star = _vertex(instance, kind, q, config.backend)
        gap = float(q @ (s_star - s))
        bound = objective_g_T(instance, kind, s, T)
        if gap <= tol:
            traj.append(IterationRecord(k, bound, gap, 0.0, time.perf_counter() - start))
            traj.converged = True
            break
        if config.step is StepRule.LINE_SEARCH:
            gamma = line_search(instance, kind, s, s_star, T)
        else:
            gamma = 2.0 / (k + 2.0)
        s = (1.0 - gamma) * s + gamma * s_star
        traj.append(IterationRecord(k, bound, gap, gamma, time.perf_counter() - start))
    traj.final_bound = objective_g_T(instance, kind, s, T)
    return FrankWolfeResult(s, marginals(instance, kind, s, T), traj)
