"""Brute-force ground truth and the mean-field lower bound."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp, softmax

from .extension import CapacityError
from .model import CrfInstance

MAX_ENUMERATION = 10**7
MAX_FACTORIZATION = 10**6


class ExactSummary(NamedTuple):
    log_partition: float
    marginals: np.ndarray
    map_labeling: np.ndarray
    map_energy: float


def _check_capacity(instance: CrfInstance, limit: int):
    count = instance.num_labels ** instance.num_variables
    if count > limit:
        raise CapacityError(f"{count} labelings exceed the enumeration limit {limit}")


def labelings(num_variables: int, num_labels: int, chunk: int = 1 << 16):
    """Yield all labelings in lexicographic order (variable 0 most significant)."""
    total = num_labels ** num_variables
    radix = num_labels ** np.arange(num_variables - 1, -1, -1, dtype=np.int64)
    for start in range(0, total, chunk):
        ids = np.arange(start, min(start + chunk, total), dtype=np.int64)
        yield (ids[:, None] // radix[None, :]) % num_labels


def energies(instance: CrfInstance, X: np.ndarray) -> np.ndarray:
    """Energies of a batch of labelings (rows of X)."""
    N = instance.num_variables
    out = instance.unaries[np.arange(N)[None, :], X].sum(axis=1)
    mu = instance.label_distance
    pairs, w = instance.edge_list()
    if len(w):
        out = out + (w[None, :] * mu[X[:, pairs[:, 0]], X[:, pairs[:, 1]]]).sum(axis=1)
    return out


def enumerate_exact(instance: CrfInstance) -> ExactSummary:
    """log Z, exact marginals and a MAP labeling by full enumeration."""
    _check_capacity(instance, MAX_ENUMERATION)
    N, L = instance.num_variables, instance.num_labels
    shift = -np.inf
    acc = 0.0
    marg = np.zeros((N, L))
    best_energy, best_x = np.inf, None
    rows = np.arange(N)
    for X in labelings(N, L):
        E = energies(instance, X)
        m = float(np.max(-E))
        if m > shift:
            scale = math.exp(shift - m) if np.isfinite(shift) else 0.0
            acc *= scale
            marg *= scale
            shift = m
        p = np.exp(-E - shift)
        acc += float(p.sum())
        for a in rows:
            marg[a] += np.bincount(X[:, a], weights=p, minlength=L)
        j = int(np.argmin(E))
        if E[j] < best_energy:
            best_energy, best_x = float(E[j]), X[j].copy()
    return ExactSummary(shift + math.log(acc), marg / acc, best_x, best_energy)


def check_factorization(instance: CrfInstance, s) -> tuple[float, float, float]:
    """Sum of exp(-s(A)) over valid sets, against the product form.

    The left side enumerates labelings, builds each set A explicitly and sums
    s over it; the right side is prod_a sum_i exp(-s'_ai).
    """
    _check_capacity(instance, MAX_FACTORIZATION)
    N, L, M = instance.num_variables, instance.num_labels, instance.num_columns
    s = np.asarray(s, dtype=float).reshape(N, M)
    if instance.tree is None:
        P = np.eye(L, dtype=bool)
    else:
        P = instance.tree.path_matrix
    lhs = 0.0
    for X in labelings(N, L):
        A = P[X]                               # (batch, N, M) set indicators
        sA = np.where(A, s[None], 0.0).sum(axis=(1, 2))
        lhs += float(np.exp(-sA).sum())
    s_path = np.where(P[None, :, :], s[:, None, :], 0.0).sum(axis=2)   # (N, L)
    rhs = float(np.prod(np.exp(-s_path).sum(axis=1)))
    return lhs, rhs, abs(lhs - rhs)


# -- mean field ------------------------------------------------------------

class MeanFieldResult(NamedTuple):
    marginals: np.ndarray
    elbo: float


def _entropy(q):
    with np.errstate(divide="ignore", invalid="ignore"):
        return float(-np.sum(np.where(q > 0, q * np.log(q), 0.0)))


def expected_energy(instance: CrfInstance, q) -> float:
    """E_q[E] under the fully factorized distribution q."""
    mu = instance.label_distance
    unary = float(np.sum(instance.unaries * q))
    if instance.is_dense:
        C = q.T @ instance.kernel.matrix @ q
        return unary + 0.5 * float(np.sum(mu * C))
    a, b = instance.edges[:, 0], instance.edges[:, 1]
    pair = np.einsum("ei,ij,ej->e", q[a], mu, q[b])
    return unary + float(instance.weights @ pair)


def elbo(instance: CrfInstance, q) -> float:
    """H(q) - E_q[E], a lower bound on log Z."""
    return _entropy(q) - expected_energy(instance, q)


def _neighbours(instance):
    nbrs = [[] for _ in range(instance.num_variables)]
    for (a, b), w in zip(instance.edges, instance.weights):
        nbrs[a].append((int(b), float(w)))
        nbrs[b].append((int(a), float(w)))
    return [(np.array([b for b, _ in n], dtype=np.int64), np.array([w for _, w in n]))
            for n in nbrs]


def mean_field(instance: CrfInstance, damping: float = 0.0, kl_threshold: float = 1e-3,
               max_sweeps: int = 1000) -> MeanFieldResult:
    """Sequential coordinate ascent on the ELBO.

    Variables are updated in ascending order; each update is
    ``q_a <- damping * q_a + (1 - damping) * softmax(-theta_a)`` with
    ``theta_a(i) = phi_a(i) + sum_b w_ab sum_j mu(i, j) q_b(j)``. Stops when a
    sweep changes the ELBO (equivalently the KL divergence to P) by less than
    ``kl_threshold``.
    """
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    mu = instance.label_distance
    phi = instance.unaries
    q = softmax(-phi, axis=1)
    current = elbo(instance, q)
    K = instance.kernel.matrix if instance.is_dense else None
    nbrs = None if instance.is_dense else _neighbours(instance)
    for _ in range(max_sweeps):
        for a in range(instance.num_variables):
            if K is not None:
                field_ = K[a] @ q
            else:
                idx, w = nbrs[a]
                field_ = w @ q[idx]
            theta = phi[a] + mu @ field_
            update = softmax(-theta)
            q[a] = damping * q[a] + (1.0 - damping) * update if damping else update
        previous, current = current, elbo(instance, q)
        if abs(current - previous) < kl_threshold:
            break
    return MeanFieldResult(q, current)


# -- reports ---------------------------------------------------------------

@dataclass
class SandwichReport:
    elbo: float
    log_partition: float | None
    bound: float
    tol: float = 1e-8

    @property
    def lower_ok(self) -> bool:
        ref = self.bound if self.log_partition is None else self.log_partition
        return self.elbo <= ref + self.tol

    @property
    def upper_ok(self) -> bool:
        if self.log_partition is None:
            return self.elbo <= self.bound + self.tol
        return self.log_partition <= self.bound + self.tol

    @property
    def ok(self) -> bool:
        return self.lower_ok and self.upper_ok

    def violations(self) -> list[str]:
        out = []
        if not self.lower_ok:
            out.append("mean-field lower bound exceeds log Z")
        if not self.upper_ok:
            out.append("upper bound is below log Z")
        return out


def sandwich_report(instance: CrfInstance, bound: float, mf_elbo: float,
                    exact: bool = True, tol: float = 1e-8) -> SandwichReport:
    """Check ELBO <= log Z <= bound; log Z is skipped if enumeration is too big."""
    log_z = None
    if exact and instance.num_labels ** instance.num_variables <= MAX_ENUMERATION:
        log_z = enumerate_exact(instance).log_partition
    return SandwichReport(float(mf_elbo), log_z, float(bound), tol)
