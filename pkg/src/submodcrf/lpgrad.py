"""LP relaxation objectives and their subgradients.

The subgradient of the relaxed objective at ``y`` is the greedy vertex of the
extended polymatroid for weight ``y``, so it doubles as the conditional
gradient of the upper-bound problem. For an edge (a, b) on column i the sign
is +1 when ``y_ai > y_bi``, or when they tie and a comes first in ground-set
order; this mirrors the greedy tie-break so the two agree exactly.
"""

from __future__ import annotations

import numpy as np

from .densekernel import NAIVE, signed_rank_fold
from .extension import ExtensionError, ExtensionKind, check_compatible, pairwise_coefficients
from .model import CrfInstance

TOL = 1e-9


class PolytopeError(ValueError):
    pass


def _table(instance: CrfInstance, y, width: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.size != instance.num_variables * width:
        raise PolytopeError(f"expected {instance.num_variables} x {width} entries")
    return y.reshape(instance.num_variables, width)


def check_simplex(y: np.ndarray, tol: float = TOL):
    if np.any(y < -tol) or np.any(np.abs(y.sum(axis=1) - 1.0) > tol):
        raise PolytopeError("rows must be non-negative and sum to 1")


def check_consistent(instance: CrfInstance, z: np.ndarray, tol: float = TOL):
    """z restricted to labels lies in the simplex; meta-labels are subtree sums."""
    L = instance.num_labels
    check_simplex(z[:, :L], tol)
    P = instance.tree.path_matrix.astype(float)
    if np.any(np.abs(z[:, L:] - z[:, :L] @ P[:, L:]) > tol):
        raise PolytopeError("meta-label entries must equal their subtree label sums")


def lift(instance: CrfInstance, y) -> np.ndarray:
    """Label marginals (N, L) -> label and meta-label values (N, M)."""
    y = _table(instance, y, instance.num_labels)
    if instance.tree is None:
        return y
    return y @ instance.tree.path_matrix.astype(float)


def _pairwise_abs(instance, v, coef) -> float:
    """sum over pairs of w_ab * sum_c coef_c * |v_ac - v_bc|."""
    if instance.is_dense:
        K = instance.kernel.matrix
        total = 0.0
        for c in range(v.shape[1]):
            diff = np.abs(v[:, c, None] - v[None, :, c])
            total += 0.5 * coef[c] * float(np.sum(K * diff))
        return total
    a, b = instance.edges[:, 0], instance.edges[:, 1]
    return float(np.sum(instance.weights[:, None] * coef[None, :] * np.abs(v[a] - v[b])))


def lp_objective_potts(instance: CrfInstance, y) -> float:
    """sum phi_a(i) y_ai + sum_{(a,b)} sum_i (w_ab / 2) |y_ai - y_bi|."""
    if instance.metric != "potts":
        raise ExtensionError("Potts LP needs a Potts instance")
    y = _table(instance, y, instance.num_labels)
    check_simplex(y)
    coef = np.full(instance.num_labels, 0.5)
    return float(np.sum(instance.unaries * y)) + _pairwise_abs(instance, y, coef)


def lp_objective_hier(instance: CrfInstance, z) -> float:
    """Tree LP over labels and meta-labels (z in the consistent polytope)."""
    if instance.metric != "tree":
        raise ExtensionError("tree LP needs a tree-metric instance")
    z = _table(instance, z, instance.num_columns)
    check_consistent(instance, z)
    coef = np.asarray(instance.tree.upward_lengths)
    return float(np.sum(instance.lifted_unaries * z)) + _pairwise_abs(instance, z, coef)


def _checked_argument(kind, instance, y) -> tuple[ExtensionKind, np.ndarray]:
    kind = check_compatible(kind, instance)
    if kind is ExtensionKind.POTTS_ALTERNATE:
        raise ExtensionError("no LP subgradient form for the alternate extension")
    y = _table(instance, y, instance.num_columns)
    if kind is ExtensionKind.HIER_OPTIMAL:
        check_consistent(instance, y)
    else:
        check_simplex(y)
    return kind, y


def lp_subgradient(kind, instance: CrfInstance, y) -> np.ndarray:
    """Analytic subgradient of the LP objective, as a flat N*M vector."""
    kind, y = _checked_argument(kind, instance, y)
    if instance.is_dense:
        return dense_lp_subgradient(instance, y)
    M = instance.num_columns
    coef = pairwise_coefficients(kind, instance)
    a, b = instance.edges[:, 0], instance.edges[:, 1]
    ya, yb = y[a], y[b]                                   # (E, M)
    # edges are stored with a < b, so a wins ties
    sign = np.where(ya >= yb, 1.0, -1.0)
    contrib = sign * (instance.weights[:, None] * coef[None, :])
    cols = np.arange(M)
    targets = np.concatenate([
        np.arange(instance.ground_size),
        np.stack([a[:, None] * M + cols, b[:, None] * M + cols], axis=2).reshape(-1),
    ])
    values = np.concatenate([
        instance.lifted_unaries.reshape(-1),
        np.stack([contrib, -contrib], axis=2).reshape(-1),
    ])
    return np.bincount(targets, weights=values, minlength=instance.ground_size)


def dense_lp_subgradient(instance: CrfInstance, y, backend: str = NAIVE) -> np.ndarray:
    """Subgradient for dense Gaussian pairwise terms via signed rank sums."""
    if not instance.is_dense:
        raise ExtensionError("dense subgradient needs a dense instance")
    M = instance.num_columns
    y = _table(instance, y, M)
    kind = ExtensionKind.HIER_OPTIMAL if instance.tree is not None else ExtensionKind.POTTS_OPTIMAL
    coef = pairwise_coefficients(kind, instance)
    phi = instance.lifted_unaries
    out = np.empty((instance.num_variables, M))
    for c in range(M):
        out[:, c] = signed_rank_fold(instance.kernel, y[:, c], coef[c], phi[:, c], backend)
    return out.reshape(-1)
