"""Submodular extensions of Potts and hierarchical Potts energies.

Every extension here is a directed cut function: a list of arcs
``(tail, head, capacity)`` over ground-set elements plus a sink, with

    F(A) = sum of capacities of arcs leaving A (tail in A, head not in A).

Sink-bound arcs carry the unary terms and are modular, so negative unaries
keep the function submodular. Pairwise terms ``c * [exactly one of u, v in A]``
are a pair of opposite arcs of capacity ``c``.
"""

from __future__ import annotations

import enum
import weakref
from typing import Callable, NamedTuple

import numpy as np

from .model import CrfInstance

SINK = -1
TOL = 1e-9
MAX_EP_GROUND = 24
MAX_SUBMODULAR_GROUND = 12


class ExtensionError(ValueError):
    pass


class CapacityError(ValueError):
    pass


class ExtensionKind(enum.Enum):
    POTTS_OPTIMAL = "potts-opt"
    HIER_OPTIMAL = "hier-opt"
    POTTS_ALTERNATE = "potts-alt"

    @classmethod
    def parse(cls, value) -> "ExtensionKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ExtensionError(f"unknown extension kind {value!r} (expected one of {names})") from None


class Arcs(NamedTuple):
    tail: np.ndarray
    head: np.ndarray
    cap: np.ndarray
    size: int


def check_compatible(kind, instance: CrfInstance) -> ExtensionKind:
    kind = ExtensionKind.parse(kind)
    if kind is ExtensionKind.HIER_OPTIMAL:
        if instance.metric != "tree":
            raise ExtensionError("hier-opt needs a tree-metric instance")
    else:
        if instance.metric != "potts":
            raise ExtensionError(f"{kind.value} needs a Potts instance")
        if kind is ExtensionKind.POTTS_ALTERNATE and np.any(instance.unaries < 0):
            raise ExtensionError("the alternate extension needs non-negative unaries")
    return kind


def pairwise_coefficients(kind: ExtensionKind, instance: CrfInstance) -> np.ndarray:
    """Per-column multiplier of w_ab: 1/2 for Potts, l_T for tree columns."""
    if kind is ExtensionKind.HIER_OPTIMAL:
        return np.asarray(instance.tree.upward_lengths, dtype=float)
    return np.full(instance.num_labels, 0.5)


def _pairwise_arcs(kind, instance):
    M = instance.num_columns
    pairs, w = instance.edge_list()
    coef = pairwise_coefficients(kind, instance)
    cols = np.arange(M)
    u = pairs[:, 0, None] * M + cols          # (E, M)
    v = pairs[:, 1, None] * M + cols
    c = w[:, None] * coef[None, :]
    # per (edge, column): u -> v then v -> u
    tail = np.stack([u, v], axis=2).reshape(-1)
    head = np.stack([v, u], axis=2).reshape(-1)
    cap = np.stack([c, c], axis=2).reshape(-1)
    return tail, head, cap


def _build_arcs(kind: ExtensionKind, instance: CrfInstance) -> Arcs:
    n = instance.ground_size
    if kind is ExtensionKind.POTTS_ALTERNATE:
        N, L = instance.unaries.shape
        a = np.repeat(np.arange(N), L)
        i = np.tile(np.arange(L), N)
        u_tail = a * L + i
        # unary cycle v_{a,0} -> v_{a,1} -> ... -> v_{a,L-1} -> v_{a,0};
        # a single label has no cycle, its unary arc goes to the sink
        u_head = a * L + (i + 1) % L if L > 1 else np.full(N, SINK)
        u_cap = instance.unaries.reshape(-1)
    else:
        u_tail = np.arange(n)
        u_head = np.full(n, SINK)
        u_cap = instance.lifted_unaries.reshape(-1)
    p_tail, p_head, p_cap = _pairwise_arcs(kind, instance)
    tail = np.concatenate([u_tail, p_tail]).astype(np.int64)
    head = np.concatenate([u_head, p_head]).astype(np.int64)
    cap = np.concatenate([u_cap, p_cap]).astype(float)
    for arr in (tail, head, cap):
        arr.setflags(write=False)
    return Arcs(tail, head, cap, n)


_ARC_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def extension_arcs(kind, instance: CrfInstance) -> Arcs:
    kind = check_compatible(kind, instance)
    per_instance = _ARC_CACHE.setdefault(instance, {})
    if kind not in per_instance:
        per_instance[kind] = _build_arcs(kind, instance)
    return per_instance[kind]


def _as_indicator(instance, A) -> np.ndarray:
    A = np.asarray(A, dtype=bool).reshape(-1)
    if A.size != instance.ground_size:
        raise ExtensionError(f"indicator must have {instance.ground_size} entries")
    return A


def cut_value(arcs: Arcs, A) -> float:
    inside = np.append(A, False)       # index -1 (sink) is never inside
    crossing = inside[arcs.tail] & ~inside[arcs.head]
    return float(arcs.cap[crossing].sum())


def extension_eval(kind, instance: CrfInstance, A) -> float:
    """F(A) for the chosen extension."""
    arcs = extension_arcs(kind, instance)
    return cut_value(arcs, _as_indicator(instance, A))


def canonical_order(w) -> np.ndarray:
    """Decreasing weight, ties broken by ascending ground-set index."""
    w = np.asarray(w, dtype=float)
    return np.lexsort((np.arange(len(w)), -w))


def greedy_gains(arcs: Arcs, w) -> np.ndarray:
    """Marginal gains F(j_1..j_k) - F(j_1..j_{k-1}) along the canonical order.

    An arc u -> v crosses from the moment u is added until v is added, so it
    contributes +c to u and -c to v when u precedes v (the sink never gets
    added), and nothing when v precedes u. Contributions are accumulated in
    arc order.
    """
    n = arcs.size
    rank = np.empty(n + 1, dtype=np.int64)
    rank[canonical_order(w)] = np.arange(n)
    rank[n] = n
    head = np.where(arcs.head == SINK, n, arcs.head)
    tail_first = rank[head] > rank[arcs.tail]
    targets = np.stack([arcs.tail, head], axis=1).reshape(-1)
    values = np.stack([arcs.cap, -arcs.cap], axis=1).reshape(-1)
    keep = np.stack([tail_first, tail_first & (head != n)], axis=1).reshape(-1)
    return np.bincount(targets[keep], weights=values[keep], minlength=n + 1)[:n]


def _as_weights(instance, w) -> np.ndarray:
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.size != instance.ground_size:
        raise ExtensionError(f"weight vector must have {instance.ground_size} entries")
    if not np.all(np.isfinite(w)):
        raise ExtensionError("weights must be finite")
    return w


def lovasz_eval(kind, instance: CrfInstance, w) -> float:
    """Value of the Lovasz extension at any finite ``w``."""
    w = _as_weights(instance, w)
    return float(w @ greedy_gains(extension_arcs(kind, instance), w))


def greedy_vertex(kind, instance: CrfInstance, w) -> np.ndarray:
    """Edmonds greedy maximizer of <w, s> over EP(F); requires w >= 0."""
    w = _as_weights(instance, w)
    if np.any(w < 0):
        raise ExtensionError("greedy vertex needs a non-negative weight vector")
    return greedy_gains(extension_arcs(kind, instance), w)


def _subset_bits(start: int, stop: int, n: int) -> np.ndarray:
    ids = np.arange(start, stop, dtype=np.int64)
    return ((ids[:, None] >> np.arange(n)) & 1).astype(bool)


def subset_table(arcs: Arcs, chunk: int = 1 << 15):
    """Yield (bits, F values) over all subsets, in chunks, subset id order."""
    n = arcs.size
    head = np.where(arcs.head == SINK, n, arcs.head)
    for start in range(0, 1 << n, chunk):
        bits = _subset_bits(start, min(start + chunk, 1 << n), n)
        ext = np.hstack([bits, np.zeros((len(bits), 1), dtype=bool)])
        crossing = ext[:, arcs.tail] & ~ext[:, head]
        yield bits, crossing @ arcs.cap


def in_extended_polymatroid(kind, instance: CrfInstance, s, tol: float = TOL) -> bool:
    """Exhaustively check s(A) <= F(A) for every subset A."""
    n = instance.ground_size
    if n > MAX_EP_GROUND:
        raise CapacityError(f"ground set of {n} elements exceeds {MAX_EP_GROUND}")
    s = np.asarray(s, dtype=float).reshape(-1)
    for bits, F in subset_table(extension_arcs(kind, instance)):
        if np.any(bits @ s > F + tol):
            return False
    return True


def is_submodular(set_function: Callable[[np.ndarray], float], ground_size: int,
                  tol: float = TOL) -> bool:
    """Exhaustive check of F(A | B) + F(A & B) <= F(A) + F(B) over all pairs.

    ``set_function`` takes a boolean indicator of length ``ground_size``.
    """
    if ground_size > MAX_SUBMODULAR_GROUND:
        raise CapacityError(
            f"ground set of {ground_size} elements exceeds {MAX_SUBMODULAR_GROUND}")
    n_sets = 1 << ground_size
    bits = _subset_bits(0, n_sets, ground_size)
    F = np.array([set_function(b) for b in bits], dtype=float)
    ids = np.arange(n_sets)
    for A in range(n_sets):
        if np.any(F[A | ids] + F[A & ids] > F[A] + F + tol):
            return False
    return True


def restricted(set_function: Callable, elements, ground_size: int) -> Callable:
    """Restriction of a set function to a subset of its ground set."""
    elements = np.asarray(elements)

    def f(mask):
        full = np.zeros(ground_size, dtype=bool)
        full[elements[np.asarray(mask, dtype=bool)]] = True
        return set_function(full)

    return f
