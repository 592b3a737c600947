"""CRF instances, label metrics and ground-set encodings.

Labels are 0-based. A ground set has ``N * M`` elements, where ``M`` is the
number of labels for Potts instances and the number of non-root tree nodes
for hierarchical (tree metric) instances. Element ``(a, i)`` sits at index
``a * M + i``.

For trees, columns ``0 .. L-1`` are the labels (leaves, in ascending node
order) and columns ``L .. M-1`` are the meta-labels (internal non-root nodes,
in ascending node order). A star tree therefore has exactly the Potts ground
set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:
    from .densekernel import KernelMixture

ROOT = None


class ModelError(ValueError):
    """Raised for malformed instances, trees or labelings."""


@dataclass(frozen=True, eq=False)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.ok:
            return "tree ok"
        return "; ".join(self.violations)


@dataclass(frozen=True, eq=False)
class HierTree:
    """Rooted tree of labels (leaves) and meta-labels (internal nodes).

    Parameters
    ----------
    parents : sequence of int or None
        Parent node index for every node; exactly one entry is ``None``
        (the root).
    lengths : sequence of float
        Length of the edge from each node to its parent. The root's entry
        is ignored.
    """

    parents: tuple
    lengths: tuple

    # derived in __post_init__
    root: int = field(init=False)
    children: tuple = field(init=False, repr=False)
    label_nodes: tuple = field(init=False, repr=False)
    column_nodes: tuple = field(init=False, repr=False)

    def __post_init__(self):
        parents = tuple(None if p is None or p < 0 else int(p) for p in self.parents)
        lengths = tuple(float(v) if v is not None else 0.0 for v in self.lengths)
        n = len(parents)
        if n != len(lengths):
            raise ModelError("parents and lengths differ in size")
        roots = [k for k, p in enumerate(parents) if p is None]
        if len(roots) != 1:
            raise ModelError(f"tree needs exactly one root, got {len(roots)}")
        root = roots[0]
        children = [[] for _ in range(n)]
        for k, p in enumerate(parents):
            if p is None:
                continue
            if not 0 <= p < n or p == k:
                raise ModelError(f"node {k} has invalid parent {p}")
            if not lengths[k] > 0 or not np.isfinite(lengths[k]):
                raise ModelError(f"edge above node {k} must have positive length")
            children[p].append(k)
        # every node must reach the root (connected + acyclic)
        seen = {root}
        stack = [root]
        while stack:
            u = stack.pop()
            for c in children[u]:
                seen.add(c)
                stack.append(c)
        if len(seen) != n:
            raise ModelError("tree is disconnected or contains a cycle")
        if n < 2:
            raise ModelError("tree needs at least one label")

        leaves = tuple(k for k in range(n) if k != root and not children[k])
        metas = tuple(k for k in range(n) if k != root and children[k])
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "root", root)
        object.__setattr__(self, "children", tuple(tuple(c) for c in children))
        object.__setattr__(self, "label_nodes", leaves)
        object.__setattr__(self, "column_nodes", leaves + metas)

    @classmethod
    def from_nodes(cls, nodes: Sequence[tuple]) -> "HierTree":
        """Build from ``[(parent, edge_length), ...]``; the root has parent None."""
        parents = [p for p, _ in nodes]
        lengths = [length for _, length in nodes]
        return cls(tuple(parents), tuple(lengths))

    def to_nodes(self) -> list[tuple]:
        return [(p, (None if p is None else self.lengths[k])) for k, p in enumerate(self.parents)]

    @property
    def num_labels(self) -> int:
        return len(self.label_nodes)

    @property
    def num_columns(self) -> int:
        """M: all nodes except the root."""
        return len(self.column_nodes)

    @cached_property
    def column_of(self) -> dict:
        return {node: c for c, node in enumerate(self.column_nodes)}

    @cached_property
    def upward_lengths(self) -> np.ndarray:
        """l_T for the subtree rooted at each column's node."""
        out = np.array([self.lengths[node] for node in self.column_nodes])
        out.setflags(write=False)
        return out

    @cached_property
    def path_matrix(self) -> np.ndarray:
        """Boolean (L, M) matrix; row i marks the root-to-leaf path of label i.

        Column c of the matrix is also the indicator of the subtree leaf set
        L(T_c).
        """
        P = np.zeros((self.num_labels, self.num_columns), dtype=bool)
        col = self.column_of
        for i, leaf in enumerate(self.label_nodes):
            node = leaf
            while node != self.root:
                P[i, col[node]] = True
                node = self.parents[node]
        P.setflags(write=False)
        return P

    def path(self, label: int) -> list[int]:
        """Columns on the root-to-leaf path of ``label``, label first."""
        self._check_label(label)
        out = []
        node = self.label_nodes[label]
        while node != self.root:
            out.append(self.column_of[node])
            node = self.parents[node]
        return out

    def subtree_labels(self, column: int) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.path_matrix[:, column])]

    @cached_property
    def distance_matrix(self) -> np.ndarray:
        L = self.num_labels
        D = np.zeros((L, L))
        for i in range(L):
            for j in range(i + 1, L):
                D[i, j] = D[j, i] = tree_distance(self, i, j)
        D.setflags(write=False)
        return D

    def _check_label(self, label):
        if not 0 <= label < self.num_labels:
            raise ModelError(f"label {label} is not a leaf of the tree")


def star_tree(num_labels: int, length: float = 0.5) -> HierTree:
    """Star tree; with length 0.5 its tree metric is the Potts metric."""
    return HierTree((None,) + (0,) * num_labels, (0.0,) + (length,) * num_labels)


def tree_distance(tree: HierTree, i: int, j: int) -> float:
    """Sum of edge lengths on the unique path between labels ``i`` and ``j``."""
    tree._check_label(i)
    tree._check_label(j)
    if i == j:
        return 0.0
    up_i = {}
    node, acc = tree.label_nodes[i], 0.0
    while True:
        up_i[node] = acc
        if node == tree.root:
            break
        acc += tree.lengths[node]
        node = tree.parents[node]
    node, acc = tree.label_nodes[j], 0.0
    while node not in up_i:
        acc += tree.lengths[node]
        node = tree.parents[node]
    return up_i[node] + acc


def validate_tree(tree: HierTree, r: float = 2.0, tol: float = 1e-12) -> ValidationReport:
    """Report sibling-length and r-decay violations. Never raises."""
    problems = []
    for parent, kids in enumerate(tree.children):
        lens = {tree.lengths[k] for k in kids}
        if len(lens) > 1:
            problems.append(
                f"children of node {parent} have unequal edge lengths {sorted(lens)}")
        if parent != tree.root:
            for k in kids:
                if tree.lengths[parent] < r * tree.lengths[k] - tol:
                    problems.append(
                        f"edge above node {k} ({tree.lengths[k]:g}) is not {r:g}x shorter "
                        f"than its parent edge ({tree.lengths[parent]:g})")
    return ValidationReport(tuple(problems))


@dataclass(frozen=True, eq=False)
class CrfInstance:
    """Pairwise CRF with Potts or tree-metric pairwise potentials.

    Use :meth:`sparse` or :meth:`dense` rather than the raw constructor.
    """

    unaries: np.ndarray
    edges: np.ndarray | None = None
    weights: np.ndarray | None = None
    kernel: "KernelMixture | None" = None
    tree: HierTree | None = None

    def __post_init__(self):
        phi = np.array(self.unaries, dtype=float)
        if phi.ndim != 2 or phi.shape[0] < 1 or phi.shape[1] < 1:
            raise ModelError("unaries must be a non-empty N x L table")
        if not np.all(np.isfinite(phi)):
            raise ModelError("unaries must be finite")
        phi.setflags(write=False)
        object.__setattr__(self, "unaries", phi)
        N, L = phi.shape
        if (self.kernel is None) == (self.edges is None):
            raise ModelError("give exactly one of sparse edges or a dense kernel")
        if self.edges is not None:
            edges = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
            w = np.array(self.weights, dtype=float).reshape(-1)
            if len(w) != len(edges):
                raise ModelError("one weight per edge required")
            if np.any(edges < 0) or np.any(edges >= N):
                raise ModelError("edge endpoint out of range")
            if np.any(edges[:, 0] == edges[:, 1]):
                raise ModelError("self-loop edge")
            edges = np.sort(edges, axis=1)
            if len({(int(a), int(b)) for a, b in edges}) != len(edges):
                raise ModelError("duplicate edge")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ModelError("edge weights must be finite and non-negative")
            edges.setflags(write=False)
            w.setflags(write=False)
            object.__setattr__(self, "edges", edges)
            object.__setattr__(self, "weights", w)
        elif self.kernel.num_points != N:
            raise ModelError("kernel features must have one row per variable")
        if self.tree is not None and self.tree.num_labels != L:
            raise ModelError(
                f"tree has {self.tree.num_labels} leaves but instance has {L} labels")

    @classmethod
    def sparse(cls, unaries, edges, weights=None, tree: HierTree | None = None) -> "CrfInstance":
        """``edges`` is a list of ``(a, b, w)`` triples, or pairs plus ``weights``."""
        if weights is None:
            triples = list(edges)
            pairs = [(int(a), int(b)) for a, b, _ in triples]
            weights = [float(w) for _, _, w in triples]
        else:
            pairs = edges
        return cls(unaries, edges=np.asarray(pairs, dtype=np.int64).reshape(-1, 2),
                   weights=weights, tree=tree)

    @classmethod
    def dense(cls, unaries, kernel: "KernelMixture", tree: HierTree | None = None) -> "CrfInstance":
        return cls(unaries, kernel=kernel, tree=tree)

    @property
    def num_variables(self) -> int:
        return self.unaries.shape[0]

    @property
    def num_labels(self) -> int:
        return self.unaries.shape[1]

    @property
    def metric(self) -> str:
        return "potts" if self.tree is None else "tree"

    @property
    def is_dense(self) -> bool:
        return self.kernel is not None

    @property
    def num_columns(self) -> int:
        return self.num_labels if self.tree is None else self.tree.num_columns

    @property
    def ground_size(self) -> int:
        return self.num_variables * self.num_columns

    @cached_property
    def label_distance(self) -> np.ndarray:
        """mu(i, j): Iverson bracket for Potts, tree distance otherwise."""
        if self.tree is None:
            return 1.0 - np.eye(self.num_labels)
        return self.tree.distance_matrix

    @cached_property
    def lifted_unaries(self) -> np.ndarray:
        """phi'(a, i): unaries on label columns, zero on meta-label columns."""
        out = np.zeros((self.num_variables, self.num_columns))
        out[:, :self.num_labels] = self.unaries
        out.setflags(write=False)
        return out

    def edge_list(self) -> tuple[np.ndarray, np.ndarray]:
        """(pairs, weights); dense kernels are materialized over all a < b."""
        if self.edges is not None:
            return self.edges, self.weights
        a, b = np.triu_indices(self.num_variables, k=1)
        return np.stack([a, b], axis=1), self.kernel.matrix[a, b]

    def materialized(self) -> "CrfInstance":
        """Sparse copy of a dense instance with every kernel pair as an edge."""
        if not self.is_dense:
            return self
        pairs, w = self.edge_list()
        return CrfInstance(self.unaries, edges=pairs, weights=w, tree=self.tree)

    def with_unaries(self, unaries) -> "CrfInstance":
        return CrfInstance(unaries, edges=self.edges, weights=self.weights,
                           kernel=self.kernel, tree=self.tree)

    def as_star_tree(self) -> "CrfInstance":
        """Same Potts energy expressed as a star tree with edge lengths 0.5."""
        if self.tree is not None:
            raise ModelError("instance already has a tree metric")
        return CrfInstance(self.unaries, edges=self.edges, weights=self.weights,
                           kernel=self.kernel, tree=star_tree(self.num_labels))


def check_labeling(instance: CrfInstance, x) -> np.ndarray:
    x = np.asarray(x)
    if x.shape != (instance.num_variables,):
        raise ModelError(f"labeling must have length {instance.num_variables}")
    if not np.issubdtype(x.dtype, np.integer):
        if not np.all(np.equal(np.mod(x, 1), 0)):
            raise ModelError("labels must be integers")
        x = x.astype(np.int64)
    if np.any(x < 0) or np.any(x >= instance.num_labels):
        raise ModelError("label out of range")
    return x


def energy_eval(instance: CrfInstance, x) -> float:
    """E(x) = sum_a phi_a(x_a) + sum_{(a,b)} w_ab * mu(x_a, x_b)."""
    x = check_labeling(instance, x)
    unary = instance.unaries[np.arange(len(x)), x].sum()
    mu = instance.label_distance
    if instance.is_dense:
        K = instance.kernel.matrix
        Y = np.zeros((len(x), instance.num_labels))
        Y[np.arange(len(x)), x] = 1.0
        C = Y.T @ K @ Y
        return float(unary + 0.5 * np.sum(mu * C))
    a, b = instance.edges[:, 0], instance.edges[:, 1]
    return float(unary + np.sum(instance.weights * mu[x[a], x[b]]))


def encode_labeling(instance: CrfInstance, x) -> np.ndarray:
    """Ground-set indicator of a labeling (1-of-L, or root-to-leaf paths)."""
    x = check_labeling(instance, x)
    N, M = instance.num_variables, instance.num_columns
    A = np.zeros((N, M), dtype=bool)
    if instance.tree is None:
        A[np.arange(N), x] = True
    else:
        A[:] = instance.tree.path_matrix[x]
    return A.reshape(-1)


def _rows(instance: CrfInstance, A) -> np.ndarray:
    A = np.asarray(A, dtype=bool).reshape(-1)
    if A.size != instance.ground_size:
        raise ModelError(f"indicator must have {instance.ground_size} entries")
    return A.reshape(instance.num_variables, instance.num_columns)


def decode_labeling(instance: CrfInstance, A) -> np.ndarray:
    """Inverse of :func:`encode_labeling`; raises on invalid sets."""
    rows = _rows(instance, A)
    if instance.tree is None:
        if np.any(rows.sum(axis=1) != 1):
            raise ModelError("set does not pick exactly one label per variable")
        return rows.argmax(axis=1)
    P = instance.tree.path_matrix
    match = np.all(rows[:, None, :] == P[None, :, :], axis=2)
    if not np.all(match.any(axis=1)):
        raise ModelError("set is not a root-to-leaf path for every variable")
    return match.argmax(axis=1)


def is_valid_assignment(instance: CrfInstance, A) -> bool:
    try:
        decode_labeling(instance, A)
    except ModelError:
        return False
    return True


def indicator(instance: CrfInstance, elements) -> np.ndarray:
    """Indicator vector from ``(variable, column)`` pairs."""
    A = np.zeros(instance.ground_size, dtype=bool)
    for a, i in elements:
        A[a * instance.num_columns + i] = True
    return A
