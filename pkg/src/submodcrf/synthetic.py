"""Synthetic grid CRFs and hierarchical label trees."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .model import CrfInstance, HierTree, star_tree

# level edge lengths (root level first) and leaves per bottom meta-label
TREE_PRESETS = {
    "tree1": ((1.0, 0.5), 4),
    "tree2": ((1.0, 1.0, 0.5), 5),
}
METRICS = ("potts", "star") + tuple(TREE_PRESETS)


def grid_edges(height: int, width: int) -> np.ndarray:
    """4-connected lattice edges, row-major variable numbering, a < b."""
    idx = np.arange(height * width).reshape(height, width)
    right = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1)
    down = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1)
    edges = np.concatenate([right, down])
    return edges[np.lexsort((edges[:, 1], edges[:, 0]))]


def level_tree(num_labels: int, level_lengths: Sequence[float], clump: int) -> HierTree:
    """Tree whose edges at depth d all have length ``level_lengths[d]``.

    Leaves are grouped ``clump`` at a time under bottom meta-labels; the
    levels above pair their children up two at a time, and the top level
    hangs off the root.
    """
    depth = len(level_lengths)
    if depth < 1:
        raise ValueError("need at least one level")
    parents: list = [None]
    lengths: list = [0.0]
    if depth == 1:
        return star_tree(num_labels, level_lengths[0])
    groups = [list(range(k, min(k + clump, num_labels))) for k in range(0, num_labels, clump)]
    # sizes of the meta-label levels, bottom-up
    sizes = [len(groups)]
    for _ in range(depth - 2):
        sizes.append(math.ceil(sizes[-1] / 2))
    sizes.reverse()
    # create meta-labels top-down
    level_nodes = []
    prev: list = [0]
    for d, size in enumerate(sizes):
        nodes = []
        for k in range(size):
            parent = prev[0] if d == 0 else prev[k // 2]
            parents.append(parent)
            lengths.append(float(level_lengths[d]))
            nodes.append(len(parents) - 1)
        level_nodes.append(nodes)
        prev = nodes
    for g, members in enumerate(groups):
        for _ in members:
            parents.append(level_nodes[-1][g])
            lengths.append(float(level_lengths[-1]))
    return HierTree(tuple(parents), tuple(lengths))


def make_tree(metric: str, num_labels: int) -> HierTree | None:
    if metric == "potts":
        return None
    if metric == "star":
        return star_tree(num_labels)
    try:
        level_lengths, clump = TREE_PRESETS[metric]
    except KeyError:
        raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}") from None
    return level_tree(num_labels, level_lengths, clump)


def generate_synthetic(height: int, width: int, num_labels: int, unary_max: float = 10.0,
                       weight: float = 1.0, metric: str = "potts", seed: int = 0) -> CrfInstance:
    """Grid CRF with i.i.d. uniform unaries in [0, unary_max] and constant weights."""
    if height < 1 or width < 1 or num_labels < 1:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(seed)
    phi = rng.uniform(0.0, unary_max, size=(height * width, num_labels))
    edges = grid_edges(height, width)
    return CrfInstance.sparse(phi, edges, np.full(len(edges), float(weight)),
                              tree=make_tree(metric, num_labels))


def resample_unaries(instance: CrfInstance, unary_max: float, seed: int) -> CrfInstance:
    rng = np.random.default_rng(seed)
    return instance.with_unaries(rng.uniform(0.0, unary_max, size=instance.unaries.shape))
