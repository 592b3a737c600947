"""Oracle checks bundled for the ``verify`` command."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .extension import (
    MAX_SUBMODULAR_GROUND, Arcs, CapacityError, ExtensionError, ExtensionKind,
    check_compatible, cut_value, extension_arcs, greedy_vertex, is_submodular, lovasz_eval)
from .inference import SolverConfig, frank_wolfe
from .lpgrad import dense_lp_subgradient, lift, lp_objective_hier, lp_objective_potts, lp_subgradient
from .model import CrfInstance
from .oracle import MAX_FACTORIZATION, check_factorization, enumerate_exact, mean_field

PASS, FAIL, SKIP = "pass", "fail", "skipped"


@dataclass
class Check:
    name: str
    status: str
    discrepancy: float = 0.0
    detail: str = ""

    def line(self) -> str:
        text = f"{self.status.upper():7s} {self.name}"
        if self.status != SKIP:
            text += f"  discrepancy={self.discrepancy:.3e}"
        if self.detail:
            text += f"  ({self.detail})"
        return text


def compatible_kinds(instance: CrfInstance) -> list[ExtensionKind]:
    out = []
    for kind in ExtensionKind:
        try:
            check_compatible(kind, instance)
        except ExtensionError:
            continue
        out.append(kind)
    return out


def random_relaxed(instance: CrfInstance, rng, ties: bool = False) -> np.ndarray:
    """Random point of the simplex product, lifted to columns; optionally uniform."""
    N, L = instance.num_variables, instance.num_labels
    y = np.full((N, L), 1.0 / L) if ties else rng.dirichlet(np.ones(L), size=N)
    return lift(instance, y)


def connected_variables(instance: CrfInstance, count: int) -> list[int]:
    """Up to ``count`` variables grown breadth-first from variable 0."""
    pairs, _ = instance.edge_list()
    nbrs = [[] for _ in range(instance.num_variables)]
    for a, b in pairs:
        nbrs[a].append(int(b))
        nbrs[b].append(int(a))
    order, seen = [0], {0}
    k = 0
    while k < len(order) and len(order) < count:
        for b in sorted(nbrs[order[k]]):
            if b not in seen and len(order) < count:
                seen.add(b)
                order.append(b)
        k += 1
    for a in range(instance.num_variables):
        if len(order) >= count:
            break
        if a not in seen:
            order.append(a)
    return sorted(order)


def _sub_ground(instance: CrfInstance) -> np.ndarray:
    M = instance.num_columns
    cols = min(M, MAX_SUBMODULAR_GROUND)
    nvars = max(1, MAX_SUBMODULAR_GROUND // cols)
    variables = connected_variables(instance, min(nvars, instance.num_variables))
    return np.array([a * M + c for a in variables for c in range(cols)])


def _tampered(arcs: Arcs) -> Arcs:
    pairwise = arcs.head != -1
    cap = np.where(pairwise, -arcs.cap, arcs.cap)
    return Arcs(arcs.tail, arcs.head, cap, arcs.size)


def check_submodularity(instance, kind, tamper=False) -> Check:
    arcs = extension_arcs(kind, instance)
    if tamper:
        arcs = _tampered(arcs)
    elements = _sub_ground(instance)

    def f(mask):
        full = np.zeros(instance.ground_size, dtype=bool)
        full[elements[mask]] = True
        return cut_value(arcs, full)

    ok = is_submodular(f, len(elements))
    return Check(f"submodularity[{kind.value}]", PASS if ok else FAIL,
                 detail=f"{len(elements)} ground elements" + (", tampered" if tamper else ""))


def check_prop5(instance, kind, rng, trials=20) -> Check:
    """lp_subgradient vs greedy_vertex, exact equality, including an all-ties input."""
    worst = 0.0
    equal = True
    for t in range(trials):
        y = random_relaxed(instance, rng, ties=(t == 0))
        a = lp_subgradient(kind, instance, y)
        b = greedy_vertex(kind, instance.materialized(), y.reshape(-1))
        equal &= bool(np.array_equal(a, b))
        worst = max(worst, float(np.max(np.abs(a - b))))
    return Check(f"subgradient==greedy[{kind.value}]", PASS if equal else FAIL, worst)


def check_lovasz_bridge(instance, kind, rng, trials=50) -> Check:
    objective = lp_objective_hier if kind is ExtensionKind.HIER_OPTIMAL else lp_objective_potts
    worst = 0.0
    for _ in range(trials):
        y = random_relaxed(instance, rng)
        worst = max(worst, abs(objective(instance, y) - lovasz_eval(kind, instance, y.reshape(-1))))
    return Check(f"lp==lovasz[{kind.value}]", PASS if worst <= 1e-10 else FAIL, worst)


def check_dense_equivalence(instance, rng, trials=10) -> Check:
    if not instance.is_dense:
        return Check("dense==materialized", SKIP, detail="sparse instance")
    if instance.num_variables > 200:
        return Check("dense==materialized", SKIP, detail="more than 200 variables")
    sparse = instance.materialized()
    kind = ExtensionKind.HIER_OPTIMAL if instance.tree is not None else ExtensionKind.POTTS_OPTIMAL
    worst = 0.0
    for _ in range(trials):
        y = random_relaxed(instance, rng)
        a = dense_lp_subgradient(instance, y)
        b = lp_subgradient(kind, sparse, y)
        worst = max(worst, float(np.max(np.abs(a - b))))
    return Check("dense==materialized", PASS if worst <= 1e-10 else FAIL, worst)


def check_factorization_identity(instance, rng) -> Check:
    try:
        s = rng.normal(size=instance.ground_size)
        lhs, rhs, diff = check_factorization(instance, s)
    except CapacityError as exc:
        return Check("factorization", SKIP, detail=str(exc))
    rel = diff / rhs
    return Check("factorization", PASS if rel <= 1e-10 else FAIL, rel)


def check_sandwich(instance, kind, max_iter=100) -> Check:
    if instance.num_labels ** instance.num_variables > MAX_FACTORIZATION:
        return Check(f"sandwich[{kind.value}]", SKIP, detail="too many labelings to enumerate")
    log_z = enumerate_exact(instance).log_partition
    bound = frank_wolfe(instance, kind, SolverConfig(max_iter=max_iter)).bound
    lower = mean_field(instance).elbo
    slack = min(bound - log_z, log_z - lower)
    ok = slack >= -1e-8
    return Check(f"sandwich[{kind.value}]", PASS if ok else FAIL, max(0.0, -slack),
                 detail=f"elbo={lower:.6g} logZ={log_z:.6g} bound={bound:.6g}")


def run_checks(instance: CrfInstance, kinds=None, seed: int = 0, tamper: bool = False) -> list[Check]:
    rng = np.random.default_rng(seed)
    kinds = compatible_kinds(instance) if kinds is None else [ExtensionKind.parse(k) for k in kinds]
    checks = [check_factorization_identity(instance, rng)]
    small = instance.ground_size <= 5000
    for kind in kinds:
        checks.append(check_sandwich(instance, kind))
        checks.append(check_submodularity(instance, kind, tamper))
        if kind is ExtensionKind.POTTS_ALTERNATE:
            continue
        if small:
            checks.append(check_prop5(instance, kind, rng))
            checks.append(check_lovasz_bridge(instance, kind, rng))
        else:
            checks.append(Check(f"subgradient==greedy[{kind.value}]", SKIP, detail="large ground set"))
    checks.append(check_dense_equivalence(instance, rng))
    return checks
