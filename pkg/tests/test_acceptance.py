"""Acceptance checks, one test per criterion.

Every test records a ``PASS criterion N: ...`` or ``FAIL criterion N: ...``
line. The lines are printed as they happen and again, in order, in the
terminal summary.
"""

import itertools
import math
import time

import numpy as np

from oracles import ACCEPTANCE_LINES, grid_instance, random_sparse, random_tree, rhst_tree
from submodcrf import (CrfInstance, ExtensionKind, KernelMixture, SolverConfig, build_stereo_model,
                       check_factorization, dense_lp_subgradient, encode_labeling, energy_eval,
                       enumerate_exact, extension_eval, frank_wolfe, generate_synthetic,
                       greedy_vertex, is_submodular, lovasz_eval, lp_objective_hier,
                       lp_objective_potts, lp_subgradient, mean_field, neg_gradient, objective_g,
                       objective_g_T)
from submodcrf.extension import extension_arcs, subset_table
from submodcrf.lpgrad import lift
from submodcrf.synthetic import resample_unaries

OPT, ALT, HIER = ExtensionKind.POTTS_OPTIMAL, ExtensionKind.POTTS_ALTERNATE, ExtensionKind.HIER_OPTIMAL
WEIGHTS = (1.0, 2.0, 5.0, 10.0)


def record(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def simplex(rng, N, L):
    return rng.dirichlet(np.ones(L), size=N)


def dyadic_tree(rng, L):
    # random_tree draws lengths from {0.25, 0.5, 1, 2}
    return random_tree(rng, L)


def tied_point(rng, N, L, t):
    """Random simplex point; every third is all-ties, every third has repeated values."""
    if t % 3 == 0:
        return np.full((N, L), 1.0 / L)
    y = simplex(rng, N, L)
    if t % 3 == 1:
        y = np.round(y * 4) + 1.0
        y /= y.sum(axis=1, keepdims=True)
        y[1:N:2] = y[0]
    return y


def test_criterion_01_upper_bound_validity():
    """FW bound is never below log Z on small grids."""
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = math.inf
    for t in range(50):
        inst = grid_instance(rng, 3, 3, 3, weight=float(rng.choice(WEIGHTS)))
        slack = frank_wolfe(inst, OPT).bound - enumerate_exact(inst).log_partition
        worst = min(worst, slack)
    elapsed = time.perf_counter() - start
    record(1, worst >= -1e-8 and elapsed < 10,
           f"min slack {worst:.3e} over 50 grids, {elapsed:.2f} s")


def test_criterion_02_extension_property():
    """F(encode(x)) equals E(x) for every labeling of 2x2 grids."""
    rng = np.random.default_rng(2)
    checked, mismatches = 0, 0
    for L in (1, 2, 3):
        for weight in WEIGHTS:
            potts = grid_instance(rng, 2, 2, L, weight=weight, dyadic=True)
            tree = CrfInstance.sparse(potts.unaries, list(zip(potts.edges[:, 0], potts.edges[:, 1],
                                                              potts.weights)),
                                      tree=dyadic_tree(rng, L))
            cases = [(OPT, potts), (ALT, potts), (HIER, potts.as_star_tree()), (HIER, tree)]
            for kind, inst in cases:
                for x in itertools.product(range(L), repeat=4):
                    checked += 1
                    if extension_eval(kind, inst, encode_labeling(inst, x)) != energy_eval(inst, x):
                        mismatches += 1
    record(2, mismatches == 0, f"{checked} (kind, labeling) pairs, {mismatches} mismatches")


def test_criterion_03_factorization_identity():
    """sum over valid sets of exp(-s(A)) equals the product of per-variable sums."""
    rng = np.random.default_rng(3)
    worst = 0.0
    for t in range(100):
        N, L = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        tree = dyadic_tree(rng, L) if t % 2 else None
        inst = CrfInstance.sparse(rng.uniform(0, 10, size=(N, L)), [], tree=tree)
        _, rhs, diff = check_factorization(inst, rng.normal(scale=2, size=inst.ground_size))
        worst = max(worst, diff / rhs)
    record(3, worst <= 1e-10, f"max relative error {worst:.3e} over 100 pairs")


def test_criterion_04_subgradient_is_greedy():
    """LP subgradient and greedy vertex agree bitwise, ties included."""
    rng = np.random.default_rng(4)
    counts = {}
    for label, tree, dense in (("potts", None, False), ("tree", rhst_tree(), False),
                               ("dense", None, True)):
        kind = HIER if tree is not None else OPT
        equal = 0
        for t in range(100):
            if dense:
                f = rng.normal(size=(12, 2))
                inst = CrfInstance.dense(rng.uniform(0, 5, size=(12, 4)), KernelMixture((1.0,), (f,)))
            else:
                inst = random_sparse(rng, 8, 4, p=0.4, tree=tree)
            z = lift(inst, tied_point(rng, inst.num_variables, 4, t))
            if dense:
                a = dense_lp_subgradient(inst, z)
                b = greedy_vertex(kind, inst.materialized(), z)
            else:
                a = lp_subgradient(kind, inst, z)
                b = greedy_vertex(kind, inst, z)
            equal += bool(np.array_equal(a, b))
        counts[label] = equal
    record(4, all(v == 100 for v in counts.values()),
           ", ".join(f"{k} {v}/100 bitwise" for k, v in counts.items()))


def test_criterion_05_lovasz_bridge():
    """LP objective equals the extension's Lovasz value on the lifted point."""
    rng = np.random.default_rng(5)
    worst = 0.0
    for t in range(40):
        inst = random_sparse(rng, 6, 4, tree=dyadic_tree(rng, 4) if t % 2 else None)
        kind = HIER if inst.tree is not None else OPT
        for _ in range(25):
            z = lift(inst, simplex(rng, 6, 4))
            lp = lp_objective_hier(inst, z) if kind is HIER else lp_objective_potts(inst, z)
            worst = max(worst, abs(lp - lovasz_eval(kind, inst, z.reshape(-1))))
    record(5, worst <= 1e-10, f"max abs difference {worst:.3e} over 1000 points")


def test_criterion_06_submodularity():
    """Exhaustive pairwise submodularity on 12-element ground sets."""
    rng = np.random.default_rng(6)
    results = []
    for _ in range(3):
        potts = random_sparse(rng, 4, 3, p=0.7)
        tree = random_sparse(rng, 2, 4, p=1.0, tree=rhst_tree())
        for kind, inst in ((OPT, potts), (ALT, potts), (HIER, tree)):
            n = inst.ground_size
            results.append((kind.value, n, is_submodular(
                lambda A, k=kind, i=inst: extension_eval(k, i, A), n)))
    ok = all(r[2] for r in results) and all(r[1] == 12 for r in results)
    record(6, ok, f"{sum(r[2] for r in results)}/{len(results)} instances submodular (3 per kind)")


def test_criterion_07_dominance():
    """The optimal extension gives bounds at least as tight as the alternate one."""
    means = {}
    for w in WEIGHTS:
        base = generate_synthetic(10, 10, 5, weight=w, seed=0)
        diffs = []
        for seed in range(20):
            inst = resample_unaries(base, 10.0, seed)
            diffs.append(frank_wolfe(inst, OPT).bound - frank_wolfe(inst, ALT).bound)
        means[w] = float(np.mean(diffs))
    rng = np.random.default_rng(7)
    dominated = True
    for _ in range(10):
        inst = random_sparse(rng, 4, 3, p=0.7)
        for (_, f_opt), (_, f_alt) in zip(subset_table(extension_arcs(OPT, inst)),
                                          subset_table(extension_arcs(ALT, inst))):
            dominated &= bool(np.all(f_opt >= f_alt - 1e-12))
    ok = all(m <= 0 for m in means.values()) and dominated
    detail = ", ".join(f"w={w:g}: {m:.4f}" for w, m in means.items())
    record(7, ok, f"mean(opt - alt) {detail}; exhaustive F_opt >= F_alt {dominated}")


def test_criterion_08_temperature_limit():
    """0 <= g_T(s) - sum_a max_i(-s_ai) <= N T log L."""
    rng = np.random.default_rng(8)
    N, L = 6, 4
    inst = CrfInstance.sparse(np.zeros((N, L)), [])
    lo, hi_ratio = math.inf, 0.0
    for T in (1.0, 0.1, 0.01):
        for _ in range(100):
            s = rng.normal(scale=3, size=N * L)
            excess = objective_g_T(inst, OPT, s, T) - float(np.max(-s.reshape(N, L), axis=1).sum())
            lo = min(lo, excess)
            hi_ratio = max(hi_ratio, excess / (N * T * math.log(L)))
    record(8, lo >= 0 and hi_ratio <= 1, f"min excess {lo:.3e}, max excess / (N T log L) {hi_ratio:.4f}")


def test_criterion_09_gradient():
    """Analytic gradient matches central finite differences."""
    rng = np.random.default_rng(9)
    h = 1e-5
    worst = 0.0
    for kind, tree in ((OPT, None), (HIER, rhst_tree())):
        inst = CrfInstance.sparse(np.zeros((3, 4)), [], tree=tree)
        for _ in range(10):
            s = rng.normal(size=inst.ground_size)
            grad = -neg_gradient(inst, kind, s)
            fd = np.empty_like(s)
            for j in range(len(s)):
                e = np.zeros_like(s)
                e[j] = h
                fd[j] = (objective_g(inst, kind, s + e) - objective_g(inst, kind, s - e)) / (2 * h)
            worst = max(worst, float(np.linalg.norm(fd - grad) / np.linalg.norm(grad)))
    record(9, worst <= 1e-5, f"max relative error {worst:.3e}")


def test_criterion_10_sandwich():
    """ELBO <= log Z <= bound, with equality when there are no edges."""
    rng = np.random.default_rng(10)
    violations = 0
    for t in range(50):
        tree = dyadic_tree(rng, 3) if t % 2 else None
        inst = random_sparse(rng, 6, 3, tree=tree)
        kind = HIER if tree is not None else OPT
        logz = enumerate_exact(inst).log_partition
        if not mean_field(inst).elbo <= logz + 1e-9 <= frank_wolfe(inst, kind).bound + 2e-9:
            violations += 1
    worst = 0.0
    for _ in range(10):
        inst = CrfInstance.sparse(rng.uniform(0, 10, size=(5, 3)), [])
        values = (mean_field(inst).elbo, enumerate_exact(inst).log_partition,
                  frank_wolfe(inst, OPT).bound)
        worst = max(worst, max(values) - min(values))
    record(10, violations == 0 and worst <= 1e-9,
           f"{violations}/50 ordering violations, zero-pairwise spread {worst:.3e}")


def test_criterion_11_star_reduction():
    """Hierarchical extension on a star tree reproduces the Potts bounds."""
    worst = 0.0
    base = generate_synthetic(6, 6, 4, weight=2.0, seed=0)
    for seed in range(20):
        inst = resample_unaries(base, 10.0, seed)
        a = frank_wolfe(inst, OPT).bound
        b = frank_wolfe(inst.as_star_tree(), HIER).bound
        worst = max(worst, abs(a - b))
    record(11, worst <= 1e-10, f"max per-seed difference {worst:.3e} over 20 seeds")


def test_criterion_12_dense_equivalence():
    """Dense kernels and their materialized edge lists agree."""
    rng = np.random.default_rng(12)
    worst = {"energy": 0.0, "subgradient": 0.0, "trajectory": 0.0}
    for N in (5, 12, 30):
        for tree in (None, rhst_tree()):
            kind = HIER if tree is not None else OPT
            f1, f2 = rng.normal(size=(N, 2)), rng.normal(size=(N, 5))
            inst = CrfInstance.dense(rng.uniform(0, 5, size=(N, 4)),
                                     KernelMixture((1.0, 0.5), (f1, f2)), tree=tree)
            sparse = inst.materialized()
            for _ in range(20):
                x = rng.integers(0, 4, size=N)
                worst["energy"] = max(worst["energy"],
                                      abs(energy_eval(inst, x) - energy_eval(sparse, x)))
                z = lift(inst, simplex(rng, N, 4))
                worst["subgradient"] = max(worst["subgradient"], float(np.max(np.abs(
                    dense_lp_subgradient(inst, z) - lp_subgradient(kind, sparse, z)))))
            for step in ("fixed", "line-search"):
                cfg = SolverConfig(max_iter=30, step=step)
                a = frank_wolfe(inst, kind, cfg).trajectory
                b = frank_wolfe(sparse, kind, cfg).trajectory
                same_len = len(a) == len(b)
                diff = max(float(np.max(np.abs(a.column(c) - b.column(c))))
                           for c in ("bound", "gap", "step")) if same_len else math.inf
                worst["trajectory"] = max(worst["trajectory"], diff)
    record(12, max(worst.values()) <= 1e-9,
           ", ".join(f"{k} {v:.3e}" for k, v in worst.items()))


def test_criterion_13_frank_wolfe_behaviour():
    """Monotone line search, unit first step, non-negative gaps, runtime."""
    inst = generate_synthetic(10, 10, 5, weight=5.0, seed=13)
    start = time.perf_counter()
    fixed = frank_wolfe(inst, OPT, SolverConfig(max_iter=100, eps=0.0)).trajectory
    elapsed = time.perf_counter() - start
    ls = frank_wolfe(inst, OPT, SolverConfig(max_iter=100, step="line-search")).trajectory
    bounds = ls.column("bound")
    monotone = bool(np.all(np.diff(bounds) <= 0))
    first_step = float(fixed.column("step")[0])
    min_gap = min(float(fixed.column("gap").min()), float(ls.column("gap").min()))
    ok = monotone and first_step == 1.0 and min_gap >= -1e-9 and len(fixed) == 100 and elapsed < 5
    record(13, ok, f"line search monotone {monotone}, gamma_0 {first_step:g}, "
                   f"min gap {min_gap:.3e}, 100 fixed iterations in {elapsed:.2f} s")


def test_criterion_14_stereo_smoke():
    """Shifted synthetic pair: disparity recovered, energy no worse than mean field."""
    base = np.random.default_rng(1000).uniform(0, 255, size=(32, 35))
    left, right = base[:, :32], base[:, 3:35]
    accuracies, wins = [], 0
    for seed in range(10):
        r = np.random.default_rng(seed)
        noisy_left = np.clip(left + r.normal(0, 5, left.shape), 0, 255)
        noisy_right = np.clip(right + r.normal(0, 5, right.shape), 0, 255)
        inst = build_stereo_model(noisy_left, noisy_right, 5)
        fw = frank_wolfe(inst, OPT, SolverConfig(max_iter=100, step="line-search"))
        mf = mean_field(inst)
        submod_labels = fw.marginals.argmax(axis=1)
        mf_labels = mf.marginals.argmax(axis=1)
        accuracies.append(float(np.mean(submod_labels.reshape(32, 32)[:, 4:] == 3)))
        wins += energy_eval(inst, submod_labels) <= energy_eval(inst, mf_labels)
    ok = min(accuracies) >= 0.9 and wins >= 7
    record(14, ok, f"min interior accuracy {min(accuracies):.3f}, "
                   f"submodular energy <= mean field on {wins}/10 seeds")
