"""Command line interface: ``submodcrf <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import densekernel
from .densekernel import BackendUnavailable, build_stereo_model, read_image, write_pgm
from .extension import CapacityError, ExtensionError, ExtensionKind, check_compatible
from .formats import (FormatError, fmt, instance_to_dict, marginals_document, read_instance,
                      trajectory_csv, write_instance)
from .inference import SolverConfig, StepRule, frank_wolfe
from .model import CrfInstance, ModelError, energy_eval, validate_tree
from .oracle import enumerate_exact, mean_field
from .synthetic import METRICS, generate_synthetic, resample_unaries
from .verify import FAIL, run_checks

log = logging.getLogger("submodcrf")

KINDS = [k.value for k in ExtensionKind]


class CliError(Exception):
    pass


def _write(path, text: str):
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _dump(path, doc):
    _write(path, json.dumps(doc, indent=1) + "\n")


def _load(args) -> CrfInstance:
    instance = read_instance(args.instance)
    _check_tree(instance, getattr(args, "strict_tree", False))
    return instance


def _check_tree(instance: CrfInstance, strict: bool):
    if instance.tree is None:
        return
    report = validate_tree(instance.tree)
    if report.ok:
        return
    if strict:
        raise CliError(f"tree validation failed: {report}")
    log.warning("tree validation: %s", report)


def _config(args) -> SolverConfig:
    if args.backend != densekernel.NAIVE:
        densekernel._check_backend(args.backend)
    return SolverConfig(max_iter=args.max_iter, eps=args.eps, step=StepRule(args.step),
                        temperature=args.temperature, backend=args.backend)


def _prepare(instance: CrfInstance, kind: ExtensionKind) -> CrfInstance:
    """hier-opt on a Potts instance runs on the equivalent star tree."""
    if kind is ExtensionKind.HIER_OPTIMAL and instance.tree is None:
        return instance.as_star_tree()
    return instance


# -- commands ----------------------------------------------------------------

def cmd_generate(args):
    instance = generate_synthetic(args.height, args.width, args.labels, args.unary_max,
                                  args.weight, args.metric, args.seed)
    if args.output in (None, "-"):
        _dump(None, instance_to_dict(instance))
    else:
        write_instance(args.output, instance)
    return 0


def _strip_timing(traj):
    traj.records = [r._replace(seconds=0.0) for r in traj.records]


def cmd_solve(args):
    instance = _load(args)
    kind = ExtensionKind(args.kind)
    instance = _prepare(instance, kind)
    result = frank_wolfe(instance, kind, _config(args))
    if args.no_timing:
        _strip_timing(result.trajectory)
    _write(args.trajectory, trajectory_csv(result.trajectory))
    doc = marginals_document(result.marginals, result.bound, kind=kind.value,
                             iterations=len(result.trajectory),
                             converged=result.trajectory.converged)
    if args.marginals:
        _dump(args.marginals, doc)
    if args.trajectory not in (None, "-"):
        print(f"bound {fmt(result.bound)}")
    return 0


def _parse_seeds(text: str) -> list[int]:
    if "," in text:
        return [int(v) for v in text.split(",") if v]
    if "-" in text:
        lo, hi = text.split("-")
        return list(range(int(lo), int(hi) + 1))
    return list(range(int(text)))


def compare(instance: CrfInstance, kinds, seeds, config: SolverConfig,
            unary_max: float = 10.0, keep_unaries: bool = False):
    """Bounds per seed and kind, plus (bound_first - bound_other) / |bound_other|."""
    usable = []
    for kind in kinds:
        try:
            check_compatible(kind, _prepare(instance, kind))
        except ExtensionError as exc:
            log.warning("skipping %s: %s", kind.value, exc)
            continue
        usable.append(kind)
    if len(usable) < 2:
        raise CliError("need at least two usable extension kinds")
    rows = []
    for seed in seeds:
        inst = instance if keep_unaries else resample_unaries(instance, unary_max, seed)
        bounds = [frank_wolfe(_prepare(inst, kind), kind, config).bound for kind in usable]
        row = {"seed": seed, "bounds": bounds,
               "diffs": [(bounds[0] - b) / abs(b) for b in bounds[1:]]}
        rows.append(row)
    return usable, rows


def compare_csv(kinds, rows) -> str:
    names = []
    for j, kind in enumerate(kinds):
        name = kind.value
        if name in names:
            name = f"{name}#{j + 1}"
        names.append(name)
    header = ["seed"] + [f"bound:{n}" for n in names] + [f"diff:{names[0]}-{n}" for n in names[1:]]
    out = [",".join(header)]
    for row in rows:
        out.append(",".join([str(row["seed"])] + [fmt(v) for v in row["bounds"]]
                            + [fmt(v) for v in row["diffs"]]))
    means = np.mean([r["diffs"] for r in rows], axis=0)
    bmeans = np.mean([r["bounds"] for r in rows], axis=0)
    out.append(",".join(["mean"] + [fmt(v) for v in bmeans] + [fmt(v) for v in means]))
    return "\n".join(out) + "\n"


def cmd_compare(args):
    instance = _load(args)
    kinds = [ExtensionKind(k) for k in args.kinds.split(",")]
    if len(kinds) < 2:
        raise CliError("--kinds needs at least two entries")
    usable, rows = compare(instance, kinds, _parse_seeds(args.seeds), _config(args),
                           args.unary_max, args.keep_unaries)
    _write(args.output, compare_csv(usable, rows))
    return 0


def disparity_maps(instance, shape, max_disparity, methods, config, mf_threshold):
    out = {}
    if "meanfield" in methods:
        t0 = time.perf_counter()
        mf = mean_field(instance, kl_threshold=mf_threshold)
        seconds = time.perf_counter() - t0
        labels = mf.marginals.argmax(axis=1)
        out["meanfield"] = {"labels": labels, "seconds": seconds, "elbo": mf.elbo}
    if "submod" in methods:
        kind = ExtensionKind.HIER_OPTIMAL if instance.tree is not None else ExtensionKind.POTTS_OPTIMAL
        t0 = time.perf_counter()
        fw = frank_wolfe(instance, kind, config)
        seconds = time.perf_counter() - t0
        labels = fw.marginals.argmax(axis=1)
        out["submod"] = {"labels": labels, "seconds": seconds, "bound": fw.bound}
    for res in out.values():
        res["energy"] = energy_eval(instance, res["labels"])
        res["disparity"] = res["labels"].reshape(shape)
    return out


def cmd_stereo(args):
    left, right = read_image(args.left), read_image(args.right)
    weights = tuple(float(v) for v in args.kernel_weights.split(","))
    instance = build_stereo_model(left, right, args.max_disparity, args.theta_spatial,
                                  args.theta_color, weights)
    methods = ["meanfield", "submod"] if args.method == "both" else [args.method]
    config = _config(args)
    results = disparity_maps(instance, left.shape[:2], args.max_disparity, methods, config,
                             args.kl_threshold)
    scale = args.scale if args.scale else 255 // max(1, args.max_disparity - 1)
    report = {"max_disparity": args.max_disparity, "pgm_scale": scale}
    for name, res in results.items():
        path = f"{args.out_prefix}_{name}.pgm"
        write_pgm(path, res["disparity"] * scale)
        report[name] = {k: float(v) for k, v in res.items()
                        if k in ("energy", "seconds", "bound", "elbo")}
        report[name]["disparity_pgm"] = path
    if len(results) == 2:
        report["energy_ratio_submod_over_meanfield"] = (
            results["submod"]["energy"] / results["meanfield"]["energy"]
            if results["meanfield"]["energy"] else None)
    _dump(args.report, report)
    return 0


def cmd_verify(args):
    instance = _load(args)
    kinds = None if args.kind is None else [args.kind]
    checks = run_checks(instance, kinds, seed=args.seed, tamper=args.tamper)
    for check in checks:
        print(check.line())
    return 1 if any(c.status == FAIL for c in checks) else 0


def cmd_exact(args):
    instance = _load(args)
    ex = enumerate_exact(instance)
    _dump(args.output, marginals_document(
        ex.marginals, log_partition=ex.log_partition,
        map_labeling=[int(v) for v in ex.map_labeling], map_energy=ex.map_energy))
    return 0


def cmd_meanfield(args):
    instance = _load(args)
    res = mean_field(instance, args.damping, args.kl_threshold, args.max_sweeps)
    labels = res.marginals.argmax(axis=1)
    _dump(args.output, marginals_document(
        res.marginals, elbo=res.elbo, labeling=[int(v) for v in labels],
        energy=energy_eval(instance, labels)))
    return 0


# -- parser --------------------------------------------------------------------

def _solver_flags(p, step="fixed"):
    p.add_argument("--step", choices=[s.value for s in StepRule], default=step)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--backend", choices=[densekernel.NAIVE, densekernel.LATTICE],
                   default=densekernel.NAIVE)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="submodcrf",
        description="Log-partition upper bounds and marginals for pairwise CRFs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic grid instance")
    p.add_argument("--height", type=int, default=3)
    p.add_argument("--width", type=int, default=3)
    p.add_argument("--labels", type=int, default=3)
    p.add_argument("--unary-max", type=float, default=10.0)
    p.add_argument("--weight", type=float, default=1.0)
    p.add_argument("--metric", choices=METRICS, default="potts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="minimize the upper bound with Frank-Wolfe")
    p.add_argument("instance")
    p.add_argument("--kind", choices=KINDS, default="potts-opt")
    _solver_flags(p)
    p.add_argument("--strict-tree", action="store_true")
    p.add_argument("--trajectory", default="-", help="CSV output path ('-' for stdout)")
    p.add_argument("--marginals", help="JSON output path for marginals and bound")
    p.add_argument("--no-timing", action="store_true", help="write 0 in the seconds column")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("compare", help="compare bounds of several extensions over seeds")
    p.add_argument("instance")
    p.add_argument("--kinds", default="potts-opt,potts-alt")
    p.add_argument("--seeds", default="20", help="count N (0..N-1), range A-B, or list a,b,c")
    p.add_argument("--unary-max", type=float, default=10.0)
    p.add_argument("--keep-unaries", action="store_true",
                   help="use the instance unaries instead of resampling per seed")
    _solver_flags(p)
    p.add_argument("--strict-tree", action="store_true")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("stereo", help="dense-CRF stereo matching on a PGM/PPM pair")
    p.add_argument("left")
    p.add_argument("right")
    p.add_argument("--max-disparity", type=int, required=True)
    p.add_argument("--method", choices=["both", "submod", "meanfield"], default="both")
    p.add_argument("--theta-spatial", type=float, default=3.0)
    p.add_argument("--theta-color", type=float, default=10.0)
    p.add_argument("--kernel-weights", default="1,1",
                   help="bilateral weight, then optional spatial-only weight")
    p.add_argument("--kl-threshold", type=float, default=1e-3)
    p.add_argument("--scale", type=int, default=0, help="PGM gray levels per disparity")
    p.add_argument("--out-prefix", default="disparity")
    p.add_argument("--report", default="-")
    _solver_flags(p, step="line-search")
    p.set_defaults(func=cmd_stereo)

    p = sub.add_parser("verify", help="run the oracle checks on an instance")
    p.add_argument("instance")
    p.add_argument("--kind", choices=KINDS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strict-tree", action="store_true")
    p.add_argument("--tamper", action="store_true",
                   help="negate pairwise capacities (negative control)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("exact", help="brute-force log Z, marginals and MAP")
    p.add_argument("instance")
    p.add_argument("--strict-tree", action="store_true")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("meanfield", help="mean-field marginals and ELBO")
    p.add_argument("instance")
    p.add_argument("--damping", type=float, default=0.0)
    p.add_argument("--kl-threshold", type=float, default=1e-3)
    p.add_argument("--max-sweeps", type=int, default=1000)
    p.add_argument("--strict-tree", action="store_true")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_meanfield)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, FormatError, ModelError, ExtensionError, CapacityError,
            BackendUnavailable, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
