"""Instance documents (JSON) and CSV / marginal outputs.

Instance document::

    {
      "num_variables": N,
      "num_labels": L,
      "unaries": [[...L reals...], ...N rows],
      "edges": [[a, b, w], ...],                      # sparse, or
      "dense": {"components": [{"weight": w, "features": [[...d...], ...N rows]}]},
      "metric": "potts"  |  {"tree": [[parent, edge_length], ...]}
    }

Labels and variables are 0-based. In a tree, the root has parent ``null``
(its edge length is ignored) and the leaves, in ascending node order, are
labels 0..L-1.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import jsonschema
import numpy as np

from .densekernel import KernelMixture
from .model import CrfInstance, HierTree, ModelError

FLOAT_FORMAT = "{:.17g}"

_number = {"type": "number"}
_row = {"type": "array", "items": _number, "minItems": 1}

INSTANCE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["num_variables", "num_labels", "unaries", "metric"],
    "properties": {
        "num_variables": {"type": "integer", "minimum": 1},
        "num_labels": {"type": "integer", "minimum": 1},
        "unaries": {"type": "array", "items": _row, "minItems": 1},
        "edges": {
            "type": "array",
            "items": {"type": "array", "prefixItems": [
                {"type": "integer", "minimum": 0},
                {"type": "integer", "minimum": 0},
                {"type": "number", "minimum": 0}], "minItems": 3, "maxItems": 3},
        },
        "dense": {
            "type": "object",
            "required": ["components"],
            "properties": {"components": {
                "type": "array", "minItems": 1,
                "items": {"type": "object", "required": ["weight", "features"],
                          "properties": {"weight": {"type": "number", "minimum": 0},
                                         "features": {"type": "array", "items": _row}}},
            }},
        },
        "metric": {"oneOf": [
            {"const": "potts"},
            {"type": "object", "required": ["tree"], "properties": {"tree": {
                "type": "array", "minItems": 2,
                "items": {"type": "array", "minItems": 2, "maxItems": 2, "prefixItems": [
                    {"type": ["integer", "null"]}, {"type": ["number", "null"]}]}}}},
        ]},
    },
    "oneOf": [{"required": ["edges"]}, {"required": ["dense"]}],
}


class FormatError(ValueError):
    pass


def instance_to_dict(instance: CrfInstance) -> dict:
    doc = {
        "num_variables": instance.num_variables,
        "num_labels": instance.num_labels,
        "unaries": instance.unaries.tolist(),
    }
    if instance.is_dense:
        doc["dense"] = {"components": [
            {"weight": w, "features": f.tolist()}
            for w, f in zip(instance.kernel.weights, instance.kernel.features)]}
    else:
        doc["edges"] = [[int(a), int(b), float(w)]
                        for (a, b), w in zip(instance.edges, instance.weights)]
    if instance.tree is None:
        doc["metric"] = "potts"
    else:
        doc["metric"] = {"tree": [[p, length] for p, length in instance.tree.to_nodes()]}
    return doc


def instance_from_dict(doc: dict) -> CrfInstance:
    try:
        jsonschema.Draft202012Validator(INSTANCE_SCHEMA).validate(doc)
    except jsonschema.ValidationError as exc:
        raise FormatError(f"invalid instance document: {exc.message}") from None
    phi = np.asarray(doc["unaries"], dtype=float)
    if phi.shape != (doc["num_variables"], doc["num_labels"]):
        raise FormatError(
            f"unaries have shape {phi.shape}, expected "
            f"({doc['num_variables']}, {doc['num_labels']})")
    tree = None
    if doc["metric"] != "potts":
        tree = HierTree.from_nodes([tuple(node) for node in doc["metric"]["tree"]])
    try:
        if "edges" in doc:
            return CrfInstance.sparse(phi, [tuple(e) for e in doc["edges"]], tree=tree)
        comps = doc["dense"]["components"]
        mixture = KernelMixture(tuple(c["weight"] for c in comps),
                                tuple(np.asarray(c["features"], dtype=float) for c in comps))
        return CrfInstance.dense(phi, mixture, tree=tree)
    except ModelError as exc:
        raise FormatError(str(exc)) from None


def write_instance(path, instance: CrfInstance):
    Path(path).write_text(json.dumps(instance_to_dict(instance), indent=1) + "\n")


def read_instance(path) -> CrfInstance:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read instance {path}: {exc}") from None
    return instance_from_dict(doc)


def fmt(value) -> str:
    return FLOAT_FORMAT.format(float(value))


def trajectory_csv(trajectory) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["iter", "bound", "gap", "step", "seconds"])
    for r in trajectory.records:
        writer.writerow([r.k, fmt(r.bound), fmt(r.gap), fmt(r.step), fmt(r.seconds)])
    return buf.getvalue()


def read_trajectory_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {key: np.array([float(r[key]) for r in rows]) for key in rows[0]} if rows else {}


def marginals_document(q, bound: float | None = None, **extra) -> dict:
    doc = {"marginals": [[float(v) for v in row] for row in np.asarray(q)]}
    if bound is not None:
        doc["bound"] = float(bound)
    doc.update(extra)
    return doc
