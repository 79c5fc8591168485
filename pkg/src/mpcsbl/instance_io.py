"""JSON instance files.

Schema (``format`` = ``"mpcsbl-instance/1"``)::

    {
      "format": "mpcsbl-instance/1",
      "m": int, "n": int, "l": int,
      "phi":   [m*n floats, row-major],
      "y":     [m*l floats, row-major],
      "truth": [n*l floats, row-major] | null,      (optional)
      "metadata": {"seed": int, "spec": {...}, ...} (optional)
    }

Floats are written with ``repr`` precision, so a save/load round trip is
exact.
"""

import json

import numpy as np

from .model import ProblemInstance

FORMAT = "mpcsbl-instance/1"


def instance_to_dict(inst: ProblemInstance, metadata=None):
    d = {
        "format": FORMAT,
        "m": inst.m,
        "n": inst.n,
        "l": inst.l,
        "phi": inst.phi.ravel().tolist(),
        "y": inst.y_mat.ravel().tolist(),
        "truth": None if inst.truth is None else inst.truth.ravel().tolist(),
    }
    if metadata:
        d["metadata"] = metadata
    return d


def instance_from_dict(d):
    if d.get("format", FORMAT) != FORMAT:
        raise ValueError(f"unsupported instance format {d.get('format')!r}")
    try:
        m, n, l = int(d["m"]), int(d["n"]), int(d["l"])
        phi = np.asarray(d["phi"], dtype=float).reshape(m, n)
        y = np.asarray(d["y"], dtype=float).reshape(m, l)
        truth = d.get("truth")
        if truth is not None:
            truth = np.asarray(truth, dtype=float).reshape(n, l)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed instance: {exc}") from exc
    return ProblemInstance(phi=phi, y_mat=y, truth=truth)


def save_instance(path, inst, metadata=None):
    with open(path, "w") as fh:
        json.dump(instance_to_dict(inst, metadata), fh)
        fh.write("\n")


def load_instance(path):
    with open(path) as fh:
        return instance_from_dict(json.load(fh))
