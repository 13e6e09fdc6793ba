"""Field files: one JSON header line, then one CSV row per node in row-major order.

Values are written with 17 significant digits so a write/read cycle is
bit-exact.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .fields import Grid, ScalarChartField, SymmetricVectorField
from .profiles import Profile

FORMAT = "beltrami-field/1"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def format_rows(columns) -> str:
    cols = [np.asarray(c, dtype=float).ravel() for c in columns]
    return "".join(",".join(_fmt(v) for v in row) + "\n" for row in zip(*cols))


def write_field(path, obj) -> Path:
    """Write a ScalarChartField or SymmetricVectorField."""
    path = Path(path)
    if isinstance(obj, ScalarChartField):
        header = {"format": FORMAT, "kind": "scalar", **obj.grid.header(), "components": [obj.name]}
        columns = [obj.values]
    elif isinstance(obj, SymmetricVectorField):
        header = {
            "format": FORMAT,
            "kind": "vector",
            "symmetry": obj.symmetry,
            "name": obj.name,
            **obj.grid.header(),
            "components": [c.name for c in obj.components],
        }
        if obj.profile is not None:
            header["profile"] = obj.profile.to_spec()
        columns = obj.arrays()
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    with open(path, "w", newline="") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        fh.write(format_rows(columns))
    return path


def read_field(path):
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("format") != FORMAT:
            raise ValueError(f"{path}: not a field file")
        rows = [line.split(",") for line in fh if line.strip()]
    grid = Grid(header["chart"], header["origin"], header["spacing"], header["shape"])
    names = header["components"]
    n = int(np.prod(grid.shape))
    if len(rows) != n or any(len(r) != len(names) for r in rows):
        raise ValueError(f"{path}: expected {n} rows of {len(names)} values")
    data = np.array([[float(v) for v in r] for r in rows], dtype=float)
    fields = [grid.field(data[:, k].reshape(grid.shape), name) for k, name in enumerate(names)]
    if header["kind"] == "scalar":
        return fields[0]
    profile = Profile.from_spec(header["profile"]) if "profile" in header else None
    return SymmetricVectorField(header["symmetry"], tuple(fields), profile, header.get("name", "u"))
