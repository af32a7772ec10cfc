"""Legacy ASCII VTK output and small delimited-file helpers.

The VTK file is an UNSTRUCTURED_GRID of 6-node quadratic triangles (cell
type 22).  Points are duplicated per fluid along the interface so that the
per-fluid pressure stays single valued, and periodic copies keep their
geometric position.  Point data: ``velocity`` (3-vector, z = 0) and
``pressure``; cell data: ``subdomain``.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .fem import MixedField

VTK_QUADRATIC_TRIANGLE = 22


class VTKError(ValueError):
    pass


def _fmt(x: float) -> str:
    return repr(float(x))


def vtk_arrays(field: MixedField) -> dict[str, np.ndarray]:
    space = field.space
    mesh = space.mesh
    ids: dict[tuple, int] = {}
    pts, vel, pre = [], [], []
    nodal = field.nodal_velocity()
    cells = np.empty((mesh.n_triangles, 6), dtype=np.int64)
    for t, tri in enumerate(mesh.triangles):
        tag = int(mesh.tags[t])
        pv = field.pressure[space.p_cells[t]]
        for k in range(6):
            if k < 3:
                key = ("v", int(tri[k]), tag)
                xy = mesh.nodes[tri[k]]
                p = pv[k]
            else:
                a, b = int(tri[k - 3]), int(tri[(k - 2) % 3])
                key = ("e", min(a, b), max(a, b), tag)
                xy = 0.5 * (mesh.nodes[a] + mesh.nodes[b])
                p = 0.5 * (pv[k - 3] + pv[(k - 2) % 3])
            if key not in ids:
                ids[key] = len(pts)
                pts.append(xy)
                vel.append(nodal[space.v_cells[t, k]])
                pre.append(p)
            cells[t, k] = ids[key]
    return {
        "points": np.array(pts),
        "cells": cells,
        "velocity": np.array(vel),
        "pressure": np.array(pre),
        "subdomain": mesh.tags.astype(np.int64),
    }


def write_vtk(path, field: MixedField, title: str = "hbflow solution") -> None:
    d = vtk_arrays(field)
    pts, cells = d["points"], d["cells"]
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {len(pts)} double"]
    lines += [f"{_fmt(x)} {_fmt(y)} 0.0" for x, y in pts]
    lines.append(f"CELLS {len(cells)} {7 * len(cells)}")
    lines += ["6 " + " ".join(str(int(i)) for i in c) for c in cells]
    lines.append(f"CELL_TYPES {len(cells)}")
    lines += [str(VTK_QUADRATIC_TRIANGLE)] * len(cells)
    lines.append(f"CELL_DATA {len(cells)}")
    lines += ["SCALARS subdomain int 1", "LOOKUP_TABLE default"]
    lines += [str(int(t)) for t in d["subdomain"]]
    lines.append(f"POINT_DATA {len(pts)}")
    lines.append("VECTORS velocity double")
    lines += [f"{_fmt(u)} {_fmt(v)} 0.0" for u, v in d["velocity"]]
    lines += ["SCALARS pressure double 1", "LOOKUP_TABLE default"]
    lines += [_fmt(p) for p in d["pressure"]]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk(path) -> dict[str, np.ndarray]:
    """Parse a file written by :func:`write_vtk`."""
    tokens = Path(path).read_text().split("\n")
    if not tokens or not tokens[0].startswith("# vtk DataFile"):
        raise VTKError(f"{path}: not a legacy VTK file")
    if len(tokens) < 4 or tokens[2].strip() != "ASCII" or tokens[3].strip() != "DATASET UNSTRUCTURED_GRID":
        raise VTKError(f"{path}: expected an ASCII unstructured grid")
    it = iter(tokens[4:])
    out: dict[str, np.ndarray] = {}

    def take(n):
        rows = []
        for _ in range(n):
            try:
                rows.append(next(it).split())
            except StopIteration:
                raise VTKError(f"{path}: unexpected end of file") from None
        return rows

    def array(rows, dtype=float):
        try:
            return np.array(rows, dtype=dtype)
        except ValueError:
            raise VTKError(f"{path}: malformed numeric block") from None

    section = None
    for line in it:
        parts = line.split()
        if not parts:
            continue
        head = parts[0]
        if head == "POINTS":
            out["points"] = array(take(int(parts[1])))[:, :2]
        elif head == "CELLS":
            rows = take(int(parts[1]))
            if any(int(r[0]) != 6 for r in rows):
                raise VTKError(f"{path}: only 6-node triangles are supported")
            out["cells"] = array([r[1:] for r in rows], np.int64)
        elif head == "CELL_TYPES":
            out["cell_types"] = array(take(int(parts[1])), np.int64).ravel()
        elif head in ("CELL_DATA", "POINT_DATA"):
            section = (head, int(parts[1]))
        elif head == "SCALARS":
            if section is None:
                raise VTKError(f"{path}: data before CELL_DATA/POINT_DATA")
            take(1)  # lookup table line
            vals = array(take(section[1])).ravel()
            out[parts[1]] = vals.astype(np.int64) if parts[2] == "int" else vals
        elif head == "VECTORS":
            if section is None:
                raise VTKError(f"{path}: data before CELL_DATA/POINT_DATA")
            out[parts[1]] = array(take(section[1]))[:, :2]
        else:
            raise VTKError(f"{path}: unexpected line {line!r}")
    for key in ("points", "cells", "velocity", "pressure", "subdomain"):
        if key not in out:
            raise VTKError(f"{path}: missing {key}")
    return out


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV file")
    width = len(rows[0])
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != width:
            raise ValueError(f"{path}:{i}: expected {width} columns, got {len(r)}")
    return rows[0], rows[1:]


def write_summary(path, items: dict) -> None:
    """``key = value`` lines, one per entry."""
    with open(path, "w") as fh:
        for k, v in items.items():
            if isinstance(v, (float, np.floating)):
                v = repr(float(v))
            fh.write(f"{k} = {v}\n")


def read_summary(path) -> dict[str, str]:
    out = {}
    for i, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        if " = " not in line:
            raise ValueError(f"{path}:{i}: expected 'key = value'")
        k, v = line.split(" = ", 1)
        out[k.strip()] = v.strip()
    return out
