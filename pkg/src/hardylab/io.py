"""Serialization: node CSV snapshots, JSON sidecars, report rendering.

CSV column orders are frozen: radial fields are (r, value, tag); tensor2d
fields are (x, y, value, tag).  Floats print with repr-faithful %.17g so
reruns with identical inputs are byte-identical.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .mesh import TAG_NAMES, Mesh, ScalarField


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def field_to_csv(field: ScalarField, path) -> None:
    mesh = field.mesh
    lines = []
    if mesh.kind == "radial":
        lines.append("r,value,tag")
        for r, v, t in zip(mesh.nodes, field.values, mesh.boundary_tags):
            lines.append(f"{_fmt(r)},{_fmt(v)},{TAG_NAMES[int(t)]}")
    else:
        lines.append("x,y,value,tag")
        for (x, y), v, t in zip(mesh.nodes, field.values,
                                mesh.boundary_tags):
            lines.append(f"{_fmt(x)},{_fmt(y)},{_fmt(v)},"
                         f"{TAG_NAMES[int(t)]}")
    Path(path).write_text("\n".join(lines) + "\n")


def field_from_csv(mesh: Mesh, path) -> ScalarField:
    rows = Path(path).read_text().strip().splitlines()[1:]
    col = 1 if mesh.kind == "radial" else 2
    vals = np.array([float(row.split(",")[col]) for row in rows])
    return ScalarField(mesh, vals)


def table_to_csv(rows: list, path, columns=None) -> None:
    if not rows:
        Path(path).write_text("\n")
        return
    columns = columns or list(rows[0].keys())
    lines = [",".join(columns)]
    for row in rows:
        cells = []
        for c in columns:
            v = row.get(c)
            if isinstance(v, float):
                cells.append(_fmt(v))
            else:
                cells.append("" if v is None else str(v))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True,
                                     default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serializable: {type(o)}")


def render_report_text(reports: list) -> str:
    """Aligned-column human rendering of verification reports."""
    name_w = max([len(r.check_name) for r in reports], default=4) + 2
    lines = [f"{'check':<{name_w}}{'statistic':>14}{'threshold':>14}"
             f"{'dir':>5}  result"]
    for r in reports:
        lines.append(
            f"{r.check_name:<{name_w}}{r.statistic:>14.6g}"
            f"{r.threshold:>14.6g}{r.direction:>5}  "
            f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines) + "\n"
