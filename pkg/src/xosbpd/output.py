"""Snapshot (legacy ASCII VTK) and probe (CSV) writers, plus their readers."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .discretization import NodeSet

FLOAT_FMT = "{:.9g}"

# quantity key -> (VTK array name, vector?)
VTK_FIELDS = {
    "u": ("displacement", True),
    "v": ("velocity", True),
    "phi": ("damage", False),
    "theta": ("dilatation", False),
    "sed": ("sed", False),
}


def _fmt(x):
    return FLOAT_FMT.format(float(x))


def snapshot_path(directory, step, prefix="snapshot"):
    return Path(directory) / f"{prefix}_{step:08d}.vtk"


def _pad3(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[1] < 3:
        a = np.hstack([a, np.zeros((a.shape[0], 3 - a.shape[1]))])
    return a


def write_snapshot(directory, nodes: NodeSet, fields: dict, step, quantities=None,
                   title="xosbpd snapshot", prefix="snapshot"):
    """Write one point-cloud VTK file; returns its path.

    ``fields`` maps quantity keys (u, v, phi, theta, sed) to per-node arrays.
    Every requested quantity must be present.
    """
    quantities = list(fields) if quantities is None else list(quantities)
    n = nodes.n_nodes
    path = snapshot_path(directory, step, prefix)
    buf = io.StringIO()
    buf.write("# vtk DataFile Version 3.0\n")
    buf.write(title.replace("\n", " ")[:255] + "\n")
    buf.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
    buf.write(f"POINTS {n} double\n")
    for row in _pad3(nodes.positions):
        buf.write(" ".join(map(_fmt, row)) + "\n")
    buf.write(f"CELLS {n} {2 * n}\n")
    for i in range(n):
        buf.write(f"1 {i}\n")
    buf.write(f"CELL_TYPES {n}\n")
    buf.write("1\n" * n)
    buf.write(f"POINT_DATA {n}\n")
    for q in quantities:
        if q not in VTK_FIELDS:
            raise ValueError(f"unknown quantity {q!r}")
        if q not in fields or fields[q] is None:
            raise ValueError(f"snapshot is missing quantity {q!r}")
        name, vector = VTK_FIELDS[q]
        data = np.asarray(fields[q], dtype=float)
        if data.shape[0] != n:
            raise ValueError(f"{q}: {data.shape[0]} values for {n} nodes")
        if vector:
            buf.write(f"VECTORS {name} double\n")
            for row in _pad3(data):
                buf.write(" ".join(map(_fmt, row)) + "\n")
        else:
            buf.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            buf.write("\n".join(map(_fmt, data.ravel())) + "\n")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(buf.getvalue(), encoding="ascii")
    except OSError as exc:
        raise OSError(f"cannot write snapshot {path}: {exc}") from exc
    return path


def read_snapshot(path):
    """Parse a file written by :func:`write_snapshot`.

    Returns ``(points, arrays)`` with arrays keyed by VTK name.
    """
    tokens = Path(path).read_text(encoding="ascii").split("\n")
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(tokens) and not tokens[pos].strip():
            pos += 1
        line = tokens[pos]
        pos += 1
        return line

    next_line()
    next_line()
    if next_line().strip() != "ASCII":
        raise ValueError(f"{path}: only ASCII VTK is supported")
    if next_line().split()[1] != "UNSTRUCTURED_GRID":
        raise ValueError(f"{path}: expected an UNSTRUCTURED_GRID dataset")
    head = next_line().split()
    n = int(head[1])
    points = np.array([next_line().split() for _ in range(n)], dtype=float)
    arrays = {}
    while pos < len(tokens):
        line = next_line() if any(t.strip() for t in tokens[pos:]) else ""
        if not line:
            break
        parts = line.split()
        key = parts[0]
        if key == "CELLS":
            for _ in range(int(parts[1])):
                next_line()
        elif key == "CELL_TYPES":
            for _ in range(int(parts[1])):
                next_line()
        elif key == "POINT_DATA":
            continue
        elif key == "VECTORS":
            arrays[parts[1]] = np.array([next_line().split() for _ in range(n)], dtype=float)
        elif key == "SCALARS":
            next_line()  # LOOKUP_TABLE
            arrays[parts[1]] = np.array([next_line() for _ in range(n)], dtype=float)
        else:
            raise ValueError(f"{path}: unexpected section {key!r}")
    return points, arrays


def snapshot_title(path):
    """Second header line of a VTK file (run id and time for files written here)."""
    with Path(path).open(encoding="ascii") as fh:
        fh.readline()
        return fh.readline().strip()


def snapshot_fields(arrays: dict, dim):
    """Map VTK arrays back to quantity keys, trimming vectors to ``dim``."""
    out = {}
    for q, (name, vector) in VTK_FIELDS.items():
        if name in arrays:
            out[q] = arrays[name][:, :dim] if vector else arrays[name]
    return out


# ---------------------------------------------------------------------------
# probes

@dataclass
class ProbeSample:
    label: float       # beta in degrees (arc), arc length (line) or 0 (point)
    point: np.ndarray
    node: int | None


def probe_points(probe, dim):
    """Sample coordinates and labels for a probe config section."""
    if probe.kind == "arc":
        beta = np.arange(probe.samples) * (360.0 / probe.samples)
        b = np.radians(beta)
        c = np.asarray(probe.center, dtype=float)
        pts = np.column_stack([c[0] + probe.radius * np.cos(b), c[1] + probe.radius * np.sin(b)])
        if dim == 3:
            pts = np.column_stack([pts, np.full(pts.shape[0], float(probe.z))])
        return beta, pts
    if probe.kind == "point":
        return np.zeros(1), np.asarray(probe.position, dtype=float)[None, :]
    a = np.asarray(probe.start, dtype=float)
    b = np.asarray(probe.end, dtype=float)
    t = np.linspace(0.0, 1.0, probe.samples) if probe.samples > 1 else np.zeros(1)
    return t * np.linalg.norm(b - a), a[None, :] + t[:, None] * (b - a)[None, :]


def sample_probe(probe, nodes: NodeSet, tree=None):
    """Nearest node per sample, accepted only within that node's char length."""
    from scipy.spatial import cKDTree

    labels, pts = probe_points(probe, nodes.dimension)
    tree = cKDTree(nodes.positions) if tree is None else tree
    dist, idx = tree.query(pts)
    samples = []
    missing = 0
    for lab, p, d, i in zip(labels, pts, dist, idx):
        ok = d <= nodes.char_length[i]
        missing += not ok
        samples.append(ProbeSample(float(lab), p, int(i) if ok else None))
    if missing:
        warnings.warn(f"probe {probe.name!r}: {missing} sample(s) have no node within one "
                      "characteristic length; their rows are left empty", stacklevel=2)
    return samples


def _columns(q, dim):
    if q in ("u", "v"):
        return [f"{q}_{a}" for a in "xyz"[:dim]]
    return [q]


def write_probe(path, probe, samples, nodes: NodeSet, fields: dict, meta: dict):
    """CSV with ``#`` metadata lines, one row per sample."""
    dim = nodes.dimension
    label = {"arc": "beta_deg", "line": "s", "point": "index"}[probe.kind]
    header = [label, "node"] + list("xyz"[:dim])
    for q in probe.quantities:
        header += _columns(q, dim)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            for k, v in meta.items():
                fh.write(f"# {k}: {v}\n")
            w = csv.writer(fh)
            w.writerow(header)
            for s in samples:
                row = [_fmt(s.label)]
                if s.node is None:
                    row += [""] * (len(header) - 1)
                else:
                    row += [str(s.node)] + [_fmt(x) for x in nodes.positions[s.node]]
                    for q in probe.quantities:
                        val = np.asarray(fields[q][s.node], dtype=float).ravel()
                        row += [_fmt(x) for x in val]
                w.writerow(row)
    except OSError as exc:
        raise OSError(f"cannot write probe {path}: {exc}") from exc
    return path


def read_probe(path):
    """Return ``(meta, header, rows)``; empty fields come back as NaN."""
    meta, lines = {}, []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                meta[key.strip()] = value.strip()
            else:
                lines.append(line)
    reader = csv.reader(lines)
    header = next(reader)
    rows = np.array([[float(x) if x != "" else np.nan for x in r] for r in reader if r],
                    dtype=float).reshape(-1, len(header))
    return meta, header, rows
