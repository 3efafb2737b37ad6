"""Particle discretization: node clouds, families and pre-crack bond removal.

Nodes carry a cell measure (area in 2-D, volume in 3-D), a characteristic
length ``sqrt(A)`` / ``cbrt(V)`` and a horizon radius ``m_factor`` times that
length.  Families follow the union rule: ``j`` is bonded to ``i`` when their
distance is within either node's horizon, which keeps the bond graph
symmetric for mixed horizon sizes.

Bonds are stored once per direction in CSR order (grouped by owner node,
neighbors ascending), with ``reverse[b]`` pointing at the opposite bond.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateBond, EmptyDomain, InvalidMeasure, IsolatedNode, ParseError

DEFAULT_M_FACTOR = 3.01


def characteristic_length(measure, dimension):
    measure = np.asarray(measure, dtype=float)
    if dimension == 2:
        return np.sqrt(measure)
    return np.cbrt(measure)


@dataclass(frozen=True)
class NodeSet:
    positions: np.ndarray
    cell_measure: np.ndarray
    char_length: np.ndarray
    horizon_radius: np.ndarray
    thickness: float = 1.0

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] not in (2, 3):
            raise ValueError(f"positions must be (n, 2) or (n, 3), got {pos.shape}")
        meas = np.ascontiguousarray(self.cell_measure, dtype=float)
        if meas.shape != (pos.shape[0],):
            raise ValueError("cell_measure must have one entry per node")
        if np.any(~(meas > 0)):
            bad = int(np.flatnonzero(~(meas > 0))[0])
            raise InvalidMeasure(f"node {bad}: cell measure must be positive, got {meas[bad]}")
        hor = np.ascontiguousarray(self.horizon_radius, dtype=float)
        if np.any(~(hor > 0)):
            raise InvalidMeasure("horizon radii must be positive")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "cell_measure", meas)
        object.__setattr__(self, "char_length", np.ascontiguousarray(self.char_length, dtype=float))
        object.__setattr__(self, "horizon_radius", hor)

    @classmethod
    def from_measures(cls, positions, measure, m_factor=DEFAULT_M_FACTOR, thickness=1.0):
        positions = np.asarray(positions, dtype=float)
        measure = np.asarray(measure, dtype=float)
        if np.any(~(measure > 0)):
            bad = int(np.flatnonzero(~(measure > 0))[0])
            raise InvalidMeasure(f"node {bad}: cell measure must be positive, got {measure[bad]}")
        dx = characteristic_length(measure, positions.shape[1])
        return cls(positions, measure, dx, m_factor * dx, thickness)

    @property
    def dimension(self) -> int:
        return self.positions.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.positions.shape[0]

    @property
    def volume(self) -> np.ndarray:
        """Physical volume per node (area times thickness in 2-D)."""
        if self.dimension == 2:
            return self.cell_measure * self.thickness
        return self.cell_measure


@dataclass(frozen=True)
class FamilyGraph:
    offsets: np.ndarray
    neighbors: np.ndarray
    bond_xi: np.ndarray
    bond_len: np.ndarray
    reverse: np.ndarray
    broken: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.broken is None:
            object.__setattr__(self, "broken", np.zeros(self.neighbors.shape[0], dtype=bool))

    @property
    def n_nodes(self) -> int:
        return self.offsets.shape[0] - 1

    @property
    def n_bonds(self) -> int:
        return self.neighbors.shape[0]

    @property
    def owner(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_nodes), np.diff(self.offsets))

    def family(self, i) -> np.ndarray:
        return self.neighbors[self.offsets[i]:self.offsets[i + 1]]

    def family_sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    def adjacency(self):
        """Sparse boolean adjacency (for checks; not used by the solvers)."""
        from scipy.sparse import csr_matrix

        n = self.n_nodes
        data = np.ones(self.n_bonds, dtype=bool)
        return csr_matrix((data, self.neighbors, self.offsets), shape=(n, n))


@dataclass(frozen=True)
class CrackSegment:
    """Pre-existing crack: a segment in 2-D, a planar polygon in 3-D."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        object.__setattr__(self, "points", pts)
        if pts.shape[1] == 2:
            if pts.shape[0] != 2 or np.linalg.norm(pts[1] - pts[0]) <= 0:
                raise ValueError("2-D crack needs two distinct endpoints")
        elif pts.shape[1] == 3:
            if pts.shape[0] < 3 or np.linalg.norm(_polygon_normal(pts)) <= 0:
                raise ValueError("3-D crack needs a non-degenerate planar polygon")
        else:
            raise ValueError("crack points must be 2-D or 3-D")

    @property
    def dimension(self) -> int:
        return self.points.shape[1]


# ---------------------------------------------------------------------------
# node generators

def generate_uniform_grid(box, spacing, dimension=None, thickness=1.0, m_factor=DEFAULT_M_FACTOR):
    """Cell-centred nodes on an axis-aligned box.

    ``box`` is a sequence of ``(lo, hi)`` pairs, one per axis.
    """
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    if dimension is None:
        dimension = box.shape[0]
    if box.shape[0] != dimension:
        raise ValueError(f"box has {box.shape[0]} axes but dimension is {dimension}")
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    extent = box[:, 1] - box[:, 0]
    counts = np.floor(extent / spacing + 1e-9).astype(int)
    if np.any(extent <= 0) or np.any(counts <= 0):
        raise EmptyDomain(f"box {box.tolist()} holds no cell of size {spacing}")
    axes = [box[k, 0] + (np.arange(counts[k]) + 0.5) * spacing for k in range(dimension)]
    # x varies fastest
    mesh = np.meshgrid(*axes[::-1], indexing="ij")
    positions = np.column_stack([m.ravel() for m in mesh[::-1]])
    measure = np.full(positions.shape[0], spacing ** dimension)
    nodes = NodeSet.from_measures(positions, measure, m_factor, thickness)
    object.__setattr__(nodes, "char_length", np.full(positions.shape[0], float(spacing)))
    object.__setattr__(nodes, "horizon_radius", m_factor * nodes.char_length)
    return nodes


def _geometric_ratio(n, first_fraction):
    """Ratio g with first_fraction * (g**n - 1) / (g - 1) == 1."""
    if first_fraction * n >= 1.0:
        return 1.0

    def total(g):
        return first_fraction * (g ** n - 1.0) / (g - 1.0)

    lo, hi = 1.0 + 1e-12, 2.0
    while total(hi) < 1.0:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if total(mid) < 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _square_perimeter_points(n, half):
    """n points equally spaced along the square boundary, starting at (half, 0)."""
    s = np.arange(n) * (8.0 * half / n)
    pts = np.empty((n, 2))
    # walk counter-clockwise starting at the midpoint of the right edge
    s = (s + half) % (8.0 * half)
    for k, sk in enumerate(s):
        side, t = divmod(sk, 2.0 * half)
        t -= half
        if side == 0:
            pts[k] = (half, t)
        elif side == 1:
            pts[k] = (-t, half)
        elif side == 2:
            pts[k] = (-half, -t)
        else:
            pts[k] = (t, -half)
    return pts


def ogrid_plate_cells(length=1.0, radius=0.1, n_theta=96, n_radial=32):
    """Quadrilateral O-grid between a centred circular hole and the square edge.

    Radial spacing is graded geometrically so cells next to the hole are
    roughly square.  Returns ``(vertices, quads)`` with ``vertices`` shaped
    ``(n_radial + 1, n_theta, 2)``.
    """
    if n_theta % 8:
        raise ValueError("n_theta must be a multiple of 8 so the grid is symmetric")
    half = 0.5 * length
    outer = _square_perimeter_points(n_theta, half)
    phi = np.arctan2(outer[:, 1], outer[:, 0])
    inner = radius * np.column_stack([np.cos(phi), np.sin(phi)])
    first = (2.0 * np.pi * radius / n_theta) / (half - radius)
    g = _geometric_ratio(n_radial, first)
    if g == 1.0:
        s = np.linspace(0.0, 1.0, n_radial + 1)
    else:
        s = (g ** np.arange(n_radial + 1) - 1.0) / (g ** n_radial - 1.0)
    verts = (1.0 - s)[:, None, None] * inner[None] + s[:, None, None] * outer[None]
    return verts


def _quad_centroids(verts):
    """Centroids and areas of the quads of a (nr+1, nt, 2) periodic vertex grid."""
    p0 = verts[:-1]
    p1 = np.roll(verts[:-1], -1, axis=1)
    p2 = np.roll(verts[1:], -1, axis=1)
    p3 = verts[1:]
    poly = np.stack([p0, p1, p2, p3], axis=2)  # (nr, nt, 4, 2)
    x, y = poly[..., 0], poly[..., 1]
    xn, yn = np.roll(x, -1, axis=2), np.roll(y, -1, axis=2)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum(axis=2)
    cx = ((x + xn) * cross).sum(axis=2) / (6.0 * area)
    cy = ((y + yn) * cross).sum(axis=2) / (6.0 * area)
    return np.column_stack([cx.ravel(), cy.ravel()]), np.abs(area).ravel()


def generate_plate_with_hole(length=1.0, radius=0.1, n_theta=96, n_radial=32,
                             thickness=1.0, m_factor=DEFAULT_M_FACTOR):
    """Graded non-uniform node cloud for a square plate with a central hole."""
    verts = ogrid_plate_cells(length, radius, n_theta, n_radial)
    centers, area = _quad_centroids(verts)
    return NodeSet.from_measures(centers, area, m_factor, thickness)


def generate_block_with_hole(length=1.0, radius=0.1, depth=0.3, n_theta=48, n_radial=16,
                             n_depth=12, m_factor=DEFAULT_M_FACTOR):
    """The plate O-grid extruded along z (z from 0 to depth)."""
    verts = ogrid_plate_cells(length, radius, n_theta, n_radial)
    centers, area = _quad_centroids(verts)
    dz = depth / n_depth
    z = (np.arange(n_depth) + 0.5) * dz
    pos = np.column_stack([
        np.tile(centers, (n_depth, 1)),
        np.repeat(z, centers.shape[0]),
    ])
    vol = np.tile(area, n_depth) * dz
    return NodeSet.from_measures(pos, vol, m_factor)


# ---------------------------------------------------------------------------
# node file I/O

def load_nodes(path, m_factor=DEFAULT_M_FACTOR, thickness=1.0):
    """Read ``id,x,y[,z],measure`` records; ``#`` starts a comment."""
    path = Path(path)
    rows = []
    ncols = None
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) not in (4, 5):
                raise ParseError(f"expected 4 or 5 fields, got {len(parts)}", lineno)
            if ncols is None:
                ncols = len(parts)
            elif len(parts) != ncols:
                raise ParseError(f"mixed dimensions: expected {ncols} fields, got {len(parts)}", lineno)
            try:
                values = [float(p) for p in parts[1:]]
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            if not all(math.isfinite(v) for v in values):
                raise ParseError("non-finite value", lineno)
            if not values[-1] > 0:
                raise InvalidMeasure(f"line {lineno}: measure must be positive, got {values[-1]}")
            rows.append(values)
    if not rows:
        raise EmptyDomain(f"{path} contains no node records")
    arr = np.asarray(rows)
    return NodeSet.from_measures(arr[:, :-1], arr[:, -1], m_factor, thickness)


def write_nodes(path, nodes: NodeSet):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# id,x,y" + (",z" if nodes.dimension == 3 else "") + ",measure\n")
        for i, (p, a) in enumerate(zip(nodes.positions, nodes.cell_measure)):
            fh.write(",".join([str(i)] + [repr(float(c)) for c in p] + [repr(float(a))]) + "\n")


# ---------------------------------------------------------------------------
# families

def _csr_from_pairs(n, i, j, positions):
    """Directed CSR bonds from unordered pairs (both directions emitted)."""
    src = np.concatenate([i, j])
    dst = np.concatenate([j, i])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=offsets[1:])
    key = src.astype(np.int64) * n + dst
    rkey = dst.astype(np.int64) * n + src
    reverse = np.searchsorted(key, rkey)
    xi = positions[dst] - positions[src]
    length = np.sqrt(np.einsum("ij,ij->i", xi, xi))
    return FamilyGraph(offsets, dst.astype(np.int64), xi, length, reverse.astype(np.int64))


def build_families(nodes: NodeSet) -> FamilyGraph:
    """Union-rule families; neighbor candidates come from a k-d tree at max horizon."""
    pos = nodes.positions
    n = nodes.n_nodes
    delta = nodes.horizon_radius
    tree = cKDTree(pos)
    pairs = tree.query_pairs(r=float(delta.max()) * (1 + 1e-12), output_type="ndarray")
    if pairs.size == 0:
        pairs = np.empty((0, 2), dtype=np.int64)
    i, j = pairs[:, 0], pairs[:, 1]
    dist = np.linalg.norm(pos[j] - pos[i], axis=1)
    if np.any(dist == 0.0):
        k = int(np.flatnonzero(dist == 0.0)[0])
        raise DegenerateBond(f"nodes {i[k]} and {j[k]} coincide")
    keep = (dist <= delta[i]) | (dist <= delta[j])
    graph = _csr_from_pairs(n, i[keep], j[keep], pos)
    isolated = np.flatnonzero(graph.family_sizes() == 0)
    if isolated.size:
        warnings.warn(IsolatedNode(isolated.tolist()), stacklevel=2)
    return graph


# ---------------------------------------------------------------------------
# pre-cracks

def _polygon_normal(pts):
    c = pts.mean(axis=0)
    n = np.zeros(3)
    for a, b in zip(pts, np.roll(pts, -1, axis=0)):
        n += np.cross(a - c, b - c)
    return n


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _segment_hits_2d(p, q, c0, c1, rel_tol):
    """Strict crossing of bonds [p, q] with segment [c0, c1]."""
    xi = q - p
    # signed distances of the bond endpoints from the crack line
    cdir = c1 - c0
    clen = np.linalg.norm(cdir)
    blen = np.linalg.norm(xi, axis=1)
    tol = rel_tol * blen
    d_p = _cross2(cdir, p - c0) / clen
    d_q = _cross2(cdir, q - c0) / clen
    # signed distances of the crack endpoints from the bond line
    e0 = _cross2(xi, c0 - p) / blen
    e1 = _cross2(xi, c1 - p) / blen
    return (
        (d_p * d_q < 0) & (np.abs(d_p) > tol) & (np.abs(d_q) > tol)
        & (e0 * e1 < 0) & (np.abs(e0) > tol) & (np.abs(e1) > tol)
    )


def _segment_hits_3d(p, q, poly, rel_tol):
    normal = _polygon_normal(poly)
    normal /= np.linalg.norm(normal)
    origin = poly.mean(axis=0)
    blen = np.linalg.norm(q - p, axis=1)
    tol = rel_tol * blen
    d_p = (p - origin) @ normal
    d_q = (q - origin) @ normal
    cand = (d_p * d_q < 0) & (np.abs(d_p) > tol) & (np.abs(d_q) > tol)
    hits = np.zeros(p.shape[0], dtype=bool)
    if not cand.any():
        return hits
    t = d_p[cand] / (d_p[cand] - d_q[cand])
    x = p[cand] + t[:, None] * (q[cand] - p[cand])
    # in-plane basis
    e1 = poly[1] - poly[0]
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    pts2 = np.column_stack([(poly - origin) @ e1, (poly - origin) @ e2])
    x2 = np.column_stack([(x - origin) @ e1, (x - origin) @ e2])
    inside = np.zeros(x2.shape[0], dtype=bool)
    on_edge = np.zeros(x2.shape[0], dtype=bool)
    tol_c = tol[cand]
    for a, b in zip(pts2, np.roll(pts2, -1, axis=0)):
        edge = b - a
        elen = np.linalg.norm(edge)
        dist = np.abs(_cross2(edge, x2 - a)) / elen
        proj = ((x2 - a) @ edge) / elen
        on_edge |= (dist <= tol_c) & (proj >= -tol_c) & (proj <= elen + tol_c)
        cond = (a[1] > x2[:, 1]) != (b[1] > x2[:, 1])
        with np.errstate(divide="ignore", invalid="ignore"):
            xcross = a[0] + (x2[:, 1] - a[1]) * edge[0] / edge[1]
        inside ^= cond & (x2[:, 0] < xcross)
    hits[np.flatnonzero(cand)] = inside & ~on_edge
    return hits


def bonds_crossing(graph: FamilyGraph, positions, crack: CrackSegment, rel_tol=1e-12):
    """Boolean mask over directed bonds that properly cross ``crack``."""
    owner = graph.owner
    p = positions[owner]
    q = positions[graph.neighbors]
    pts = crack.points
    if crack.dimension == 2:
        lo = np.minimum(pts[0], pts[1])
        hi = np.maximum(pts[0], pts[1])
        near = np.all((np.maximum(p, q) >= lo) & (np.minimum(p, q) <= hi), axis=1)
        mask = np.zeros(graph.n_bonds, dtype=bool)
        idx = np.flatnonzero(near)
        mask[idx] = _segment_hits_2d(p[idx], q[idx], pts[0], pts[1], rel_tol)
        return mask
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    near = np.all((np.maximum(p, q) >= lo) & (np.minimum(p, q) <= hi), axis=1)
    mask = np.zeros(graph.n_bonds, dtype=bool)
    idx = np.flatnonzero(near)
    mask[idx] = _segment_hits_3d(p[idx], q[idx], pts, rel_tol)
    return mask


def apply_precracks(graph: FamilyGraph, positions, cracks) -> FamilyGraph:
    """Return a copy of ``graph`` with every bond crossing a crack marked broken."""
    broken = graph.broken.copy()
    for crack in cracks:
        if not isinstance(crack, CrackSegment):
            crack = CrackSegment(crack)
        broken |= bonds_crossing(graph, positions, crack)
    # the lower-indexed endpoint owns the flag
    owner = graph.owner
    lower = owner < graph.neighbors
    broken[graph.reverse[lower]] = broken[lower]
    return replace(graph, broken=broken)
