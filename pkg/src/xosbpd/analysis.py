"""Comparison against the bundled elasticity reference for the hole presets."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .discretization import NodeSet
from .output import sample_probe


@dataclass
class Reference:
    """Displacement table on a polar (beta in degrees, radius) grid around the hole."""

    beta: np.ndarray
    radius: np.ndarray
    u: np.ndarray  # (n_beta, n_radius, n_components)
    center: tuple = (0.0, 0.0)

    def __call__(self, points):
        """Interpolate the reference at (x, y) points inside the tabulated annulus."""
        pts = np.asarray(points, dtype=float)[:, :2] - np.asarray(self.center)
        r = np.hypot(pts[:, 0], pts[:, 1])
        b = np.degrees(np.arctan2(pts[:, 1], pts[:, 0])) % 360.0
        r = np.clip(r, self.radius[0], self.radius[-1])
        interp = RegularGridInterpolator((self.beta, self.radius), self.u)
        return interp(np.column_stack([b, r]))


def load_reference(name, surface="mid") -> Reference:
    """``plate2d`` or ``block3d``; for the block ``surface`` is ``mid`` or ``top``."""
    path = resources.files("xosbpd") / "data" / f"{name}_reference.npz"
    with resources.as_file(path) as p, np.load(p) as data:
        key = "u_top" if surface == "top" else "u"
        return Reference(data["beta_deg"], data["radius"], data[key])


def probe_nodes(probe, nodes: NodeSet):
    """Distinct nodes hit by a probe, in sample order."""
    idx = [s.node for s in sample_probe(probe, nodes) if s.node is not None]
    return np.array(list(dict.fromkeys(idx)), dtype=np.int64)


def relative_l2(u, ref):
    """Per-component and vector relative L2 error of ``u`` against ``ref``."""
    u, ref = np.asarray(u, float), np.asarray(ref, float)
    comp = np.linalg.norm(u - ref, axis=0) / np.linalg.norm(ref, axis=0)
    vec = np.linalg.norm(u - ref) / np.linalg.norm(ref)
    return comp, float(vec)


def hole_edge_error(nodes: NodeSet, displacement, probe, reference: Reference, components=None):
    """Relative L2 errors at the probe's nodes, reference sampled at the node positions.

    Returns ``(per_component, vector, node_ids)``.
    """
    ids = probe_nodes(probe, nodes)
    ref = reference(nodes.positions[ids])
    u = np.asarray(displacement)[ids]
    if components is not None:
        ref, u = ref[:, components], u[:, components]
    comp, vec = relative_l2(u, ref)
    return comp, vec, ids
