"""Scenario assembly and execution: config -> nodes, families, kernels, run, files."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import output
from .config import RunConfig, serialize
from .discretization import (
    CrackSegment, FamilyGraph, NodeSet, apply_precracks, build_families,
    generate_block_with_hole, generate_plate_with_hole, generate_uniform_grid, load_nodes,
)
from .kernel import (
    KernelData, WeightFunction, compute_kernels, kernel_cache_key, load_kernels, save_kernels,
)
from .mechanics import Body, MaterialParams, MechState, damage
from .solver import Constraints, ExplicitConfig, run_dynamic, run_quasi_static

log = logging.getLogger(__name__)


@dataclass
class Scenario:
    config: RunConfig
    nodes: NodeSet
    graph: FamilyGraph
    material: MaterialParams
    constraints: Constraints
    weight: WeightFunction
    kernels: KernelData | None = None
    body: Body | None = None


@dataclass
class RunResult:
    scenario: Scenario
    state: MechState
    report: dict
    snapshots: list = field(default_factory=list)
    files: list = field(default_factory=list)
    solver_result: object = None


# ---------------------------------------------------------------------------
# assembly

def build_nodes(cfg: RunConfig, base_dir=None) -> NodeSet:
    g, m = cfg.geometry.params, cfg.model.m_factor
    if cfg.geometry.kind == "grid":
        return generate_uniform_grid(g["box"], g["spacing"], thickness=g.get("thickness", 1.0),
                                     m_factor=m)
    if cfg.geometry.kind == "file":
        path = Path(g["path"])
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        return load_nodes(path, m_factor=m, thickness=g.get("thickness", 1.0))
    if cfg.geometry.kind == "plate_with_hole":
        return generate_plate_with_hole(g["length"], g["radius"], g["n_theta"], g["n_radial"],
                                        g.get("thickness", 1.0), m_factor=m)
    return generate_block_with_hole(g["length"], g["radius"], g["depth"], g["n_theta"],
                                    g["n_radial"], g["n_depth"], m_factor=m)


def build_material(cfg: RunConfig) -> MaterialParams:
    s = cfg.material
    return MaterialParams(s.youngs_modulus, s.poisson_ratio, s.mass_density, s.fracture_energy,
                          s.regime, s.critical_stretch)


def cell_extent(nodes: NodeSet):
    """Bounding box of the cells (node position +- half a char length)."""
    half = 0.5 * nodes.char_length[:, None]
    return (nodes.positions - half).min(axis=0), (nodes.positions + half).max(axis=0)


def edge_constraints(nodes: NodeSet, u0, axis=0, profile="linear"):
    """Prescribe u_axis on nodes within one char length of the two faces normal to ``axis``.

    ``linear``: u = u0 (x - c) / (L/2), a uniform strain field inside the grip
    layers; ``uniform``: u = +-u0.  Other components stay free.
    """
    n, d = nodes.n_nodes, nodes.dimension
    lo, hi = cell_extent(nodes)
    x = nodes.positions[:, axis]
    dx = nodes.char_length
    left = x <= lo[axis] + dx
    right = x >= hi[axis] - dx
    mask = np.zeros((n, d), dtype=bool)
    disp = np.zeros((n, d))
    grip = left | right
    mask[grip, axis] = True
    if profile == "linear":
        c, half = 0.5 * (lo[axis] + hi[axis]), 0.5 * (hi[axis] - lo[axis])
        disp[grip, axis] = u0 * (x[grip] - c) / half
    else:
        disp[right, axis] = u0
        disp[left, axis] = -u0
    return Constraints(mask, displacement=disp)


def impact_nodes(nodes: NodeSet, segment):
    """Nodes within one char length of the segment, strictly between its endpoints."""
    a, b = (np.asarray(p, dtype=float) for p in segment)
    ab = b - a
    t = (nodes.positions - a) @ ab / (ab @ ab)
    foot = a + t[:, None] * ab
    dist = np.linalg.norm(nodes.positions - foot, axis=1)
    return (t > 0.0) & (t < 1.0) & (dist <= nodes.char_length)


def impact_constraints(nodes: NodeSet, segment, velocity, duration=None):
    n, d = nodes.n_nodes, nodes.dimension
    hit = impact_nodes(nodes, segment)
    mask = np.zeros((n, d), dtype=bool)
    mask[hit] = True
    vel = np.zeros((n, d))
    vel[hit] = np.asarray(velocity, dtype=float)
    return Constraints(mask, velocity=vel, release_time=duration)


def build_constraints(cfg: RunConfig, nodes: NodeSet) -> Constraints:
    ld = cfg.loading
    if ld.kind == "edge_displacement":
        return edge_constraints(nodes, ld.u0, ld.axis, ld.profile)
    if ld.kind == "impact":
        return impact_constraints(nodes, ld.segment, ld.velocity, ld.duration)
    return Constraints.none(nodes.n_nodes, nodes.dimension)


def build_kernels(cfg: RunConfig, nodes: NodeSet, graph: FamilyGraph, weight=None,
                  base_dir=None, warn=True) -> KernelData:
    weight = weight or WeightFunction.from_name(cfg.model.weight)
    model = cfg.model.name
    kmodel = "osbpd" if model == "lbbpd" else model
    include = cfg.kernel.include_precracks
    cache = cfg.kernel.cache_dir
    if cache is None:
        return compute_kernels(nodes, graph, weight, kmodel, include_broken=include, warn=warn)
    cache = Path(cache)
    if not cache.is_absolute() and base_dir is not None:
        cache = Path(base_dir) / cache
    key = kernel_cache_key(nodes, graph, weight, cfg.model.m_factor, kmodel, include)
    path = cache / f"kernels_{key[:16]}.npz"
    kernels = load_kernels(path, graph, key)
    if kernels is None:
        kernels = compute_kernels(nodes, graph, weight, kmodel, include_broken=include, warn=warn)
        cache.mkdir(parents=True, exist_ok=True)
        save_kernels(path, kernels, key)
    else:
        log.info("kernels loaded from %s", path)
    return kernels


def build_scenario(cfg: RunConfig, base_dir=None, kernels=True) -> Scenario:
    """Everything needed to run ``cfg``; ``kernels=False`` skips the kernel solve."""
    nodes = build_nodes(cfg, base_dir)
    graph = build_families(nodes)
    if cfg.cracks:
        graph = apply_precracks(graph, nodes.positions,
                                [CrackSegment(c.points) for c in cfg.cracks])
    scen = Scenario(cfg, nodes, graph, build_material(cfg), build_constraints(cfg, nodes),
                    WeightFunction.from_name(cfg.model.weight))
    if kernels:
        scen.kernels = build_kernels(cfg, nodes, graph, scen.weight, base_dir)
        scen.body = Body(nodes, graph, scen.kernels, scen.material, cfg.model.name)
    return scen


def input_digest(scen: Scenario) -> str:
    """Hash of every pipeline input except the kernels and the model name."""
    h = hashlib.sha256()
    cfg = scen.config.to_dict()
    cfg["model"].pop("name", None)
    cfg.get("output", {}).pop("directory", None)
    h.update(json.dumps(cfg, sort_keys=True, default=str).encode())
    for arr in (scen.nodes.positions, scen.nodes.cell_measure, scen.nodes.horizon_radius,
                scen.graph.offsets, scen.graph.neighbors, scen.graph.broken,
                scen.constraints.mask):
        h.update(np.ascontiguousarray(arr).tobytes())
    for arr in (scen.constraints.displacement, scen.constraints.velocity):
        if arr is not None:
            h.update(np.ascontiguousarray(arr).tobytes())
    h.update(repr(scen.material).encode())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# tip tracking (dynamic runs with pre-cracks)

def crack_tips(cfg: RunConfig, nodes: NodeSet):
    """Interior endpoint of every 2-D crack (the one farther from the domain boundary)."""
    lo, hi = cell_extent(nodes)
    tips = []
    for c in cfg.cracks:
        pts = np.asarray(c.points, dtype=float)
        if pts.shape != (2, 2):
            continue
        depth = [float(np.min(np.concatenate([p - lo, hi - p]))) for p in pts]
        tips.append(pts[int(np.argmax(depth))])
    return tips


class TipTracker:
    """Follows new damage around one crack tip during an explicit run.

    Initiation is the first step at which a bond that was intact at t = 0
    breaks with an endpoint within ``capture`` of the tip.  The crack front is
    the farthest node within ``reach`` whose damage has risen by at least
    ``threshold`` since t = 0.  The propagation angle is the angle between the
    pre-crack direction and the chord from the tip to the front, read when the
    front first gets ``length`` away from the tip (0 to 180 degrees).
    """

    def __init__(self, tip, direction, graph: FamilyGraph, nodes: NodeSet, capture,
                 length=0.01, reach=None, threshold=0.4):
        self.tip = np.asarray(tip, dtype=float)
        self.direction = np.asarray(direction, dtype=float) / np.linalg.norm(direction)
        self.positions = nodes.positions
        self.owner = graph.owner
        self.nbr = graph.neighbors
        self.volj = nodes.cell_measure[graph.neighbors]
        self.total = np.bincount(self.owner, weights=self.volj, minlength=nodes.n_nodes)
        self.lost = np.zeros(nodes.n_nodes)
        self.dist = np.linalg.norm(self.positions - self.tip, axis=1)
        self.capture = capture
        self.length = length
        self.reach = 1.5 * length if reach is None else reach
        self.threshold = threshold
        self.initiation_time = None
        self.angle = None
        self.front = None
        self.front_distance = 0.0
        self.path = []

    def __call__(self, state: MechState, newly):
        idx = np.flatnonzero(newly)
        if idx.size == 0:
            return
        own = self.owner[idx]
        if self.initiation_time is None:
            ends = np.minimum(self.dist[own], self.dist[self.nbr[idx]])
            if np.any(ends <= self.capture):
                self.initiation_time = state.time
        np.add.at(self.lost, own, self.volj[idx])
        touched = np.unique(own)
        touched = touched[self.dist[touched] <= self.reach]
        if self.initiation_time is None or touched.size == 0:
            return
        grown = touched[self.lost[touched] >= self.threshold * self.total[touched]]
        if grown.size == 0:
            return
        k = grown[np.argmax(self.dist[grown])]
        if self.dist[k] > self.front_distance:
            self.front_distance = float(self.dist[k])
            self.front = self.positions[k].copy()
            self.path.append((state.time, *self.front))
            if self.angle is None and self.dist[k] >= self.length:
                v = (self.front - self.tip) / self.dist[k]
                self.angle = float(np.degrees(np.arccos(np.clip(v @ self.direction, -1, 1))))

    def summary(self):
        return {"tip": self.tip.tolist(), "initiation_time": self.initiation_time,
                "angle_deg": self.angle, "front_distance": self.front_distance}


def tip_trackers(scen: Scenario, length=0.01):
    out = []
    for c, tip in zip(scen.config.cracks, crack_tips(scen.config, scen.nodes)):
        pts = np.asarray(c.points, dtype=float)
        base = pts[0] if np.allclose(pts[1], tip) else pts[1]
        capture = 2.0 * float(scen.nodes.horizon_radius.max())
        out.append(TipTracker(tip, tip - base, scen.graph, scen.nodes, capture, length))
    return out


# ---------------------------------------------------------------------------
# execution

def _fields(state: MechState, body: Body):
    if state.dilatation is None or state.sed is None:
        state.dilatation = body.dilatation(state.displacement, state.broken)
        state.sed = body.strain_energy(state.displacement, state.broken)
    phi = damage(body.graph, body.nodes, state.broken)
    return {"u": state.displacement, "v": state.velocity, "theta": state.dilatation,
            "sed": state.sed, "phi": phi}


def _snapshot_fields(snap):
    return {"u": snap.displacement, "v": snap.velocity, "theta": snap.dilatation,
            "sed": snap.sed, "phi": snap.damage}


def write_probes(cfg: RunConfig, nodes: NodeSet, fields, directory, meta, tag=""):
    from scipy.spatial import cKDTree

    tree = cKDTree(nodes.positions)
    files = []
    for probe in cfg.output.probes:
        samples = output.sample_probe(probe, nodes, tree)
        path = Path(directory) / f"probe_{probe.name}{tag}.csv"
        files.append(output.write_probe(path, probe, samples, nodes, fields,
                                        dict(meta, probe=probe.name)))
    return files


def run(cfg: RunConfig, out_dir=None, base_dir=None, write=True, on_step=None,
        scenario: Scenario | None = None, track_tips=True) -> RunResult:
    """Build and run ``cfg``; writes snapshots, probes, config and report under ``out_dir``."""
    t0 = time.perf_counter()
    scen = scenario or build_scenario(cfg, base_dir)
    t_setup = time.perf_counter() - t0
    body = scen.body
    out = Path(out_dir if out_dir is not None else cfg.output.directory)
    run_id = uuid.uuid4().hex[:12]
    report = {
        "run_id": run_id, "scenario": cfg.scenario.name, "model": cfg.model.name,
        "solver": cfg.solver.kind, "n_nodes": scen.nodes.n_nodes,
        "n_bonds": scen.graph.n_bonds // 2, "dimension": scen.nodes.dimension,
        "precrack_bonds": int(np.count_nonzero(scen.graph.broken)) // 2,
        "hydro_fallback_families": int(np.count_nonzero(scen.kernels.hydro_fallback)),
        "singular_families": int(np.count_nonzero(scen.kernels.singular_fallback)),
        "negative_omega_d": scen.kernels.negative_omega_d,
        "input_digest": input_digest(scen),
    }
    files = []
    snapshots = []
    trackers = []
    if cfg.solver.kind == "adr":
        a = cfg.adr
        res = run_quasi_static(body, scen.constraints, a.tol, a.max_iter, a.dt, a.safety_factor,
                               stability_check=a.stability_check)
        state = res.state
        report.update(iterations=res.iterations, converged=res.converged,
                      residual=res.residual, mass_scale=res.mass_scale)
    else:
        d = cfg.dynamic
        n_steps = d.n_steps if d.n_steps is not None else int(math.ceil(d.t_end / d.dt - 1e-9))
        ecfg = ExplicitConfig(d.dt, n_steps, cfg.output.cadence, d.stability_safety)
        fail = cfg.failure
        crit = fail.critical_stretch
        if track_tips and fail.enabled:
            trackers = tip_trackers(scen)
        callbacks = trackers + ([on_step] if on_step is not None else [])

        def step_hook(state, newly):
            for cb in callbacks:
                cb(state, newly)

        rekernel = None
        if cfg.kernel.recompute_on_break:
            def rekernel(broken):
                from dataclasses import replace

                return build_kernels(cfg, scen.nodes, replace(scen.graph, broken=broken),
                                     scen.weight, warn=False)
        res = run_dynamic(body, ecfg, scen.constraints, failure=fail.enabled,
                          critical_stretch=crit, on_step=step_hook if callbacks else None,
                          rekernel=rekernel)
        state = res.state
        snapshots = res.snapshots
        broken_total = int(np.count_nonzero(state.broken)) // 2
        report.update(steps=state.step, time=state.time, dt=d.dt,
                      broken_bonds=broken_total,
                      new_broken_bonds=broken_total - report["precrack_bonds"],
                      tips=[t.summary() for t in trackers])
    report["runtime_s"] = time.perf_counter() - t0
    report["setup_s"] = t_setup
    fields = _fields(state, body)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        meta = {"run_id": run_id, "model": cfg.model.name, "step": state.step,
                "time": output.FLOAT_FMT.format(state.time)}
        q = cfg.output.quantities
        if cfg.output.snapshots:
            for snap in snapshots:
                files.append(output.write_snapshot(out, scen.nodes, _snapshot_fields(snap),
                                                   snap.step, q, title=f"{run_id} t={snap.time:.9g}"))
            if not snapshots or snapshots[-1].step != state.step:
                files.append(output.write_snapshot(out, scen.nodes, fields, state.step, q,
                                                   title=f"{run_id} t={state.time:.9g}"))
        files += write_probes(cfg, scen.nodes, fields, out, meta)
        cfg_path = out / "config.toml"
        cfg_path.write_text(serialize(cfg), encoding="utf-8")
        rep_path = out / "report.json"
        rep_path.write_text(json.dumps(report, indent=2, default=_json_default), encoding="utf-8")
        files += [cfg_path, rep_path]
    result = RunResult(scen, state, report, snapshots, files, res)
    result.trackers = trackers
    return result


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)
