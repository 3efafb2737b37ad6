"""Invariant suite on built-in micro-cases (run by ``xosbpd check``)."""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .discretization import (
    NodeSet, build_families, generate_plate_with_hole, generate_uniform_grid,
)
from .errors import KernelFallback, SingularSystem
from .kernel import all_residuals, compute_kernels, solve_hydro_multipliers
from .mechanics import Body, MaterialParams, MechState, local_energy_density
from .solver import AdrState, Constraints, adr_step, bond_stiffness, explicit_step

STEEL = MaterialParams(200e9, 0.3, 7800.0, regime="plane_strain")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _graded_plate():
    return generate_plate_with_hole(1.0, 0.1, 24, 8)


def _body(nodes, material, model="xosbpd"):
    graph = build_families(nodes)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", KernelFallback)
        kern = compute_kernels(nodes, graph, model=model)
    return Body(nodes, graph, kern, material, model)


def check_family_symmetry():
    graph = build_families(_graded_plate())
    own = graph.owner
    ok = (np.array_equal(graph.reverse[graph.reverse], np.arange(graph.n_bonds))
          and np.array_equal(graph.neighbors[graph.reverse], own)
          and np.allclose(graph.bond_xi[graph.reverse], -graph.bond_xi, atol=0, rtol=1e-15))
    return ok, f"{graph.n_bonds} directed bonds, reverse map consistent"


def check_kernel_constraints():
    worst = 0.0
    for nodes in (generate_uniform_grid([[0, 1], [0, 1]], 0.1),
                  generate_uniform_grid([[0, 1], [0, 1], [0, 1]], 0.2), _graded_plate()):
        graph = build_families(nodes)
        kern = compute_kernels(nodes, graph)
        h, d = all_residuals(nodes, graph, kern)
        ok = ~kern.singular_fallback
        worst = max(worst, float(h[ok].max()), float(d[ok].max()))
    return worst <= 1e-9, f"max corrected residual {worst:.2e} (limit 1e-9)"


def check_affine_patch():
    rng = np.random.default_rng(0)
    body = _body(_graded_plate(), STEEL)
    x = body.nodes.positions
    worst_t = worst_w = 0.0
    for _ in range(5):
        eps = rng.normal(size=(2, 2)) * 1e-6
        eps = 0.5 * (eps + eps.T)
        u = x @ eps.T
        broken = body.graph.broken
        theta = body.dilatation(u, broken)
        w = body.strain_energy(u, broken)
        w_ref = local_energy_density(eps, body.kappa, body.mu)
        worst_t = max(worst_t, float(np.abs(theta - np.trace(eps)).max() / abs(np.trace(eps))))
        worst_w = max(worst_w, float(np.abs(w - w_ref).max() / w_ref))
    ok = worst_t <= 1e-3 and worst_w <= 1e-2
    return ok, f"max theta error {worst_t:.2e}, max W error {worst_w:.2e}"


def check_momentum():
    rng = np.random.default_rng(1)
    body = _body(_graded_plate(), STEEL)
    vol = body.nodes.cell_measure
    x = body.nodes.positions
    worst = 0.0
    for _ in range(5):
        u = rng.normal(size=x.shape) * 1e-5
        ff = body.internal_forces(u, body.graph.broken)
        f = ff.internal_force_density * vol[:, None]
        scale = float(np.mean(np.abs(ff.scalar_force) * body.volj)) * float(vol.mean())
        y = x + u
        torque = float(np.sum(y[:, 0] * f[:, 1] - y[:, 1] * f[:, 0]))
        worst = max(worst, float(np.abs(f.sum(axis=0)).max()) / scale,
                    abs(torque) / (scale * float(np.abs(y).max())))
    return worst <= 1e-10, f"max relative force/torque sum {worst:.2e} (limit 1e-10)"


def check_singular_fallback():
    xi = np.array([[1.0, 0.0], [2.0, 0.0], [-1.0, 0.0]])
    try:
        solve_hydro_multipliers(xi, np.ones(3))
        raised = False
    except SingularSystem:
        raised = True
    line = NodeSet.from_measures(np.column_stack([np.arange(6.0), np.zeros(6)]), np.ones(6))
    graph = build_families(line)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        kern = compute_kernels(line, graph)
    fell_back = bool(kern.singular_fallback.all()) and any(
        issubclass(w.category, KernelFallback) for w in caught)
    same = np.allclose(kern.omega_h, kern.omega_h_s)
    return raised and fell_back and same, "collinear family: SingularSystem raised, body uses spherical values"


def check_corner_fallback():
    nodes = generate_uniform_grid([[0, 1.0], [0, 0.5]], 0.05)
    graph = build_families(nodes)
    kern = compute_kernels(nodes, graph)
    flagged = np.flatnonzero(kern.hydro_fallback)
    pos = nodes.positions[flagged]
    corners = np.array([[0.025, 0.025], [0.975, 0.025], [0.025, 0.475], [0.975, 0.475]])
    at_corners = flagged.size == 4 and all(np.min(np.linalg.norm(pos - c, axis=1)) < 1e-12
                                           for c in corners)
    return at_corners, f"{flagged.size} hydro-fallback famil(ies) on a uniform rectangle"


def check_bond_stiffness():
    k = bond_stiffness([1.0, 1.0, 0.0], 2.0)
    expect = 2.0 / (2.0 * math.sqrt(2.0))
    ok = abs(-k[0, 0] - expect) <= 1e-15 and np.array_equal(k, k.T)
    rigid = np.tile([0.3, -1.1, 2.0], 2)
    ok = ok and np.abs(k @ rigid).max() <= 1e-15
    return ok, f"k11 = {-k[0, 0]:.16f}, rigid translation annihilated"


def check_adr_spring():
    k, f = 3.0, 2.0
    adr = AdrState(np.array([[0.25 * 2 * k * 1.05]]), 1.0)
    u = np.zeros((1, 1))
    free = np.ones((1, 1), dtype=bool)
    for it in range(2000):
        force = f - k * u
        if abs(force[0, 0]) <= 1e-10:
            break
        u = adr_step(adr, force, u, free)
    err = abs(u[0, 0] - f / k)
    return err <= 1e-8, f"1-DOF spring: |U - f/k| = {err:.1e} after {it} iterations"


def check_explicit_uniform_motion():
    st = MechState(np.zeros((1, 2)), np.array([[1.5, -0.5]]), np.zeros((1, 2)),
                   np.zeros((1, 2)), np.zeros(0, dtype=bool))
    for _ in range(10):
        explicit_step(st, np.zeros((1, 2)), STEEL, 1e-3, Constraints.none(1, 2))
    ok = np.allclose(st.displacement, 10 * 1e-3 * np.array([[1.5, -0.5]]), rtol=1e-14)
    return ok, "force-free motion u = n dt v"


CHECKS = [
    ("family symmetry", check_family_symmetry),
    ("kernel constraints", check_kernel_constraints),
    ("affine patch", check_affine_patch),
    ("momentum balance", check_momentum),
    ("singular fallback", check_singular_fallback),
    ("corner hydro fallback", check_corner_fallback),
    ("bond stiffness", check_bond_stiffness),
    ("ADR 1-DOF spring", check_adr_spring),
    ("explicit uniform motion", check_explicit_uniform_motion),
]


def run_checks():
    out = []
    for name, fn in CHECKS:
        t = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t))
    return out
