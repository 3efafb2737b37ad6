"""Time integration: explicit dynamics and adaptive dynamic relaxation (ADR).

ADR's fictitious diagonal mass comes from the Gershgorin bound of the
linearized bond-based stiffness, assembled row by row without ever storing
the global matrix.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .discretization import FamilyGraph, NodeSet
from .errors import NotConverged, NumericalBlowup
from .mechanics import Body, MaterialParams, MechState, damage, update_failure

log = logging.getLogger(__name__)


@dataclass
class Constraints:
    """Per-DOF essential conditions.

    Masked DOFs follow ``displacement`` (statics) or move with ``velocity``
    (dynamics).  ``release_time`` lifts velocity constraints after that time.
    """

    mask: np.ndarray
    displacement: np.ndarray | None = None
    velocity: np.ndarray | None = None
    release_time: float | None = None

    @classmethod
    def none(cls, n, d):
        return cls(np.zeros((n, d), dtype=bool))

    def active(self, t):
        if self.release_time is not None and t >= self.release_time:
            return np.zeros_like(self.mask)
        return self.mask


# ---------------------------------------------------------------------------
# explicit dynamics

@dataclass
class ExplicitConfig:
    dt: float
    n_steps: int
    cadence: int = 0
    stability_safety: float = 0.5

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")


def explicit_step(state: MechState, force_density, material: MaterialParams, dt,
                  constraints: Constraints | None = None):
    """Advance one step: velocity first, then displacement with the new velocity."""
    acc = (force_density + state.body_force) / material.mass_density
    vel = state.velocity + acc * dt
    disp = state.displacement + vel * dt
    if constraints is not None:
        mask = constraints.active(state.time)
        if mask.any():
            vel[mask] = constraints.velocity[mask]
            disp[mask] = state.displacement[mask] + vel[mask] * dt
    if not (np.all(np.isfinite(disp)) and np.all(np.isfinite(vel))):
        raise NumericalBlowup("non-finite displacement or velocity", step=state.step + 1)
    state.acceleration = acc
    state.velocity = vel
    state.displacement = disp
    state.time += dt
    state.step += 1
    return state


def stable_time_step(nodes: NodeSet, material: MaterialParams, safety=0.5):
    """Advisory CFL-like bound ``safety * min(dx) * sqrt(rho / kappa)``."""
    return safety * float(nodes.char_length.min()) * math.sqrt(
        material.mass_density / material.bulk_modulus)


@dataclass
class Snapshot:
    step: int
    time: float
    displacement: np.ndarray
    velocity: np.ndarray
    damage: np.ndarray
    dilatation: np.ndarray
    sed: np.ndarray
    broken_count: int


@dataclass
class DynamicResult:
    state: MechState
    snapshots: list = field(default_factory=list)
    broken_history: list = field(default_factory=list)


def run_dynamic(body: Body, cfg: ExplicitConfig, constraints: Constraints | None = None,
                state: MechState | None = None, failure=True, critical_stretch=None,
                on_step=None, snapshot_times=None, rekernel=None):
    """Explicit integration with bond failure every step.

    ``on_step(state, newly_broken_mask)`` is called after each step.
    ``rekernel(broken)``, if given, returns fresh KernelData whenever bonds
    break (kernels are otherwise frozen at t = 0).
    Snapshots are taken every ``cfg.cadence`` steps (0 disables) and at the
    steps closest to ``snapshot_times``.
    """
    nodes, graph, material = body.nodes, body.graph, body.material
    if state is None:
        state = MechState.zeros(nodes, graph)
    dt_max = stable_time_step(nodes, material, cfg.stability_safety)
    if cfg.dt > dt_max:
        warnings.warn(f"dt = {cfg.dt:.3e} s exceeds the advisory stable step {dt_max:.3e} s",
                      stacklevel=2)
    if failure:
        if critical_stretch is None:
            critical_stretch = material.critical_stretch_for(body.bond_delta)
        crit = np.broadcast_to(np.asarray(critical_stretch, dtype=float), (graph.n_bonds,))
    result = DynamicResult(state)
    snap_steps = set()
    if snapshot_times is not None:
        snap_steps = {int(round(t / cfg.dt)) for t in snapshot_times}
    if constraints is not None and constraints.velocity is None:
        constraints.velocity = np.zeros_like(state.displacement)
    for _ in range(cfg.n_steps):
        # phase A + B on the current configuration
        ff = body.internal_forces(state.displacement, state.broken)
        if failure:
            stretch = body._ext / body.xlen
            before = state.broken
            state.broken, nnew = update_failure(graph, stretch, crit, state.broken)
            newly = state.broken & ~before
            if nnew:
                result.broken_history.append((state.step + 1, state.time + cfg.dt, nnew))
                if rekernel is not None:
                    body.set_kernels(rekernel(state.broken))
        else:
            newly = np.zeros(graph.n_bonds, dtype=bool)
        explicit_step(state, ff.internal_force_density, material, cfg.dt, constraints)
        if on_step is not None:
            on_step(state, newly)
        if (cfg.cadence and state.step % cfg.cadence == 0) or state.step in snap_steps:
            result.snapshots.append(take_snapshot(body, state))
    result.state = state
    return result


def take_snapshot(body: Body, state: MechState) -> Snapshot:
    theta = body.dilatation(state.displacement, state.broken)
    sed = body.strain_energy(state.displacement, state.broken)
    phi = damage(body.graph, body.nodes, state.broken)
    state.dilatation, state.sed, state.damage = theta, sed, phi
    return Snapshot(state.step, state.time, state.displacement.copy(), state.velocity.copy(),
                    phi, theta, sed, int(np.count_nonzero(state.broken)) // 2)


# ---------------------------------------------------------------------------
# linearized bond-based stiffness

def bond_stiffness(xi, c, dv=1.0, dv2=1.0):
    """2d x 2d block mapping (u_i, u_j) to (F_i, F_j) for one bond."""
    xi = np.asarray(xi, dtype=float)
    k = c * np.outer(xi, xi) / np.linalg.norm(xi) ** 3 * dv * dv2
    return np.block([[-k, k], [k, -k]])


def assemble_stiffness(body: Body, broken=None):
    """Global LBBPD stiffness as a sparse matrix (small problems only)."""
    from scipy.sparse import coo_matrix

    graph, d = body.graph, body.dim
    broken = graph.broken if broken is None else broken
    owner = graph.owner
    use = (owner < graph.neighbors) & ~broken
    rows, cols, vals = [], [], []
    vol = body.nodes.cell_measure
    for b in np.flatnonzero(use):
        i, j = owner[b], graph.neighbors[b]
        blk = bond_stiffness(graph.bond_xi[b], body.cbond[b], vol[i], vol[j])
        dofs = np.r_[i * d + np.arange(d), j * d + np.arange(d)]
        rows.append(np.repeat(dofs, 2 * d))
        cols.append(np.tile(dofs, 2 * d))
        vals.append(blk.ravel())
    n = body.n_nodes * d
    if not rows:
        return coo_matrix((n, n)).tocsr()
    return coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()


@nb.njit(cache=True)
def _stiffness_row_abs(offsets, xi, xlen, cbond, vol, nbr, intact, out):
    n = offsets.shape[0] - 1
    dim = xi.shape[1]
    diag = np.zeros((dim, dim))
    for i in range(n):
        for a in range(dim):
            out[i, a] = 0.0
            for c in range(dim):
                diag[a, c] = 0.0
        for b in range(offsets[i], offsets[i + 1]):
            if not intact[b]:
                continue
            j = nbr[b]
            f = cbond[b] / xlen[b] ** 3 * vol[i] * vol[j]
            for a in range(dim):
                for c in range(dim):
                    k = f * xi[b, a] * xi[b, c]
                    diag[a, c] += k
                    out[i, a] += abs(k)
        for a in range(dim):
            for c in range(dim):
                out[i, a] += abs(diag[a, c])


def stiffness_row_abs_sums(body: Body, broken=None):
    graph = body.graph
    broken = graph.broken if broken is None else broken
    out = np.zeros((body.n_nodes, body.dim))
    _stiffness_row_abs(graph.offsets, body.xi, body.xlen, body.cbond, body.nodes.cell_measure,
                       graph.neighbors, ~broken, out)
    return out


def adr_mass(body: Body, dt=1.0, safety_factor=1.05, broken=None):
    """Diagonal fictitious mass ``safety * dt^2 / 4 * sum_j |K_ij|`` per DOF."""
    if safety_factor < 1.0:
        raise ValueError("safety_factor must be at least 1")
    rows = stiffness_row_abs_sums(body, broken)
    mass = 0.25 * dt * dt * rows * safety_factor
    zero = mass <= 0
    if zero.any():
        fill = float(np.median(mass[~zero])) if (~zero).any() else 1.0
        warnings.warn(f"{int(zero.any(axis=1).sum())} node(s) without stiffness; "
                      f"mass set to the median {fill:.3e}", stacklevel=2)
        mass[zero] = fill
    return mass


def spectral_radius(body: Body, mass, free=None, broken=None, tol=1e-4):
    """Largest |eigenvalue| of M^-1 K for the body's own model at u = 0.

    K is applied matrix-free through finite differences of the internal
    force, so state-based models are measured, not bounded.
    """
    from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigs

    graph = body.graph
    broken = graph.broken if broken is None else broken
    shape = mass.shape
    vol = body.nodes.cell_measure[:, None]
    free = np.ones(shape, dtype=bool) if free is None else free
    eps = 1e-9 * float(body.nodes.char_length.min())
    minv = np.where(free, 1.0 / mass, 0.0)

    def matvec(v):
        v = np.where(free, np.real(v).reshape(shape), 0.0)
        f = body.internal_forces(eps * v, broken).internal_force_density * vol
        return (-f / eps * minv).ravel()

    n = mass.size
    op = LinearOperator((n, n), matvec=matvec, dtype=float)
    v0 = np.where(free, 1.0, 0.0).ravel() + 0.01 * np.cos(np.arange(n))
    try:
        vals = eigs(op, k=1, which="LM", tol=tol, v0=v0, maxiter=max(200, n), return_eigenvectors=False)
    except ArpackNoConvergence as exc:
        vals = exc.eigenvalues
        if vals.size == 0:
            raise
    return float(np.abs(vals).max())


# ---------------------------------------------------------------------------
# adaptive dynamic relaxation

@dataclass
class AdrState:
    mass: np.ndarray
    dt: float = 1.0
    damping: float = 0.0
    velocity_half: np.ndarray | None = None
    force: np.ndarray | None = None
    force_prev: np.ndarray | None = None
    local_stiffness: np.ndarray | None = None
    iteration: int = 0
    residual: float = math.inf
    negative_radicand: int = 0


def adr_damping(u, k_local, free=None):
    """c = 2 sqrt(U^T K1 U / U^T U) with the zero and negative guards."""
    if free is not None:
        u = u[free]
        k_local = k_local[free]
    uu = float(np.dot(u.ravel(), u.ravel()))
    if uu == 0.0:
        return 0.0, False
    num = float(np.dot(u.ravel(), (k_local * u).ravel()))
    if num < 0.0:
        return 0.0, True
    return 2.0 * math.sqrt(num / uu), False


def adr_step(adr: AdrState, force, u, free):
    """One damped central-difference step; returns the new displacement.

    ``force`` is F^n at displacement ``u`` = U^n.  Constrained DOFs
    (``~free``) keep zero velocity.
    """
    dt = adr.dt
    minv = 1.0 / adr.mass
    if adr.velocity_half is None:
        # start-up: c = 0 and U'(1/2) = dt M^-1 F / 2
        adr.damping = 0.0
        vh = 0.5 * dt * minv * force
        adr.local_stiffness = np.zeros_like(force)
    else:
        vprev = adr.velocity_half
        with np.errstate(divide="ignore", invalid="ignore"):
            k1 = -(force - adr.force) / (adr.mass * dt * vprev)
        k1[~np.isfinite(k1) | (vprev == 0.0)] = 0.0
        adr.local_stiffness = k1
        c, neg = adr_damping(u, k1, free)
        adr.negative_radicand += int(neg)
        c = min(c, (2.0 / dt) * (1.0 - 1e-12))
        adr.damping = c
        vh = ((2.0 - c * dt) * vprev + 2.0 * dt * minv * force) / (2.0 + c * dt)
    vh[~free] = 0.0
    adr.force_prev = adr.force
    adr.force = force
    adr.velocity_half = vh
    adr.iteration += 1
    return u + dt * vh


@dataclass
class StaticResult:
    state: MechState
    iterations: int
    converged: bool
    residual: float
    history: list
    reaction: np.ndarray


def run_quasi_static(body: Body, constraints: Constraints, tol=1e-5, max_iter=20000, dt=1.0,
                     safety_factor=1.05, body_force=None, raise_on_failure=True,
                     history_every=50, kinetic_trace=False, stability_check=True):
    """Relax to static equilibrium under prescribed displacements.

    Converged when ``max|F_free| <= tol * max(|F_reaction|, |F_external|)``
    with F in force units (density times cell measure).

    The diagonal mass starts from the bond-based Gershgorin bound.  With
    ``stability_check`` the spectral radius of M^-1 K of the actual model is
    measured and the mass is scaled up if ``dt^2 rho(M^-1 K)`` would exceed
    ``4 / safety_factor``; state-based kernels can be stiffer than the
    bond-based operator the bound was derived for.
    """
    nodes, graph = body.nodes, body.graph
    n, d = nodes.n_nodes, nodes.dimension
    vol = nodes.cell_measure[:, None]
    mask = constraints.mask
    free = ~mask
    u = np.zeros((n, d))
    if constraints.displacement is not None:
        u[mask] = constraints.displacement[mask]
    bforce = np.zeros((n, d)) if body_force is None else np.asarray(body_force, float)
    ext = bforce * vol
    ext_scale = float(np.abs(ext[free]).max(initial=0.0))
    mass = adr_mass(body, dt, safety_factor, graph.broken)
    mass_scale = 1.0
    if stability_check and body.model != "lbbpd" and free.any():
        rho = spectral_radius(body, mass, free, graph.broken)
        limit = 4.0 / (dt * dt * safety_factor)
        if rho > limit:
            mass_scale = rho / limit
            mass = mass * mass_scale
            log.info("ADR mass scaled by %.3f for stability", mass_scale)
    adr = AdrState(mass, dt)
    history = []
    kinetic = []
    converged = False
    ratio = math.inf
    reaction = np.zeros((n, d))
    for it in range(max_iter + 1):
        ff = body.internal_forces(u, graph.broken)
        force = ff.internal_force_density * vol + ext
        reaction = np.where(mask, force, 0.0)
        r_free = float(np.abs(force[free]).max(initial=0.0))
        scale = max(float(np.abs(reaction).max(initial=0.0)), ext_scale)
        if not math.isfinite(r_free):
            raise NumericalBlowup("non-finite residual in ADR", step=it)
        ratio = 0.0 if r_free == 0.0 else (r_free / scale if scale > 0 else math.inf)
        if it % history_every == 0:
            history.append((it, ratio))
        if ratio <= tol:
            converged = True
            break
        if it == max_iter:
            break
        force[mask] = 0.0
        u = adr_step(adr, force, u, free)
        if kinetic_trace:
            vh = adr.velocity_half
            kinetic.append(float(np.sum(adr.mass * vh * vh)))
    history.append((it, ratio))
    state = MechState.zeros(nodes, graph)
    state.displacement = u
    state.step = it
    state.dilatation = body.dilatation(u, graph.broken)
    state.sed = body.strain_energy(u, graph.broken)
    state.damage = damage(graph, nodes, state.broken)
    result = StaticResult(state, it, converged, ratio, history, reaction)
    if kinetic_trace:
        result.kinetic = kinetic
    result.negative_radicand = adr.negative_radicand
    result.mass_scale = mass_scale
    log.info("ADR %s after %d iterations, residual %.3e",
             "converged" if converged else "stopped", it, ratio)
    if not converged and raise_on_failure:
        raise NotConverged(f"ADR residual {ratio:.3e} > {tol:.1e} after {it} iterations", history)
    return result
