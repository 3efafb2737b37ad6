"""Kinematics, dilatation, strain energy, force states, failure and damage.

The bond loops are numba kernels over the CSR families.  Every node sums its
own bonds in storage order, so results do not depend on the thread count.
Evaluation is two-phase: phase A computes extensions and dilatations for all
nodes, phase B the scalar force states and the internal force density, which
needs both end-points' dilatations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .discretization import FamilyGraph, NodeSet
from .errors import DegenerateBond
from .kernel import KernelData

REGIMES = ("3d", "plane_strain", "plane_stress")


@dataclass(frozen=True)
class MaterialParams:
    youngs_modulus: float
    poisson_ratio: float
    mass_density: float = 1.0
    fracture_energy: float | None = None
    regime: str = "plane_strain"
    critical_stretch: float | None = None

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if not self.youngs_modulus > 0:
            raise ValueError("Young's modulus must be positive")
        if not -1.0 < self.poisson_ratio < 0.5:
            raise ValueError("Poisson's ratio must lie in (-1, 0.5)")
        if not self.mass_density > 0:
            raise ValueError("mass density must be positive")

    @property
    def bulk_modulus(self) -> float:
        E, nu = self.youngs_modulus, self.poisson_ratio
        if self.regime == "3d":
            return E / (3.0 * (1.0 - 2.0 * nu))
        if self.regime == "plane_strain":
            return E / (2.0 * (1.0 + nu) * (1.0 - 2.0 * nu))
        return E / (2.0 * (1.0 - nu))

    @property
    def shear_modulus(self) -> float:
        return self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))

    @property
    def dimension(self) -> int:
        return 3 if self.regime == "3d" else 2

    def bbpd_constant(self, delta):
        """Bond-based micromodulus C for horizon ``delta``."""
        E, nu = self.youngs_modulus, self.poisson_ratio
        delta = np.asarray(delta, dtype=float)
        if self.regime == "plane_stress":
            return 6.0 * E / (np.pi * delta**3 * (1.0 - nu))
        if self.regime == "plane_strain":
            return 6.0 * E / (np.pi * delta**3 * (1.0 + nu) * (1.0 - 2.0 * nu))
        return 18.0 * self.bulk_modulus / (np.pi * delta**4)

    def critical_stretch_for(self, delta):
        """Critical stretch; the closed form exists for plane strain only."""
        if self.critical_stretch is not None:
            return np.broadcast_to(float(self.critical_stretch), np.shape(delta)).astype(float)
        if self.regime != "plane_strain" or self.fracture_energy is None:
            raise ValueError(
                "critical_stretch must be given explicitly unless the regime is plane strain "
                "and fracture_energy is set")
        delta = np.asarray(delta, dtype=float)
        return np.sqrt(5.0 * np.pi * self.fracture_energy / (12.0 * self.youngs_modulus * delta))


@dataclass
class MechState:
    displacement: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    body_force: np.ndarray
    broken: np.ndarray
    dilatation: np.ndarray = None
    sed: np.ndarray = None
    damage: np.ndarray = None
    stretch: np.ndarray = None
    time: float = 0.0
    step: int = 0

    @classmethod
    def zeros(cls, nodes: NodeSet, graph: FamilyGraph):
        n, d = nodes.n_nodes, nodes.dimension
        z = np.zeros((n, d))
        return cls(z.copy(), z.copy(), z.copy(), z.copy(), graph.broken.copy(),
                   np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(graph.n_bonds))


@dataclass
class ForceField:
    internal_force_density: np.ndarray
    scalar_force: np.ndarray
    direction: np.ndarray = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# single-bond primitives

def kinematics(xi, eta):
    """Return ``(eta, |Y|, e, S)`` for one bond."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    xlen = float(np.linalg.norm(xi))
    if xlen <= 0:
        raise DegenerateBond("reference bond length must be positive")
    ylen = float(np.linalg.norm(xi + eta))
    if ylen == 0.0:
        raise DegenerateBond("deformed bond has zero length")
    e = ylen - xlen
    return eta, ylen, e, e / xlen


def dilatation(xi, eta, vol, omega_h):
    """theta = sum omega_h |xi| e V over the intact bonds passed in."""
    xi = np.atleast_2d(xi)
    if xi.shape[0] == 0:
        return 0.0
    xlen = np.linalg.norm(xi, axis=1)
    e = np.linalg.norm(xi + np.atleast_2d(eta), axis=1) - xlen
    return float(np.sum(omega_h * xlen * e * vol))


def deviatoric_extension(e, xlen, theta, n_d):
    return e - theta * xlen / n_d


def strain_energy_density(xi, eta, vol, omega_h, omega_d, kappa, mu):
    xi = np.atleast_2d(xi)
    n_d = xi.shape[1]
    theta = dilatation(xi, eta, vol, omega_h)
    xlen = np.linalg.norm(xi, axis=1)
    e = np.linalg.norm(xi + np.atleast_2d(eta), axis=1) - xlen
    ed = deviatoric_extension(e, xlen, theta, n_d)
    return 0.5 * kappa * theta**2 + mu * float(np.sum(omega_d * ed * ed * vol))


def scalar_force_state(xlen, omega_h, omega_d, theta, ed, kappa, mu):
    """t = kappa omega_h |xi| theta + 2 mu omega_d e_d."""
    return kappa * omega_h * xlen * theta + 2.0 * mu * omega_d * ed


def local_energy_density(strain, kappa, mu):
    """Classical isotropic energy with the deviator taken in the strain's own dimension."""
    eps = np.asarray(strain, dtype=float)
    n_d = eps.shape[0]
    tr = np.trace(eps)
    dev = eps - tr / n_d * np.eye(n_d)
    return 0.5 * kappa * tr**2 + mu * float(np.sum(dev * dev))


# ---------------------------------------------------------------------------
# numba kernels

@nb.njit(cache=True, parallel=True)
def _phase_a(offsets, nbr, xi, xlen, volj, u, intact, omega_h, theta, ylen, ext):
    n = offsets.shape[0] - 1
    dim = xi.shape[1]
    bad = 0
    for i in nb.prange(n):
        acc = 0.0
        for b in range(offsets[i], offsets[i + 1]):
            j = nbr[b]
            s = 0.0
            for a in range(dim):
                y = xi[b, a] + (u[j, a] - u[i, a])
                s += y * y
            yl = math.sqrt(s)
            ylen[b] = yl
            e = yl - xlen[b]
            ext[b] = e
            if intact[b]:
                if yl == 0.0:
                    bad += 1
                acc += omega_h[b] * xlen[b] * e * volj[b]
        theta[i] = acc
    return bad


@nb.njit(cache=True, parallel=True)
def _scalar_states(offsets, xlen, intact, ext, theta, kappa, mu, wh, wd, n_d, tforce):
    n = offsets.shape[0] - 1
    for i in nb.prange(n):
        th = theta[i]
        for b in range(offsets[i], offsets[i + 1]):
            if intact[b]:
                ed = ext[b] - th * xlen[b] / n_d
                tforce[b] = kappa * wh[b] * xlen[b] * th + 2.0 * mu * wd[b] * ed
            else:
                tforce[b] = 0.0


@nb.njit(cache=True, parallel=True)
def _gather_forces(offsets, nbr, xi, volj, reverse, u, intact, ylen, tforce, out):
    n = offsets.shape[0] - 1
    dim = xi.shape[1]
    for i in nb.prange(n):
        for a in range(dim):
            out[i, a] = 0.0
        for b in range(offsets[i], offsets[i + 1]):
            if not intact[b]:
                continue
            j = nbr[b]
            f = (tforce[b] + tforce[reverse[b]]) * volj[b] / ylen[b]
            for a in range(dim):
                out[i, a] += f * (xi[b, a] + (u[j, a] - u[i, a]))


@nb.njit(cache=True, parallel=True)
def _lbbpd_forces(offsets, nbr, xi, xlen, volj, cbond, u, intact, out):
    n = offsets.shape[0] - 1
    dim = xi.shape[1]
    for i in nb.prange(n):
        for a in range(dim):
            out[i, a] = 0.0
        for b in range(offsets[i], offsets[i + 1]):
            if not intact[b]:
                continue
            j = nbr[b]
            proj = 0.0
            for a in range(dim):
                proj += xi[b, a] * (u[j, a] - u[i, a])
            f = cbond[b] * proj / xlen[b] ** 3 * volj[b]
            for a in range(dim):
                out[i, a] += f * xi[b, a]


@nb.njit(cache=True, parallel=True)
def _sed(offsets, xlen, volj, intact, ext, theta, kappa, mu, wd, n_d, out):
    n = offsets.shape[0] - 1
    for i in nb.prange(n):
        th = theta[i]
        acc = 0.0
        for b in range(offsets[i], offsets[i + 1]):
            if intact[b]:
                ed = ext[b] - th * xlen[b] / n_d
                acc += wd[b] * ed * ed * volj[b]
        out[i] = 0.5 * kappa * th * th + mu * acc


# ---------------------------------------------------------------------------
# body-level evaluation

class Body:
    """Discretized body with frozen kernels, ready for force evaluation.

    ``model`` selects the constitutive law: ``xosbpd`` and ``osbpd`` differ
    only in the kernels passed in; ``lbbpd`` is the linearized bond-based
    model (kernels then only feed the reported dilatation).
    """

    def __init__(self, nodes: NodeSet, graph: FamilyGraph, kernels: KernelData,
                 material: MaterialParams, model=None):
        self.nodes = nodes
        self.graph = graph
        self.kernels = kernels
        self.material = material
        self.model = model or kernels.model
        self.dim = nodes.dimension
        self.volj = np.ascontiguousarray(nodes.cell_measure[graph.neighbors])
        self.xi = np.ascontiguousarray(graph.bond_xi)
        self.xlen = np.ascontiguousarray(graph.bond_len)
        self.owner = graph.owner
        self.kappa = material.bulk_modulus
        self.mu = material.shear_modulus
        self.set_kernels(kernels)
        delta = nodes.horizon_radius
        self.bond_delta = 0.5 * (delta[self.owner] + delta[graph.neighbors])
        self.cbond = np.ascontiguousarray(material.bbpd_constant(self.bond_delta))
        self._theta = np.zeros(nodes.n_nodes)
        self._ylen = np.zeros(graph.n_bonds)
        self._ext = np.zeros(graph.n_bonds)
        self._t = np.zeros(graph.n_bonds)

    def set_kernels(self, kernels: KernelData):
        self.kernels = kernels
        self.omega_h = np.ascontiguousarray(kernels.omega_h)
        self.force_wh = np.ascontiguousarray(kernels.force_omega_h)
        self.force_wd = np.ascontiguousarray(kernels.force_omega_d)
        # energy reporting keeps the corrected deviatoric influence everywhere
        self.energy_wd = np.ascontiguousarray(kernels.omega_d)

    @property
    def n_nodes(self):
        return self.nodes.n_nodes

    def phase_a(self, u, broken):
        """Extensions, deformed lengths and dilatation for every node."""
        g = self.graph
        u = np.ascontiguousarray(u, dtype=float)
        intact = ~broken
        bad = _phase_a(g.offsets, g.neighbors, self.xi, self.xlen, self.volj, u, intact,
                       self.omega_h, self._theta, self._ylen, self._ext)
        if bad:
            raise DegenerateBond(f"{bad} intact bond(s) collapsed to zero length")
        return self._theta, self._ext, self._ylen

    def internal_forces(self, u, broken) -> ForceField:
        """Internal force density L per node (two-phase evaluation)."""
        g = self.graph
        u = np.ascontiguousarray(u, dtype=float)
        intact = ~broken
        out = np.empty_like(u)
        if self.model == "lbbpd":
            self.phase_a(u, broken)
            _lbbpd_forces(g.offsets, g.neighbors, self.xi, self.xlen, self.volj, self.cbond, u,
                          intact, out)
            # pairwise bond force c s, reported in place of the state-based scalar
            np.multiply(self.cbond, np.where(intact, self._ext / self.xlen, 0.0), out=self._t)
            return ForceField(out, self._t)
        theta, ext, ylen = self.phase_a(u, broken)
        _scalar_states(g.offsets, self.xlen, intact, ext, theta, self.kappa, self.mu,
                         self.force_wh, self.force_wd, float(self.dim), self._t)
        _gather_forces(g.offsets, g.neighbors, self.xi, self.volj, g.reverse, u, intact, ylen,
                       self._t, out)
        return ForceField(out, self._t)

    def strain_energy(self, u, broken):
        """Per-node strain energy density (after phase A)."""
        g = self.graph
        theta, ext, _ = self.phase_a(u, broken)
        out = np.empty(self.n_nodes)
        if self.model == "lbbpd":
            s = ext / self.xlen
            w = np.where(broken, 0.0, 0.25 * self.cbond * s * s * self.xlen * self.volj)
            return np.bincount(self.owner, weights=w, minlength=self.n_nodes)
        _sed(g.offsets, self.xlen, self.volj, ~broken, ext, theta, self.kappa, self.mu,
             self.energy_wd, float(self.dim), out)
        return out

    def dilatation(self, u, broken):
        return self.phase_a(u, broken)[0].copy()

    def stretch(self, u, broken):
        _, ext, _ = self.phase_a(u, broken)
        return ext / self.xlen

    def damage(self, broken):
        return damage(self.graph, self.nodes, broken)


def internal_forces(body: Body, state: MechState) -> ForceField:
    return body.internal_forces(state.displacement, state.broken)


def damage(graph: FamilyGraph, nodes: NodeSet, broken):
    """1 - intact neighbor volume / total neighbor volume, per node."""
    owner = graph.owner
    volj = nodes.cell_measure[graph.neighbors]
    total = np.bincount(owner, weights=volj, minlength=graph.n_nodes)
    intact = np.bincount(owner, weights=np.where(broken, 0.0, volj), minlength=graph.n_nodes)
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = np.where(total > 0, 1.0 - intact / total, 0.0)
    return np.clip(phi, 0.0, 1.0)


def update_failure(graph: FamilyGraph, stretch, critical, broken):
    """Break every intact bond with S > S0 (strict); flags never heal.

    ``critical`` is a scalar or per-bond array.  Returns the updated flags
    and the number of bonds newly broken (counted once per pair).
    """
    owner = graph.owner
    lower = owner < graph.neighbors
    new = lower & ~broken & (stretch > critical)
    out = broken.copy()
    out[new] = True
    out[graph.reverse[new]] = True
    return out, int(np.count_nonzero(new))
