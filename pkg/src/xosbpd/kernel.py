"""Corrected hydrostatic and deviatoric influence functions.

For every family the spherical influence values are shifted by a quadratic
form in the bond vector, ``omega = omega_s + lambda . basis(xi)``, with the
multipliers chosen so the discrete moment constraints hold exactly:

* hydrostatic: ``sum omega_h xi_a xi_b V = delta_ab`` so the nonlocal
  dilatation reproduces ``tr(eps)`` for any affine field;
* deviatoric: the fourth moments ``sum omega_d xi_i xi_j xi_m xi_n / |xi|^2 V``
  take the isotropic values 3/2 (``iiii``), 1/2 (``iijj``) and 0 otherwise,
  so the deviatoric energy reproduces ``eps_d : eps_d``.

The moment matrices are assembled in scaled units (bond vectors divided by the
longest bond, volumes by the family volume) and factored with partial
pivoting; a family is declared singular when a pivot falls below
``PIVOT_RTOL`` times the largest diagonal entry.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numba as nb
import numpy as np

from .discretization import FamilyGraph, NodeSet
from .errors import EmptyFamily, KernelFallback, SingularSystem

PIVOT_RTOL = 1e-12
CACHE_VERSION = 1


@dataclass(frozen=True)
class WeightFunction:
    """Radial influence ``omega(|xi|)``; ``constant`` means omega = 1."""

    kind: str = "constant"
    profile: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "constant"

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "constant":
            return np.ones_like(r)
        out = np.asarray(self.profile(r), dtype=float)
        if np.any(~(out > 0)):
            raise ValueError(f"weight function {self.name!r} must be positive on (0, delta]")
        return out

    @classmethod
    def from_name(cls, name):
        """``constant`` (omega = 1) or ``inverse`` (omega = 1/|xi|)."""
        if name in (None, "constant", "1"):
            return cls()
        if name == "inverse":
            return cls("profile", lambda r: 1.0 / r, "inverse")
        raise ValueError(f"unknown weight function {name!r}")


# ---------------------------------------------------------------------------
# moment bases

HYDRO_TARGET = {
    2: np.array([1.0, 1.0, 0.0]),
    3: np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0]),
}
DEVIA_TARGET = {
    2: np.array([1.5, 1.5, 0.5, 0.0, 0.0]),
    3: np.array([1.5, 1.5, 1.5, 0.5, 0.5, 0.5] + [0.0] * 9),
}


def hydro_basis(xi):
    """Quadratic monomials, ordered (x², y², xy) or (x², y², z², xy, yz, zx)."""
    xi = np.atleast_2d(xi)
    x, y = xi[:, 0], xi[:, 1]
    if xi.shape[1] == 2:
        return np.column_stack([x * x, y * y, x * y])
    z = xi[:, 2]
    return np.column_stack([x * x, y * y, z * z, x * y, y * z, z * x])


def devia_basis(xi):
    """Quartic monomials over |xi|², in the order used by the constraint list."""
    xi = np.atleast_2d(xi)
    r2 = np.einsum("ij,ij->i", xi, xi)
    x, y = xi[:, 0], xi[:, 1]
    if xi.shape[1] == 2:
        cols = [x**4, y**4, x * x * y * y, x**3 * y, y**3 * x]
    else:
        z = xi[:, 2]
        cols = [
            x**4, y**4, z**4,
            x * x * y * y, y * y * z * z, z * z * x * x,
            x**3 * y, x**3 * z, y**3 * x, y**3 * z, z**3 * x, z**3 * y,
            x * x * y * z, y * y * x * z, z * z * x * y,
        ]
    return np.column_stack(cols) / r2[:, None]


@nb.njit(cache=True)
def _hydro_row(x, y, z, dim, out):
    if dim == 2:
        out[0] = x * x
        out[1] = y * y
        out[2] = x * y
    else:
        out[0] = x * x
        out[1] = y * y
        out[2] = z * z
        out[3] = x * y
        out[4] = y * z
        out[5] = z * x


@nb.njit(cache=True)
def _devia_row(x, y, z, dim, out):
    r2 = x * x + y * y + z * z
    if dim == 2:
        out[0] = x**4 / r2
        out[1] = y**4 / r2
        out[2] = x * x * y * y / r2
        out[3] = x**3 * y / r2
        out[4] = y**3 * x / r2
    else:
        out[0] = x**4 / r2
        out[1] = y**4 / r2
        out[2] = z**4 / r2
        out[3] = x * x * y * y / r2
        out[4] = y * y * z * z / r2
        out[5] = z * z * x * x / r2
        out[6] = x**3 * y / r2
        out[7] = x**3 * z / r2
        out[8] = y**3 * x / r2
        out[9] = y**3 * z / r2
        out[10] = z**3 * x / r2
        out[11] = z**3 * y / r2
        out[12] = x * x * y * z / r2
        out[13] = y * y * x * z / r2
        out[14] = z * z * x * y / r2


@nb.njit(cache=True)
def _lu_solve(a, b, rtol):
    """Gaussian elimination with partial pivoting plus one refinement step.

    Returns (x, ok, min_pivot_ratio).  ``a`` and ``b`` are left untouched.
    """
    n = a.shape[0]
    lu = a.copy()
    piv = np.arange(n)
    dmax = 0.0
    for k in range(n):
        if abs(a[k, k]) > dmax:
            dmax = abs(a[k, k])
    if dmax == 0.0:
        return np.zeros(n), False, 0.0
    minratio = np.inf
    for k in range(n):
        p = k
        best = abs(lu[k, k])
        for r in range(k + 1, n):
            if abs(lu[r, k]) > best:
                best = abs(lu[r, k])
                p = r
        ratio = best / dmax
        if ratio < minratio:
            minratio = ratio
        if ratio < rtol:
            return np.zeros(n), False, minratio
        if p != k:
            for c in range(n):
                tmp = lu[k, c]
                lu[k, c] = lu[p, c]
                lu[p, c] = tmp
            t = piv[k]
            piv[k] = piv[p]
            piv[p] = t
        for r in range(k + 1, n):
            f = lu[r, k] / lu[k, k]
            lu[r, k] = f
            for c in range(k + 1, n):
                lu[r, c] -= f * lu[k, c]
    x = _lu_apply(lu, piv, b)
    # one step of iterative refinement
    res = b - a @ x
    x = x + _lu_apply(lu, piv, res)
    return x, True, minratio


@nb.njit(cache=True)
def _lu_apply(lu, piv, b):
    n = lu.shape[0]
    y = np.empty(n)
    for i in range(n):
        s = b[piv[i]]
        for c in range(i):
            s -= lu[i, c] * y[c]
        y[i] = s
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for c in range(i + 1, n):
            s -= lu[i, c] * x[c]
        x[i] = s / lu[i, i]
    return x


@nb.njit(cache=True)
def _solve_family(xi, vol, omega_s, target, kind, dim, rtol):
    """Multipliers for one family; kind 0 = hydrostatic, 1 = deviatoric.

    Returns (lam_scaled, omega, ok, min_pivot, scale) where ``omega`` holds the
    corrected per-bond values and ``lam_scaled`` multiplies the basis of the
    scaled bond vectors ``xi / scale``.
    """
    nbond = xi.shape[0]
    k = target.shape[0]
    scale = 0.0
    vsum = 0.0
    for b in range(nbond):
        r = 0.0
        for a in range(dim):
            r += xi[b, a] * xi[b, a]
        r = np.sqrt(r)
        if r > scale:
            scale = r
        vsum += vol[b]
    amat = np.zeros((k, k))
    rhs = np.zeros(k)
    basis = np.empty((nbond, k))
    row = np.empty(k)
    s2 = scale * scale
    for b in range(nbond):
        x = xi[b, 0] / scale
        y = xi[b, 1] / scale
        z = xi[b, 2] / scale if dim == 3 else 0.0
        if kind == 0:
            _hydro_row(x, y, z, dim, row)
        else:
            _devia_row(x, y, z, dim, row)
        w = vol[b] / vsum
        for p in range(k):
            basis[b, p] = row[p]
            # moment of the spherical part, in scaled units
            rhs[p] -= omega_s[b] * row[p] * vol[b] * s2
            for q in range(k):
                amat[p, q] += row[p] * row[q] * w
    for p in range(k):
        rhs[p] += target[p]
        rhs[p] /= s2 * vsum
    lam, ok, minpiv = _lu_solve(amat, rhs, rtol)
    omega = omega_s.copy()
    if ok:
        for b in range(nbond):
            acc = 0.0
            for p in range(k):
                acc += lam[p] * basis[b, p]
            omega[b] += acc
    return lam, omega, ok, minpiv, scale


@nb.njit(cache=True)
def _all_families(offsets, xi, vol_j, omega_s, active, target, kind, dim, rtol,
                  omega_out, lam_out, ok_out, piv_out):
    n = offsets.shape[0] - 1
    for i in range(n):
        lo, hi = offsets[i], offsets[i + 1]
        cnt = 0
        for b in range(lo, hi):
            if active[b]:
                cnt += 1
        if cnt == 0:
            ok_out[i] = False
            piv_out[i] = 0.0
            continue
        idx = np.empty(cnt, dtype=np.int64)
        c = 0
        for b in range(lo, hi):
            if active[b]:
                idx[c] = b
                c += 1
        sub_xi = np.empty((cnt, dim))
        sub_v = np.empty(cnt)
        sub_w = np.empty(cnt)
        for c in range(cnt):
            b = idx[c]
            for a in range(dim):
                sub_xi[c, a] = xi[b, a]
            sub_v[c] = vol_j[b]
            sub_w[c] = omega_s[b]
        lam, om, ok, minpiv, scale = _solve_family(sub_xi, sub_v, sub_w, target, kind, dim, rtol)
        ok_out[i] = ok
        piv_out[i] = minpiv
        if ok:
            s2 = scale * scale
            for p in range(lam.shape[0]):
                lam_out[i, p] = lam[p] / s2
            for c in range(cnt):
                omega_out[idx[c]] = om[c]


# ---------------------------------------------------------------------------
# per-family primitives

def weighted_volume(xi, vol, weight: WeightFunction = WeightFunction()):
    """Discrete weighted volume ``sum omega(|xi|) |xi|^2 V`` of one family."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    vol = np.atleast_1d(np.asarray(vol, dtype=float))
    if xi.shape[0] == 0:
        raise EmptyFamily("weighted volume of an empty family")
    r = np.linalg.norm(xi, axis=1)
    return float(np.sum(weight(r) * r * r * vol))


def spherical_influence(m, n_d, omega=1.0):
    """Spherical hydrostatic and deviatoric influence values."""
    return n_d / m * omega, n_d * (n_d + 2) / (2.0 * m) * omega


def _solve_one(xi, vol, omega_s, kind):
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    dim = xi.shape[1]
    vol = np.asarray(vol, dtype=float)
    omega_s = np.broadcast_to(np.asarray(omega_s, dtype=float), vol.shape).copy()
    target = (HYDRO_TARGET if kind == 0 else DEVIA_TARGET)[dim]
    lam, omega, ok, minpiv, scale = _solve_family(
        np.ascontiguousarray(xi), vol, omega_s, target, kind, dim, PIVOT_RTOL)
    name = "hydrostatic" if kind == 0 else "deviatoric"
    if not ok:
        raise SingularSystem(f"{name} moment matrix is singular (pivot ratio {minpiv:.3e})", minpiv)
    return lam / scale**2, omega


def solve_hydro_multipliers(xi, vol, weight: WeightFunction = WeightFunction()):
    """Return ``(lambda_h, omega_h)`` for one family of bond vectors ``xi``."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    m = weighted_volume(xi, vol, weight)
    ws, _ = spherical_influence(m, xi.shape[1], weight(np.linalg.norm(xi, axis=1)))
    return _solve_one(xi, vol, ws, 0)


def solve_devia_multipliers(xi, vol, weight: WeightFunction = WeightFunction()):
    """Return ``(lambda_d, omega_d)`` for one family of bond vectors ``xi``."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    m = weighted_volume(xi, vol, weight)
    _, ws = spherical_influence(m, xi.shape[1], weight(np.linalg.norm(xi, axis=1)))
    return _solve_one(xi, vol, ws, 1)


def family_residuals(xi, vol, omega_h, omega_d):
    """Discrete constraint residuals ``(h, d)`` of one family.

    Entries whose target is nonzero are normalized by that target.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    dim = xi.shape[1]
    vol = np.asarray(vol, dtype=float)
    bh = hydro_basis(xi)
    bd = devia_basis(xi)
    ht = HYDRO_TARGET[dim]
    dt = DEVIA_TARGET[dim]
    h = (np.asarray(omega_h) * vol) @ bh - ht
    d = (np.asarray(omega_d) * vol) @ bd - dt
    h = h / np.where(ht != 0, ht, 1.0)
    d = d / np.where(dt != 0, dt, 1.0)
    return h, d


# ---------------------------------------------------------------------------
# whole-body kernels

@dataclass(frozen=True)
class KernelData:
    weighted_volume: np.ndarray
    lambda_h: np.ndarray
    lambda_d: np.ndarray
    omega_h: np.ndarray
    omega_d: np.ndarray
    omega_h_s: np.ndarray
    omega_d_s: np.ndarray
    hydro_fallback: np.ndarray
    singular_fallback: np.ndarray
    active: np.ndarray
    min_pivot: np.ndarray
    model: str = "xosbpd"
    bond_fallback: np.ndarray | None = None

    @property
    def force_omega_h(self):
        """Hydrostatic influence used in the force state (fallback-aware)."""
        return self._force(self.omega_h, self.omega_h_s)

    @property
    def force_omega_d(self):
        return self._force(self.omega_d, self.omega_d_s)

    def _force(self, corrected, spherical):
        if self.bond_fallback is None:
            return corrected
        return np.where(self.bond_fallback, spherical, corrected)

    @property
    def negative_omega_d(self) -> int:
        return int(np.count_nonzero(self.active & (self.omega_d < 0)))

    def conditioning(self):
        """Largest scaled multiplier magnitude over all families."""
        return float(np.max(np.abs(self.lambda_h), initial=0.0)), float(
            np.max(np.abs(self.lambda_d), initial=0.0))


def _bond_fallback_mask(graph: FamilyGraph, node_flag):
    return np.repeat(node_flag, np.diff(graph.offsets))


def compute_kernels(nodes: NodeSet, graph: FamilyGraph, weight: WeightFunction = WeightFunction(),
                    model="xosbpd", include_broken=False, warn=True) -> KernelData:
    """Per-family weighted volumes and influence functions for the whole body.

    ``model`` is ``xosbpd`` (corrected) or ``osbpd`` (spherical values only).
    Bonds already broken in ``graph`` are left out of the moment sums unless
    ``include_broken`` is set.
    """
    if model not in ("xosbpd", "osbpd", "lbbpd"):
        raise ValueError(f"unknown model {model!r}")
    dim = nodes.dimension
    n = nodes.n_nodes
    active = np.ones(graph.n_bonds, dtype=bool) if include_broken else ~graph.broken
    owner = graph.owner
    vol_j = nodes.cell_measure[graph.neighbors]
    w = weight(graph.bond_len)
    m = np.bincount(owner, weights=np.where(active, w * graph.bond_len**2 * vol_j, 0.0), minlength=n)
    empty = m <= 0
    m_safe = np.where(empty, 1.0, m)
    ws_h = dim / m_safe[owner] * w
    ws_d = dim * (dim + 2) / (2.0 * m_safe[owner]) * w
    kh = HYDRO_TARGET[dim].size
    kd = DEVIA_TARGET[dim].size
    lam_h = np.zeros((n, kh))
    lam_d = np.zeros((n, kd))
    om_h = ws_h.copy()
    om_d = ws_d.copy()
    singular = np.zeros(n, dtype=bool)
    min_pivot = np.ones(n)
    if model == "xosbpd":
        ok_h = np.ones(n, dtype=bool)
        ok_d = np.ones(n, dtype=bool)
        piv_h = np.ones(n)
        piv_d = np.ones(n)
        xi = np.ascontiguousarray(graph.bond_xi)
        _all_families(graph.offsets, xi, vol_j, ws_h, active, HYDRO_TARGET[dim], 0, dim,
                      PIVOT_RTOL, om_h, lam_h, ok_h, piv_h)
        _all_families(graph.offsets, xi, vol_j, ws_d, active, DEVIA_TARGET[dim], 1, dim,
                      PIVOT_RTOL, om_d, lam_d, ok_d, piv_d)
        singular = ~(ok_h & ok_d) & ~empty
        min_pivot = np.minimum(piv_h, piv_d)
        if singular.any():
            # both sides fall back to the spherical values
            bond_sing = _bond_fallback_mask(graph, singular)
            om_h[bond_sing] = ws_h[bond_sing]
            om_d[bond_sing] = ws_d[bond_sing]
            lam_h[singular] = 0.0
            lam_d[singular] = 0.0
            if warn:
                warnings.warn(KernelFallback(
                    f"{int(singular.sum())} famil(ies) with singular moment matrices use "
                    f"spherical influence values: {np.flatnonzero(singular)[:10].tolist()}"),
                    stacklevel=2)
    kernels = KernelData(m, lam_h, lam_d, om_h, om_d, ws_h, ws_d,
                         np.zeros(n, dtype=bool), singular, active, min_pivot, model)
    if model == "xosbpd":
        kernels = sanitize_hydro(kernels, graph)
    return kernels


def sanitize_hydro(kernels: KernelData, graph: FamilyGraph) -> KernelData:
    """Flag families holding a negative active omega_h.

    Flagged families use the spherical pair in the force state; the dilatation
    keeps the corrected omega_h.
    """
    neg = kernels.active & (kernels.omega_h < 0)
    flag = np.bincount(graph.owner, weights=neg.astype(float), minlength=graph.n_nodes) > 0
    return replace(kernels, hydro_fallback=flag, bond_fallback=_bond_fallback_mask(graph, flag))


def constraint_residuals(nodes: NodeSet, graph: FamilyGraph, kernels: KernelData, i,
                         spherical=False):
    """Residuals ``(h, d)`` of family ``i`` over its active bonds."""
    lo, hi = graph.offsets[i], graph.offsets[i + 1]
    act = kernels.active[lo:hi]
    xi = graph.bond_xi[lo:hi][act]
    vol = nodes.cell_measure[graph.neighbors[lo:hi]][act]
    if spherical:
        wh, wd = kernels.omega_h_s[lo:hi][act], kernels.omega_d_s[lo:hi][act]
    else:
        wh, wd = kernels.omega_h[lo:hi][act], kernels.omega_d[lo:hi][act]
    return family_residuals(xi, vol, wh, wd)


def all_residuals(nodes: NodeSet, graph: FamilyGraph, kernels: KernelData, spherical=False):
    """Max |h_k| and max |d_k| per family (vectorized)."""
    dim = nodes.dimension
    owner = graph.owner
    act = kernels.active
    vol = nodes.cell_measure[graph.neighbors] * act
    wh = kernels.omega_h_s if spherical else kernels.omega_h
    wd = kernels.omega_d_s if spherical else kernels.omega_d
    n = graph.n_nodes
    ht, dt = HYDRO_TARGET[dim], DEVIA_TARGET[dim]
    bh = hydro_basis(graph.bond_xi) * (wh * vol)[:, None]
    hsum = np.stack([np.bincount(owner, weights=bh[:, k], minlength=n) for k in range(ht.size)], 1)
    del bh
    bd = devia_basis(graph.bond_xi) * (wd * vol)[:, None]
    dsum = np.stack([np.bincount(owner, weights=bd[:, k], minlength=n) for k in range(dt.size)], 1)
    h = (hsum - ht) / np.where(ht != 0, ht, 1.0)
    d = (dsum - dt) / np.where(dt != 0, dt, 1.0)
    return np.abs(h).max(axis=1), np.abs(d).max(axis=1)


# ---------------------------------------------------------------------------
# cache

def kernel_cache_key(nodes: NodeSet, graph: FamilyGraph, weight: WeightFunction, m_factor,
                     model="xosbpd", include_broken=False):
    h = hashlib.sha256()
    h.update(f"v{CACHE_VERSION}|{weight.name}|{m_factor!r}|{model}|{include_broken}".encode())
    for arr in (nodes.positions, nodes.cell_measure, nodes.horizon_radius, graph.offsets,
                graph.neighbors, graph.broken):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def save_kernels(path, kernels: KernelData, key):
    arrays = {k: v for k, v in kernels.__dict__.items() if isinstance(v, np.ndarray)}
    np.savez_compressed(path, __key__=np.array(key), __version__=np.array(CACHE_VERSION),
                        __model__=np.array(kernels.model), **arrays)


def load_kernels(path, graph: FamilyGraph, key):
    """Load a cached kernel file; returns None when missing or stale."""
    path = Path(path)
    if not path.exists():
        return None
    with np.load(path, allow_pickle=False) as data:
        if str(data["__key__"]) != key or int(data["__version__"]) != CACHE_VERSION:
            return None
        fields = {k: data[k] for k in data.files if not k.startswith("__")}
        model = str(data["__model__"])
    return KernelData(model=model, **fields)
