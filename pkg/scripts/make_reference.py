"""Generate the bundled elasticity reference for the plate and block presets.

Independent of the peridynamics code: bilinear quads (plane stress) for the
plate and trilinear hexahedra for the block, both on a fine graded O-grid.
Faces x = +-L/2 carry u_x = +-u0 with the other components free, as in the
presets.  Results are resampled on a polar grid around the hole
(beta in degrees, radius) and written to ``src/xosbpd/data``; the block is
sampled on its mid-plane z = depth/2 and on its top face z = depth.

    python3 scripts/make_reference.py [--check]
"""

from __future__ import annotations

import argparse
import pathlib
import time

import numpy as np
from scipy.interpolate import LinearNDInterpolator
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import spsolve

L, R, U0 = 1.0, 0.1, 5e-4
E, NU = 70e9, 0.33
DEPTH = 0.3
BETA = np.arange(0.0, 360.0 + 0.5, 1.0)
RADII = np.linspace(R, 0.2, 41)
OUT = pathlib.Path(__file__).resolve().parents[1] / "src" / "xosbpd" / "data"


def ogrid(n_theta, n_radial, grade=1.0):
    """Vertices (n_radial+1, n_theta, 2) between the hole and the square edge."""
    half = 0.5 * L
    s = (np.arange(n_theta) * 8.0 * half / n_theta + half) % (8.0 * half)
    side, t = np.divmod(s, 2.0 * half)
    t = t - half
    outer = np.select(
        [side[:, None] == 0, side[:, None] == 1, side[:, None] == 2],
        [np.column_stack([np.full_like(t, half), t]),
         np.column_stack([-t, np.full_like(t, half)]),
         np.column_stack([np.full_like(t, -half), -t])],
        np.column_stack([t, np.full_like(t, -half)]))
    phi = np.arctan2(outer[:, 1], outer[:, 0])
    inner = R * np.column_stack([np.cos(phi), np.sin(phi)])
    # geometric radial grading, first cell ~ square at the hole
    first = grade * 2.0 * np.pi * R / n_theta / (half - R)
    lo, hi = 1.0 + 1e-12, 2.0
    for _ in range(200):
        g = 0.5 * (lo + hi)
        if first * (g ** n_radial - 1.0) / (g - 1.0) < 1.0:
            lo = g
        else:
            hi = g
    s = (g ** np.arange(n_radial + 1) - 1.0) / (g ** n_radial - 1.0)
    return (1.0 - s)[:, None, None] * inner[None] + s[:, None, None] * outer[None]


def quad_connectivity(nr, nt):
    idx = np.arange((nr + 1) * nt).reshape(nr + 1, nt)
    a = idx[:-1]
    b = np.roll(idx[:-1], -1, axis=1)
    c = np.roll(idx[1:], -1, axis=1)
    d = idx[1:]
    # counter-clockwise: outward first, then around
    return np.stack([a, d, c, b], axis=-1).reshape(-1, 4)


def gauss(n_dim):
    g = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    pts = np.array(np.meshgrid(*([g] * n_dim), indexing="ij")).reshape(n_dim, -1).T
    return pts


def shape_grads(pts, n_dim):
    """dN/dxi at each gauss point for the bilinear/trilinear element."""
    if n_dim == 2:
        corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], float)
    else:
        corners = np.array([[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
                            [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]], float)
    out = np.empty((pts.shape[0], corners.shape[0], n_dim))
    for k in range(n_dim):
        term = corners[None, :, k] / 2.0 ** n_dim
        for m in range(n_dim):
            if m != k:
                term = term * (1.0 + corners[None, :, m] * pts[:, None, m])
        out[:, :, k] = term
    return out


def elasticity_matrix(n_dim):
    if n_dim == 2:
        f = E / (1.0 - NU ** 2)
        return f * np.array([[1, NU, 0], [NU, 1, 0], [0, 0, (1 - NU) / 2]])
    lam = E * NU / ((1 + NU) * (1 - 2 * NU))
    mu = E / (2 * (1 + NU))
    D = np.zeros((6, 6))
    D[:3, :3] = lam
    D[np.arange(3), np.arange(3)] += 2 * mu
    D[np.arange(3, 6), np.arange(3, 6)] = mu
    return D


def element_matrices(xe, D, pts, dN):
    ne, npe, n_dim = xe.shape
    nstr = D.shape[0]
    ke = np.zeros((ne, npe * n_dim, npe * n_dim))
    for q in range(pts.shape[0]):
        J = np.einsum("ni,enj->eij", dN[q], xe)
        detJ = np.linalg.det(J)
        if np.any(detJ <= 0):
            raise RuntimeError("inverted element")
        G = np.einsum("eij,nj->eni", np.linalg.inv(J), dN[q])  # dN/dx
        B = np.zeros((ne, nstr, npe * n_dim))
        if n_dim == 2:
            B[:, 0, 0::2] = G[:, :, 0]
            B[:, 1, 1::2] = G[:, :, 1]
            B[:, 2, 0::2] = G[:, :, 1]
            B[:, 2, 1::2] = G[:, :, 0]
        else:
            for k in range(3):
                B[:, k, k::3] = G[:, :, k]
            B[:, 3, 0::3], B[:, 3, 1::3] = G[:, :, 1], G[:, :, 0]
            B[:, 4, 1::3], B[:, 4, 2::3] = G[:, :, 2], G[:, :, 1]
            B[:, 5, 0::3], B[:, 5, 2::3] = G[:, :, 2], G[:, :, 0]
        ke += np.einsum("eki,kl,elj,e->eij", B, D, B, detJ, optimize=True)
    return ke


def assemble(coords, conn, chunk=8000):
    n_dim = coords.shape[1]
    npe = conn.shape[1]
    D = elasticity_matrix(n_dim)
    pts = gauss(n_dim)
    dN = shape_grads(pts, n_dim)
    n = coords.shape[0] * n_dim
    K = None
    for start in range(0, conn.shape[0], chunk):
        c = conn[start:start + chunk]
        ke = element_matrices(coords[c], D, pts, dN)
        dofs = (c[:, :, None] * n_dim + np.arange(n_dim)).reshape(c.shape[0], -1)
        rows = np.repeat(dofs, npe * n_dim, axis=1).ravel()
        cols = np.tile(dofs, (1, npe * n_dim)).ravel()
        part = coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
        K = part if K is None else K + part
    return K


def solve(K, fixed, values, iterative=False):
    n = K.shape[0]
    free = np.setdiff1d(np.arange(n), fixed)
    u = np.zeros(n)
    u[fixed] = values
    rhs = -K[free][:, fixed] @ values
    Kff = K[free][:, free]
    if iterative:
        import pyamg

        ml = pyamg.smoothed_aggregation_solver(Kff.tocsr(), symmetry="symmetric")
        res = []
        u[free] = ml.solve(rhs, tol=1e-11, accel="cg", maxiter=2000, residuals=res)
        print(f"  amg-cg {len(res)} iterations, final residual {res[-1] / res[0]:.2e}")
    else:
        u[free] = spsolve(Kff.tocsc(), rhs)
    return u


def polar_table(xy, values):
    """Sample nodal fields on the (beta, r) grid by linear interpolation."""
    b, r = np.meshgrid(np.radians(BETA), RADII, indexing="ij")
    pts = np.column_stack([(r * np.cos(b)).ravel(), (r * np.sin(b)).ravel()])
    out = LinearNDInterpolator(xy, values)(pts)
    if np.isnan(out).any():
        raise RuntimeError("sample point outside the triangulated mesh")
    return out.reshape(BETA.size, RADII.size, -1)


def plate(n_theta, n_radial):
    verts = ogrid(n_theta, n_radial)
    xy = verts.reshape(-1, 2)
    conn = quad_connectivity(n_radial, n_theta)
    t = time.time()
    K = assemble(xy, conn)
    tol = 1e-12
    right = np.flatnonzero(np.abs(xy[:, 0] - 0.5 * L) < tol)
    left = np.flatnonzero(np.abs(xy[:, 0] + 0.5 * L) < tol)
    axis = np.flatnonzero(np.abs(xy[:, 1]) < tol)
    fixed = np.r_[right * 2, left * 2, axis * 2 + 1]
    vals = np.r_[np.full(right.size, U0), np.full(left.size, -U0), np.zeros(axis.size)]
    u = solve(K, fixed, vals).reshape(-1, 2)
    print(f"plate {n_theta}x{n_radial}: {xy.shape[0]} nodes, {time.time() - t:.1f} s")
    return polar_table(xy, u)


def block(n_theta, n_radial, n_depth):
    verts = ogrid(n_theta, n_radial)
    xy = verts.reshape(-1, 2)
    nv = xy.shape[0]
    z = np.linspace(0.0, DEPTH, n_depth + 1)
    coords = np.column_stack([np.tile(xy, (n_depth + 1, 1)), np.repeat(z, nv)])
    q = quad_connectivity(n_radial, n_theta)
    conn = np.concatenate([np.hstack([q + k * nv, q + (k + 1) * nv]) for k in range(n_depth)])
    t = time.time()
    K = assemble(coords, conn)
    tol = 1e-12
    right = np.flatnonzero(np.abs(coords[:, 0] - 0.5 * L) < tol)
    left = np.flatnonzero(np.abs(coords[:, 0] + 0.5 * L) < tol)
    axis = np.flatnonzero(np.abs(coords[:, 1]) < tol)
    mid = np.flatnonzero(np.abs(coords[:, 2] - 0.5 * DEPTH) < tol)
    fixed = np.r_[right * 3, left * 3, axis * 3 + 1, mid * 3 + 2]
    vals = np.r_[np.full(right.size, U0), np.full(left.size, -U0),
                 np.zeros(axis.size), np.zeros(mid.size)]
    u = solve(K, fixed, vals, iterative=True).reshape(-1, 3)
    print(f"block {n_theta}x{n_radial}x{n_depth}: {coords.shape[0]} nodes, "
          f"{time.time() - t:.1f} s")
    top = np.flatnonzero(np.abs(coords[:, 2] - DEPTH) < tol)
    return polar_table(coords[mid, :2], u[mid]), polar_table(coords[top, :2], u[top])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--check", action="store_true",
                    help="also solve one coarser level and report the change")
    args = ap.parse_args()
    OUT.mkdir(parents=True, exist_ok=True)
    fine2 = plate(512, 176)
    fine3 = block(192, 56, 20)
    if args.check:
        c2 = plate(256, 88)
        c3 = block(128, 40, 12)
        for name, a, b in (("plate", fine2, c2), ("block mid-plane", fine3[0], c3[0]),
                           ("block top face", fine3[1], c3[1])):
            edge = np.s_[:, 0, :]
            d = np.abs(a[edge] - b[edge]).max() / np.abs(a[edge]).max()
            print(f"{name}: max hole-edge change vs coarser level {d:.2e}")
    meta = dict(beta_deg=BETA, radius=RADII, length=L, hole_radius=R, u0=U0,
                youngs_modulus=E, poisson_ratio=NU)
    np.savez_compressed(OUT / "plate2d_reference.npz", u=fine2, **meta)
    np.savez_compressed(OUT / "block3d_reference.npz", u=fine3[0], u_top=fine3[1], depth=DEPTH,
                        z=0.5 * DEPTH, **meta)
    print("written to", OUT)


if __name__ == "__main__":
    main()
