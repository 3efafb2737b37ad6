"""Independent reference implementations used by the tests (no package imports)."""

import numpy as np


def lattice_family(h, delta, dim):
    """Bond vectors and volumes of an interior node on a uniform lattice."""
    n = int(np.ceil(delta / h)) + 1
    ax = np.arange(-n, n + 1) * h
    g = np.array(np.meshgrid(*[ax] * dim, indexing="ij")).reshape(dim, -1).T
    r = np.linalg.norm(g, axis=1)
    g = g[(r > 0) & (r <= delta * (1 + 1e-12))]
    return g, np.full(len(g), h ** dim)


def union_pairs(pos, delta):
    """O(n^2) union-rule bond set as a set of (i, j) with i < j."""
    out = set()
    n = len(pos)
    for i in range(n):
        for j in range(i + 1, n):
            d = np.linalg.norm(pos[j] - pos[i])
            if d <= delta[i] or d <= delta[j]:
                out.add((i, j))
    return out


def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def segments_cross(p, q, a, b, rel_tol=1e-9):
    """Proper intersection of segments pq and ab (2-D).

    Any endpoint within ``rel_tol * |pq|`` of the other segment's line counts
    as touching, not crossing.
    """
    tol = rel_tol * np.linalg.norm(q - p)
    la, lpq = np.linalg.norm(b - a), np.linalg.norm(q - p)
    d1, d2 = _orient(a, b, p) / la, _orient(a, b, q) / la
    d3, d4 = _orient(p, q, a) / lpq, _orient(p, q, b) / lpq
    if min(abs(d1), abs(d2), abs(d3), abs(d4)) <= tol:
        return False
    return d1 * d2 < 0 and d3 * d4 < 0


def hydro_moments(xi, vol, w):
    """sum w xi_a xi_b V as a matrix."""
    return np.einsum("b,bi,bj->ij", w * vol, xi, xi)


def devia_moments(xi, vol, w):
    """sum w xi_i xi_j xi_k xi_l / |xi|^2 V as a 4-tensor."""
    r2 = np.einsum("bi,bi->b", xi, xi)
    return np.einsum("b,bi,bj,bk,bl->ijkl", w * vol / r2, xi, xi, xi, xi)


def isotropic_devia_target(dim):
    t = np.zeros((dim,) * 4)
    for i in range(dim):
        for j in range(dim):
            for k in range(dim):
                for l in range(dim):
                    t[i, j, k, l] = 0.5 * ((i == j) * (k == l) + (i == k) * (j == l)
                                           + (i == l) * (j == k))
    return t


def ccm_energy(eps, kappa, mu):
    eps = np.asarray(eps, float)
    n = eps.shape[0]
    tr = np.trace(eps)
    dev = eps - tr / n * np.eye(n)
    return 0.5 * kappa * tr ** 2 + mu * np.sum(dev * dev)


TRUNCATIONS = ("half", "quarter", "notch", "subset", "slab")


def truncated_family(rng, dim, kind, ratio=None):
    """Random truncated lattice family: bond vectors, volumes and whether it is a boundary family.

    The lattice may be jittered and the horizon ratio is random, so every
    draw is a different shape.
    """
    ratio = rng.uniform(2.8, 3.5) if ratio is None else ratio
    xi, vol = lattice_family(1.0, ratio, dim)
    xi = xi + rng.uniform(-0.15, 0.15, xi.shape)
    vol = vol * rng.uniform(0.7, 1.3, vol.shape)
    xi = xi[np.linalg.norm(xi, axis=1) > 0.3]
    vol = vol[:len(xi)]
    normal = rng.normal(size=dim)
    normal /= np.linalg.norm(normal)
    if kind == "half":
        keep = xi @ normal > -rng.uniform(0.0, 1.0)
    elif kind == "quarter":
        other = rng.normal(size=dim)
        other -= (other @ normal) * normal
        other /= np.linalg.norm(other)
        keep = (xi @ normal > -0.5) & (xi @ other > -0.5)
    elif kind == "notch":
        keep = ~((xi @ normal > 0) & (np.abs(xi @ np.roll(normal, 1)) < rng.uniform(0.5, 1.5)))
    elif kind == "slab":
        keep = np.abs(xi @ normal) < rng.uniform(1.2, 2.0)
    else:
        keep = rng.random(len(xi)) < rng.uniform(0.5, 0.9)
    return xi[keep], vol[keep]
