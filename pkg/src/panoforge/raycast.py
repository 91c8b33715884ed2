"""Ray / triangle-mesh casting: brute force and a median-split BVH.

Both paths run the same Moller-Trumbore kernel and the same tie-break
(smaller distance wins, then smaller triangle index), so the BVH is a pure
speed-up and returns bit-identical hits.
"""
from __future__ import annotations

import os
import warnings
from dataclasses import dataclass

import numba
import numpy as np
from numba import njit, prange

LEAF_SIZE = 8
BARY_EPS = 1e-9


def _configure_threads():
    n = os.environ.get("PANOFORGE_THREADS")
    if n:
        try:
            numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
        except ValueError:
            pass


_configure_threads()
# numba probes TBB first and warns when the installed one is too old
warnings.filterwarnings("ignore", message="The TBB threading layer", category=numba.NumbaWarning)


@njit(cache=True, inline="always")
def _intersect(ox, oy, oz, dx, dy, dz, v0, e1, e2, t_eps):
    # returns t, u, v, det (t = inf on miss)
    px = dy * e2[2] - dz * e2[1]
    py = dz * e2[0] - dx * e2[2]
    pz = dx * e2[1] - dy * e2[0]
    det = e1[0] * px + e1[1] * py + e1[2] * pz
    if det == 0.0:
        return np.inf, 0.0, 0.0, 0.0
    inv = 1.0 / det
    sx = ox - v0[0]
    sy = oy - v0[1]
    sz = oz - v0[2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < -BARY_EPS or u > 1.0 + BARY_EPS:
        return np.inf, 0.0, 0.0, 0.0
    qx = sy * e1[2] - sz * e1[1]
    qy = sz * e1[0] - sx * e1[2]
    qz = sx * e1[1] - sy * e1[0]
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < -BARY_EPS or u + v > 1.0 + BARY_EPS:
        return np.inf, 0.0, 0.0, 0.0
    t = (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv
    if t <= t_eps:
        return np.inf, 0.0, 0.0, 0.0
    return t, u, v, det


@njit(cache=True, parallel=True)
def _cast_brute(origins, dirs, v0, e1, e2, t_eps, out_t, out_idx, out_u, out_v, out_det):
    n_rays = dirs.shape[0]
    n_tri = v0.shape[0]
    for r in prange(n_rays):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        best = np.inf
        bi = -1
        bu = 0.0
        bv = 0.0
        bd = 0.0
        for k in range(n_tri):
            t, u, v, det = _intersect(ox, oy, oz, dx, dy, dz, v0[k], e1[k], e2[k], t_eps)
            if t < best or (t == best and t < np.inf and k < bi):
                best = t
                bi = k
                bu = u
                bv = v
                bd = det
        out_t[r] = best
        out_idx[r] = bi
        out_u[r] = bu
        out_v[r] = bv
        out_det[r] = bd


@njit(cache=True)
def _build_bvh(lo, hi, cen, leaf_size):
    n = lo.shape[0]
    max_nodes = 2 * n + 1
    bmin = np.empty((max_nodes, 3))
    bmax = np.empty((max_nodes, 3))
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    start = np.zeros(max_nodes, np.int64)
    count = np.zeros(max_nodes, np.int64)
    perm = np.arange(n)
    stack_node = np.empty(max_nodes, np.int64)
    stack_s = np.empty(max_nodes, np.int64)
    stack_e = np.empty(max_nodes, np.int64)
    sp = 0
    n_nodes = 1
    stack_node[0] = 0
    stack_s[0] = 0
    stack_e[0] = n
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        s = stack_s[sp]
        e = stack_e[sp]
        for a in range(3):
            mn = np.inf
            mx = -np.inf
            for k in range(s, e):
                p = perm[k]
                if lo[p, a] < mn:
                    mn = lo[p, a]
                if hi[p, a] > mx:
                    mx = hi[p, a]
            bmin[node, a] = mn
            bmax[node, a] = mx
        if e - s <= leaf_size:
            start[node] = s
            count[node] = e - s
            continue
        axis = 0
        best_ext = -1.0
        for a in range(3):
            mn = np.inf
            mx = -np.inf
            for k in range(s, e):
                c = cen[perm[k], a]
                if c < mn:
                    mn = c
                if c > mx:
                    mx = c
            if mx - mn > best_ext:
                best_ext = mx - mn
                axis = a
        seg = perm[s:e].copy()
        keys = np.empty(e - s)
        for k in range(e - s):
            keys[k] = cen[seg[k], axis]
        order = np.argsort(keys, kind="mergesort")
        for k in range(e - s):
            perm[s + k] = seg[order[k]]
        mid = (s + e) // 2
        lch = n_nodes
        rch = n_nodes + 1
        n_nodes += 2
        left[node] = lch
        right[node] = rch
        stack_node[sp] = rch
        stack_s[sp] = mid
        stack_e[sp] = e
        sp += 1
        stack_node[sp] = lch
        stack_s[sp] = s
        stack_e[sp] = mid
        sp += 1
    return bmin[:n_nodes], bmax[:n_nodes], left[:n_nodes], right[:n_nodes], start[:n_nodes], count[:n_nodes], perm


@njit(cache=True, inline="always")
def _box_entry(ox, oy, oz, ix, iy, iz, bmin, bmax):
    t0 = (bmin[0] - ox) * ix
    t1 = (bmax[0] - ox) * ix
    tmin = min(t0, t1)
    tmax = max(t0, t1)
    t0 = (bmin[1] - oy) * iy
    t1 = (bmax[1] - oy) * iy
    tmin = max(tmin, min(t0, t1))
    tmax = min(tmax, max(t0, t1))
    t0 = (bmin[2] - oz) * iz
    t1 = (bmax[2] - oz) * iz
    tmin = max(tmin, min(t0, t1))
    tmax = min(tmax, max(t0, t1))
    if tmax < max(tmin, 0.0):
        return np.inf
    return tmin


@njit(cache=True, parallel=True)
def _cast_bvh(origins, dirs, v0, e1, e2, t_eps, bmin, bmax, left, right, start, count, perm,
              out_t, out_idx, out_u, out_v, out_det):
    n_rays = dirs.shape[0]
    for r in prange(n_rays):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        # finite stand-in for 1/0 keeps the slab test free of 0 * inf
        ix = 1.0 / dx if dx != 0.0 else 1e300
        iy = 1.0 / dy if dy != 0.0 else 1e300
        iz = 1.0 / dz if dz != 0.0 else 1e300
        best = np.inf
        bi = -1
        bu = 0.0
        bv = 0.0
        bd = 0.0
        stack = np.empty(128, np.int64)
        sp = 0
        stack[0] = 0
        sp = 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            tb = _box_entry(ox, oy, oz, ix, iy, iz, bmin[node], bmax[node])
            if tb == np.inf or tb > best:
                continue
            if count[node] > 0:
                for k in range(start[node], start[node] + count[node]):
                    tri = perm[k]
                    t, u, v, det = _intersect(ox, oy, oz, dx, dy, dz, v0[tri], e1[tri], e2[tri], t_eps)
                    if t < best or (t == best and t < np.inf and tri < bi):
                        best = t
                        bi = tri
                        bu = u
                        bv = v
                        bd = det
            else:
                stack[sp] = right[node]
                sp += 1
                stack[sp] = left[node]
                sp += 1
        out_t[r] = best
        out_idx[r] = bi
        out_u[r] = bu
        out_v[r] = bv
        out_det[r] = bd


@dataclass
class Hits:
    """Per-ray nearest hit. ``tri`` is -1 and ``t`` inf on a miss."""

    t: np.ndarray
    tri: np.ndarray
    bary: np.ndarray  # (..., 3) weights of the triangle's three vertices
    front: np.ndarray  # True where the hit face points against the ray

    @property
    def hit(self):
        return self.tri >= 0


class MeshCaster:
    """Casts rays against a fixed triangle soup.

    ``eps_scale`` sets the minimum accepted hit distance as
    ``1e-7 * eps_scale``; by default the bounding-box diagonal.
    """

    def __init__(self, vertices, triangles, eps_scale=None):
        verts = np.ascontiguousarray(vertices, dtype=np.float64)
        tris = np.ascontiguousarray(triangles, dtype=np.int64)
        if tris.size == 0:
            raise ValueError("cannot cast against an empty mesh")
        self.v0 = np.ascontiguousarray(verts[tris[:, 0]])
        self.e1 = np.ascontiguousarray(verts[tris[:, 1]] - self.v0)
        self.e2 = np.ascontiguousarray(verts[tris[:, 2]] - self.v0)
        if eps_scale is None:
            eps_scale = float(np.linalg.norm(verts.max(0) - verts.min(0))) or 1.0
        self.t_eps = 1e-7 * eps_scale
        self._bvh = None
        self._pad = 1e-6 * eps_scale

    def _ensure_bvh(self):
        if self._bvh is None:
            corners = np.stack([self.v0, self.v0 + self.e1, self.v0 + self.e2])
            lo = corners.min(0) - self._pad
            hi = corners.max(0) + self._pad
            cen = corners.mean(0)
            self._bvh = _build_bvh(lo, hi, cen, LEAF_SIZE)
        return self._bvh

    def cast(self, origins, dirs, method="bvh") -> Hits:
        dirs = np.asarray(dirs, dtype=np.float64)
        shape = dirs.shape[:-1]
        d = np.ascontiguousarray(dirs.reshape(-1, 3))
        o = np.ascontiguousarray(np.broadcast_to(np.asarray(origins, np.float64), dirs.shape).reshape(-1, 3))
        n = d.shape[0]
        out_t = np.empty(n)
        out_idx = np.empty(n, np.int64)
        out_u = np.empty(n)
        out_v = np.empty(n)
        out_det = np.empty(n)
        if method == "brute":
            _cast_brute(o, d, self.v0, self.e1, self.e2, self.t_eps, out_t, out_idx, out_u, out_v, out_det)
        elif method == "bvh":
            bvh = self._ensure_bvh()
            _cast_bvh(o, d, self.v0, self.e1, self.e2, self.t_eps, *bvh, out_t, out_idx, out_u, out_v, out_det)
        else:
            raise ValueError(f"unknown method {method!r}")
        bary = np.stack([1.0 - out_u - out_v, out_u, out_v], axis=-1)
        return Hits(
            out_t.reshape(shape),
            out_idx.reshape(shape),
            bary.reshape(shape + (3,)),
            (out_det > 0).reshape(shape),
        )
