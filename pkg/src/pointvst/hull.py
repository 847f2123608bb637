"""Quickhull in three dimensions.

Faces are triangles wound counter-clockwise when seen from outside, so
``cross(b - a, c - a)`` points outward. A point is outside a face when its
signed distance exceeds the tolerance ``eps`` (default 1e-9 times the
bounding-box diagonal). Near-degenerate inputs that break the horizon walk are
retried once with a seeded jitter of the same magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateHullError

EPS_REL = 1e-9
JITTER_SEED = 12345


@dataclass
class ConvexHull3D:
    vertices: np.ndarray  # sorted indices into the input
    faces: np.ndarray  # (F, 3) vertex indices, outward winding
    normals: np.ndarray  # (F, 3) unit outward normals
    offsets: np.ndarray  # (F,) plane offsets, normal . x == offset
    eps: float

    @property
    def n_edges(self):
        return 3 * len(self.faces) // 2

    def euler_characteristic(self):
        return len(self.vertices) - self.n_edges + len(self.faces)

    def contains(self, points, tol=None):
        tol = self.eps if tol is None else tol
        d = np.asarray(points, dtype=np.float64) @ self.normals.T - self.offsets
        return np.all(d <= tol, axis=1)


class _HorizonError(Exception):
    pass


def convex_hull_3d(points, eps=None) -> ConvexHull3D:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (M, 3) points, got {pts.shape}")
    if len(pts) < 4:
        raise DegenerateHullError(f"need at least 4 points, got {len(pts)}")
    diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    if eps is None:
        eps = EPS_REL * diag
    try:
        return _quickhull(pts, eps)
    except _HorizonError:
        rng = np.random.default_rng(JITTER_SEED)
        jittered = pts + rng.uniform(-1.0, 1.0, size=pts.shape) * (EPS_REL * diag)
        try:
            hull = _quickhull(jittered, eps)
        except _HorizonError as exc:
            raise DegenerateHullError(f"hull construction failed after jitter: {exc}") from None
        hull.eps = eps
        return hull


def _initial_simplex(P, eps):
    ext = np.concatenate([P.argmin(axis=0), P.argmax(axis=0)])
    cand = P[ext]
    d = np.linalg.norm(cand[:, None, :] - cand[None, :, :], axis=2)
    a, b = np.unravel_index(np.argmax(d), d.shape)
    i0, i1 = int(ext[a]), int(ext[b])
    if d[a, b] <= eps:
        raise DegenerateHullError("all points coincide")
    u = (P[i1] - P[i0]) / d[a, b]
    rel = P - P[i0]
    line_d = np.linalg.norm(np.cross(rel, u), axis=1)
    i2 = int(np.argmax(line_d))
    if line_d[i2] <= eps:
        raise DegenerateHullError("all points collinear")
    n = np.cross(P[i1] - P[i0], P[i2] - P[i0])
    n /= np.linalg.norm(n)
    plane_d = rel @ n
    i3 = int(np.argmax(np.abs(plane_d)))
    if abs(plane_d[i3]) <= eps:
        raise DegenerateHullError("all points coplanar")
    return i0, i1, i2, i3


def _quickhull(P, eps):
    i0, i1, i2, i3 = _initial_simplex(P, eps)
    centre = P[[i0, i1, i2, i3]].mean(axis=0)

    verts, normals, offsets, alive = [], [], [], []
    outside, outside_d = [], []
    edges: dict = {}

    def make_face(a, b, c):
        # scalar cross product; np.cross dominates the runtime on single vectors
        ax, ay, az = P[a]
        ux, uy, uz = P[b][0] - ax, P[b][1] - ay, P[b][2] - az
        vx, vy, vz = P[c][0] - ax, P[c][1] - ay, P[c][2] - az
        nx, ny, nz = uy * vz - uz * vy, uz * vx - ux * vz, ux * vy - uy * vx
        ln = math.sqrt(nx * nx + ny * ny + nz * nz)
        if ln == 0.0:
            raise _HorizonError("zero-area face")
        n = np.array([nx / ln, ny / ln, nz / ln])
        fid = len(verts)
        verts.append((a, b, c))
        normals.append(n)
        offsets.append(float(n @ P[a]))
        alive.append(True)
        outside.append(None)
        outside_d.append(None)
        for e in ((a, b), (b, c), (c, a)):
            if e in edges:
                raise _HorizonError(f"edge {e} already owned")
            edges[e] = fid
        return fid

    for a, b, c in ((i0, i1, i2), (i0, i1, i3), (i0, i2, i3), (i1, i2, i3)):
        n = np.cross(P[b] - P[a], P[c] - P[a])
        if n @ (centre - P[a]) > 0:
            b, c = c, b
        make_face(a, b, c)

    def assign(cands, fids):
        if len(cands) == 0:
            return
        N = np.array([normals[f] for f in fids])
        off = np.array([offsets[f] for f in fids])
        D = P[cands] @ N.T - off
        best = np.argmax(D, axis=1)
        bd = D[np.arange(len(cands)), best]
        keep = bd > eps
        cands, best, bd = cands[keep], best[keep], bd[keep]
        for k, f in enumerate(fids):
            sel = best == k
            if sel.any():
                outside[f] = cands[sel]
                outside_d[f] = bd[sel]

    simplex = {i0, i1, i2, i3}
    rest = np.array([i for i in range(len(P)) if i not in simplex], dtype=np.int64)
    assign(rest, [0, 1, 2, 3])

    stack = [f for f in range(4) if outside[f] is not None]
    while stack:
        f = stack.pop()
        if not alive[f] or outside[f] is None:
            continue
        k = int(np.argmax(outside_d[f]))
        eye = int(outside[f][k])
        pe = P[eye]

        visible = [f]
        seen_vis = {f}
        seen_invis = set()
        horizon = []
        q = 0
        while q < len(visible):
            g = visible[q]
            q += 1
            a, b, c = verts[g]
            for u, v in ((a, b), (b, c), (c, a)):
                h = edges[(v, u)]
                if h in seen_vis:
                    continue
                if h not in seen_invis:
                    if normals[h] @ pe - offsets[h] > eps:
                        seen_vis.add(h)
                        visible.append(h)
                        continue
                    seen_invis.add(h)
                horizon.append((u, v))

        starts = [u for u, _ in horizon]
        if len(set(starts)) != len(starts) or set(starts) != {v for _, v in horizon}:
            raise _HorizonError("horizon is not a simple loop")

        pool = []
        for g in visible:
            alive[g] = False
            a, b, c = verts[g]
            for e in ((a, b), (b, c), (c, a)):
                del edges[e]
            if outside[g] is not None:
                pool.append(outside[g])
            outside[g] = outside_d[g] = None
        new = [make_face(u, v, eye) for u, v in horizon]
        if pool:
            cands = np.concatenate(pool)
            assign(cands[cands != eye], new)
        stack.extend(fid for fid in new if outside[fid] is not None)

    live = [i for i, ok in enumerate(alive) if ok]
    faces = np.array([verts[i] for i in live], dtype=np.int64)
    return ConvexHull3D(
        vertices=np.unique(faces),
        faces=faces,
        normals=np.array([normals[i] for i in live]),
        offsets=np.array([offsets[i] for i in live]),
        eps=eps,
    )
