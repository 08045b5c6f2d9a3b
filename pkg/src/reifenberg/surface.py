"""Simplicial approximating surfaces and the partition-of-unity maps acting on them.

A :class:`MeshSurface` is a k-dimensional simplicial complex in R^n stored as
``vertices (V, n)`` and ``cells (m, k + 1)``: segments for ``k = 1``,
triangles for ``k = 2``. A :class:`SigmaMap` interpolates between the
identity and the projections onto one plane per ball,

    sigma(x) = x + sum_s lambda_s(x) (pi_s(x) - x),

with ``lambda_s`` supported in ``4 B_s`` and summing to 1 on ``U 3 B_s``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .geometry import AffinePlane, Ball
from .measure import DisjointnessError, GridIndex, first_overlap

DEGENERATE_AREA = 1e-14


class MeshError(RuntimeError):
    pass


@dataclass
class MeshSurface:
    vertices: np.ndarray
    cells: np.ndarray
    k: int
    scale: int = 0
    provenance: list = field(default_factory=list)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.cells = np.ascontiguousarray(self.cells, dtype=np.int64).reshape(-1, self.k + 1)
        if self.k not in (1, 2):
            raise ValueError("meshes are supported for k = 1 and k = 2")
        if self.vertices.shape[1] <= self.k:
            raise ValueError("ambient dimension must exceed k")

    @property
    def n(self) -> int:
        return self.vertices.shape[1]

    def simplex_volumes(self) -> np.ndarray:
        return simplex_volumes(self.vertices, self.cells, self.k)

    def refined(self) -> "MeshSurface":
        """Midpoint subdivision: segments split in two, triangles in four."""
        v, c = self.vertices, self.cells
        if self.k == 1:
            mid = 0.5 * (v[c[:, 0]] + v[c[:, 1]])
            m_idx = len(v) + np.arange(len(c))
            cells = np.empty((2 * len(c), 2), dtype=np.int64)
            cells[0::2] = np.stack([c[:, 0], m_idx], 1)
            cells[1::2] = np.stack([m_idx, c[:, 1]], 1)
            return MeshSurface(np.vstack([v, mid]), cells, 1, self.scale, list(self.provenance))
        edges = np.sort(np.concatenate([c[:, [0, 1]], c[:, [1, 2]], c[:, [2, 0]]]), axis=1)
        uniq, inv = np.unique(edges, axis=0, return_inverse=True)
        inv = inv.reshape(3, -1).T + len(v)
        mid = 0.5 * (v[uniq[:, 0]] + v[uniq[:, 1]])
        a, b, cc = c[:, 0], c[:, 1], c[:, 2]
        ab, bc, ca = inv[:, 0], inv[:, 1], inv[:, 2]
        cells = np.concatenate([np.stack([a, ab, ca], 1), np.stack([ab, b, bc], 1),
                                np.stack([ca, bc, cc], 1), np.stack([ab, bc, ca], 1)])
        return MeshSurface(np.vstack([v, mid]), cells, 2, self.scale, list(self.provenance))

    def to_off(self, path) -> None:
        write_off(self, path)


def simplex_volumes(vertices, cells, k) -> np.ndarray:
    if k == 1:
        return np.linalg.norm(vertices[cells[:, 1]] - vertices[cells[:, 0]], axis=1)
    e1 = vertices[cells[:, 1]] - vertices[cells[:, 0]]
    e2 = vertices[cells[:, 2]] - vertices[cells[:, 0]]
    g11 = np.einsum("ij,ij->i", e1, e1)
    g22 = np.einsum("ij,ij->i", e2, e2)
    g12 = np.einsum("ij,ij->i", e1, e2)
    return 0.5 * np.sqrt(np.maximum(g11 * g22 - g12 * g12, 0.0))


def surface_area(mesh: MeshSurface) -> float:
    """Total k-volume (length for k=1, area for k=2)."""
    return math.fsum(mesh.simplex_volumes())


# ------------------------------------------------------------------ builders

def segment_mesh(plane: AffinePlane, center, radius: float, max_edge: float) -> MeshSurface:
    """The line ``plane`` clipped to ``B_radius(center)``, split into equal segments."""
    if plane.k != 1:
        raise ValueError("segment mesh needs a line")
    c = np.asarray(center, dtype=float)
    foot = plane.base + ((c - plane.base) @ plane.frame[0]) * plane.frame[0]
    h = np.linalg.norm(c - foot)
    if h >= radius:
        raise MeshError("plane misses the mesh ball")
    half = math.sqrt(radius * radius - h * h)
    m = max(1, int(math.ceil(2 * half / max_edge)))
    t = np.linspace(-half, half, m + 1)
    verts = foot + t[:, None] * plane.frame[0]
    cells = np.stack([np.arange(m), np.arange(1, m + 1)], 1)
    return MeshSurface(verts, cells, 1)


def disk_mesh_2d(radius: float, rings: int):
    """Concentric-ring triangulation of a disk: ring ``j`` carries ``6 j`` vertices."""
    pts = [np.zeros((1, 2))]
    starts = [0]
    count = 1
    for j in range(1, rings + 1):
        ang = 2 * np.pi * np.arange(6 * j) / (6 * j)
        pts.append(radius * j / rings * np.stack([np.cos(ang), np.sin(ang)], 1))
        starts.append(count)
        count += 6 * j
    tris = []
    for j in range(1, rings + 1):
        inner_n = 1 if j == 1 else 6 * (j - 1)
        outer_n = 6 * j
        s_in, s_out = starts[j - 1], starts[j]
        # march both rings by angle, always advancing the one that lags
        a = b = 0
        while a < inner_n or b < outer_n:
            ta = (a + 1) / inner_n if a < inner_n else np.inf
            tb = (b + 1) / outer_n if b < outer_n else np.inf
            i0 = s_in + a % inner_n
            o0 = s_out + b % outer_n
            if tb <= ta:
                tris.append((i0, o0, s_out + (b + 1) % outer_n))
                b += 1
            else:
                tris.append((i0, o0, s_in + (a + 1) % inner_n))
                a += 1
    tris = np.array(tris, dtype=np.int64)
    if rings >= 1:
        tris = tris[(tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])]
    return np.vstack(pts), tris


def disk_mesh(plane: AffinePlane, center, radius: float, max_edge: float | None = None,
              level: int | None = None) -> MeshSurface:
    """2-plane clipped to ``B_radius(center)``; ``level`` L gives ``2**L`` rings."""
    if plane.k != 2:
        raise ValueError("disk mesh needs a 2-plane")
    c = np.asarray(center, dtype=float)
    foot = plane.base + plane.coords(c)[0] @ plane.frame
    h = np.linalg.norm(c - foot)
    if h >= radius:
        raise MeshError("plane misses the mesh ball")
    R = math.sqrt(radius * radius - h * h)
    if level is not None:
        rings = 2 ** level
    else:
        rings = max(1, int(math.ceil(R / max_edge)))
    uv, tris = disk_mesh_2d(R, rings)
    return MeshSurface(foot + uv @ plane.frame, tris, 2)


def plane_mesh(plane: AffinePlane, center, radius: float, max_edge: float) -> MeshSurface:
    if plane.k == 1:
        return segment_mesh(plane, center, radius, max_edge)
    return disk_mesh(plane, center, radius, max_edge=max_edge)


def hemisphere_mesh(level: int, radius: float = 1.0) -> MeshSurface:
    """Upper unit hemisphere in R^3, lifted from the ring disk mesh."""
    uv, tris = disk_mesh_2d(radius, 2 ** level)
    rho = np.linalg.norm(uv, axis=1)
    z = np.sqrt(np.maximum(radius * radius - rho * rho, 0.0))
    return MeshSurface(np.column_stack([uv, z]), tris, 2)


def write_off(mesh: MeshSurface, path) -> None:
    """ASCII OFF with shortest round-trip floats; segments are written as 2-gons."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("OFF\n")
        fh.write(f"{len(mesh.vertices)} {len(mesh.cells)} 0\n")
        for v in mesh.vertices:
            fh.write(" ".join(repr(float(x)) for x in v) + "\n")
        for c in mesh.cells:
            fh.write(f"{len(c)} " + " ".join(str(int(i)) for i in c) + "\n")


def read_off(path, k: int) -> MeshSurface:
    with open(path, encoding="utf-8") as fh:
        tokens = fh.read().split()
    if tokens[0] != "OFF":
        raise ValueError("not an OFF file")
    nv, nc = int(tokens[1]), int(tokens[2])
    pos = 4
    rest = tokens[pos:]
    # dimension from vertex count and first face position is ambiguous; OFF here is n-dimensional
    n = None
    for cand in range(2, 10):
        if len(rest) > nv * cand and rest[nv * cand] == str(k + 1):
            n = cand
            break
    if n is None:
        raise ValueError("cannot infer vertex dimension")
    verts = np.array([float(x) for x in rest[: nv * n]]).reshape(nv, n)
    faces = np.array([int(x) for x in rest[nv * n:]]).reshape(nc, k + 2)[:, 1:]
    return MeshSurface(verts, faces, k)


# ------------------------------------------------------------------ partition of unity

def smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (u * (6.0 * u - 15.0) + 10.0)


def _h_over_s(S):
    """``h(S)/S`` with ``h`` the smoothstep below 1 and ``1`` above (C^2 at S = 1)."""
    S = np.asarray(S, dtype=float)
    return np.where(S >= 1.0, 1.0 / np.where(S > 0, S, 1.0), S * S * (10.0 + S * (6.0 * S - 15.0)))


class PartitionOfUnity:
    """``lambda_s = b_s h(S)/S`` with bumps ``b_s = smoothstep(4 - |x - y_s|/r)``."""

    def __init__(self, centers, r: float):
        self.centers = np.ascontiguousarray(np.atleast_2d(np.asarray(centers, dtype=float)))
        self.r = float(r)
        if not self.r > 0:
            raise ValueError("radius must be positive")
        if len(self.centers) > 1:
            bad = first_overlap(self.centers, np.full(len(self.centers), self.r / 2))
            if bad is not None:
                raise DisjointnessError(f"half-balls {bad[0]} and {bad[1]} overlap")
        self._tree = cKDTree(self.centers) if len(self.centers) else None

    def __call__(self, x):
        """Return ``(lam, psi)``: ``lam`` is ``(P, m)``, ``psi`` is ``(P,)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        m = len(self.centers)
        lam = np.zeros((len(x), m))
        if m == 0:
            return lam, np.ones(len(x))
        d = np.linalg.norm(x[:, None, :] - self.centers[None, :, :], axis=2)
        b = smoothstep(4.0 - d / self.r)
        S = b.sum(axis=1)
        lam = b * _h_over_s(S)[:, None]
        psi = 1.0 - lam.sum(axis=1)
        return lam, psi

    def gradient_bound(self, samples, h: float | None = None) -> float:
        """``r * max |grad lambda_s|`` estimated by central differences at ``samples``."""
        x = np.atleast_2d(np.asarray(samples, dtype=float))
        h = 1e-6 * self.r if h is None else h
        best = 0.0
        for d in range(x.shape[1]):
            e = np.zeros(x.shape[1])
            e[d] = h
            lp, _ = self(x + e)
            lm, _ = self(x - e)
            best = max(best, float(np.max(np.abs(lp - lm))) / (2 * h) if lp.size else 0.0)
        return best * self.r * math.sqrt(x.shape[1])


def partition_of_unity(balls, r: float) -> PartitionOfUnity:
    """Evaluator for the partition attached to ``balls`` (all of radius ``r``)."""
    if not balls:
        raise ValueError("partition of unity needs at least one ball")
    return PartitionOfUnity(np.array([b.center for b in balls]), r)


@dataclass
class SigmaMap:
    """Partition-of-unity squash toward one plane per ball, all at radius ``r``."""

    scale: int
    centers: np.ndarray
    r: float
    bases: np.ndarray
    frames: np.ndarray

    def __post_init__(self):
        self.centers = np.ascontiguousarray(self.centers, dtype=np.float64)
        self.bases = np.ascontiguousarray(self.bases, dtype=np.float64)
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float64)
        if len(self.centers):
            self._grid = GridIndex(self.centers, 4.0 * self.r)
            self._bases = np.ascontiguousarray(self.bases[self._grid.order])
            self._frames = np.ascontiguousarray(self.frames[self._grid.order])

    @classmethod
    def from_planes(cls, scale, balls, planes) -> "SigmaMap":
        if not balls:
            return cls(scale, np.zeros((0, 1)), 1.0, np.zeros((0, 1)), np.zeros((0, 1, 1)))
        r = float(balls[0].radius)
        return cls(scale, np.array([b.center for b in balls]), r,
                   np.array([p.base for p in planes]), np.array([p.frame for p in planes]))

    @property
    def balls(self):
        return [Ball(c, self.r) for c in self.centers]

    def partition(self) -> PartitionOfUnity:
        return PartitionOfUnity(self.centers, self.r)

    def evaluate(self, points, with_mass: bool = False):
        pts = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
        if len(self.centers) == 0:
            out = pts.copy()
            return (out, np.zeros(len(pts))) if with_mass else out
        g = self._grid
        out, lam = kernels.sigma_eval(g.points, g.keys, g.origin, g.cell, g.dims, g.strides,
                                      self._bases, self._frames, self.r, pts)
        return (out, lam) if with_mass else out

    def __call__(self, points):
        return self.evaluate(points)

    def to_dict(self):
        return {"scale": self.scale, "radius": self.r,
                "centers": self.centers.tolist(), "bases": self.bases.tolist(),
                "frames": self.frames.tolist(),
                "bump": "quintic smoothstep of 4 - |x - y|/r, normalised by h(S)/S"}


def sigma_eval(sigma: SigmaMap, x):
    """``sigma(x)`` for one point or an array of points."""
    x = np.asarray(x, dtype=float)
    out = sigma.evaluate(x)
    return out[0] if x.ndim == 1 else out


def pushforward_surface(mesh: MeshSurface, sigma: SigmaMap) -> MeshSurface:
    """``sigma(T)``: vertices mapped, connectivity kept; one refinement retry on degeneracy."""
    if not np.all(np.isfinite(mesh.vertices)):
        raise MeshError("mesh has non-finite vertices")
    src = mesh
    for attempt in range(2):
        verts = sigma.evaluate(src.vertices)
        vol = simplex_volumes(verts, src.cells, src.k)
        if len(vol) == 0 or vol.min() > DEGENERATE_AREA:
            prov = list(src.provenance) + [{"scale": sigma.scale, "balls": len(sigma.centers),
                                            "refined": attempt > 0}]
            return MeshSurface(verts, src.cells, src.k, sigma.scale, prov)
        src = src.refined()
    raise MeshError("degenerate simplex after pushforward (refined once)")


# ------------------------------------------------------------------ measurements on meshes

def _segment_ball_length(a, b, c, r):
    """Length of each segment ``[a, b]`` inside the closed ball ``B_r(c)``."""
    d = b - a
    f = a - c
    A = np.einsum("ij,ij->i", d, d)
    B = 2 * np.einsum("ij,ij->i", f, d)
    Cc = np.einsum("ij,ij->i", f, f) - r * r
    disc = B * B - 4 * A * Cc
    ok = (disc > 0) & (A > 0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t0 = np.clip((-B - sq) / np.where(ok, 2 * A, 1.0), 0.0, 1.0)
    t1 = np.clip((-B + sq) / np.where(ok, 2 * A, 1.0), 0.0, 1.0)
    return np.where(ok, (t1 - t0) * np.sqrt(A), 0.0)


class CellLocator:
    """Nearest-cell lookup: cells that can meet a ball, via a tree on cell centroids."""

    def __init__(self, mesh: MeshSurface):
        v, c = mesh.vertices, mesh.cells
        self.centroids = v[c].mean(axis=1)
        self.reach = float(np.max(np.linalg.norm(v[c] - self.centroids[:, None, :], axis=2))) if len(c) else 0.0
        self._tree = cKDTree(self.centroids) if len(c) else None

    def near(self, center, radius: float) -> np.ndarray:
        if self._tree is None:
            return np.zeros(0, dtype=np.int64)
        idx = self._tree.query_ball_point(np.asarray(center, dtype=float), radius + self.reach)
        return np.sort(np.asarray(idx, dtype=np.int64))


def measure_in_ball(mesh: MeshSurface, ball: Ball, subdiv: int = 8, cells=None) -> float:
    """``|T ∩ B|``: exact clipping for segments, centroid quadrature for triangles.

    ``cells`` optionally restricts the computation to a superset of the
    cells meeting the ball (see :class:`CellLocator`).
    """
    c, r = np.asarray(ball.center, dtype=float), float(ball.radius)
    v = mesh.vertices
    cells = mesh.cells if cells is None else mesh.cells[cells]
    if mesh.k == 1:
        a, b = v[cells[:, 0]], v[cells[:, 1]]
        span = np.linalg.norm(b - a, axis=1)
        near = np.minimum(np.linalg.norm(a - c, axis=1), np.linalg.norm(b - c, axis=1)) <= r + span
        return math.fsum(_segment_ball_length(a[near], b[near], c, r))
    p0, p1, p2 = v[cells[:, 0]], v[cells[:, 1]], v[cells[:, 2]]
    diam = np.maximum.reduce([np.linalg.norm(p1 - p0, axis=1), np.linalg.norm(p2 - p1, axis=1),
                              np.linalg.norm(p0 - p2, axis=1)])
    dmin = np.minimum.reduce([np.linalg.norm(p - c, axis=1) for p in (p0, p1, p2)])
    dmax = np.maximum.reduce([np.linalg.norm(p - c, axis=1) for p in (p0, p1, p2)])
    area = simplex_volumes(v, cells, 2)
    inside = dmax <= r
    total = [float(area[inside].sum())]
    cut = (~inside) & (dmin <= r + diam)
    if np.any(cut):
        # barycentric sub-triangle centroids: subdiv**2 equal-area pieces
        m = subdiv
        ij = [(i, j) for i in range(m) for j in range(m - i)]
        up = np.array([((i + 1 / 3) / m, (j + 1 / 3) / m) for i, j in ij])
        down = np.array([((i + 2 / 3) / m, (j + 2 / 3) / m) for i, j in ij if i + j < m - 1])
        bary = np.vstack([up, down])
        q0, q1, q2 = p0[cut], p1[cut], p2[cut]
        pts = q0[:, None, :] + bary[None, :, 0:1] * (q1 - q0)[:, None, :] + bary[None, :, 1:2] * (q2 - q0)[:, None, :]
        frac = np.mean(np.linalg.norm(pts - c, axis=2) <= r, axis=1)
        total.append(float((frac * area[cut]).sum()))
    return math.fsum(total)


@dataclass
class GraphCheck:
    is_graph: bool
    c1_norm: float           # sup|g| / r + sup|grad g|
    sup_term: float          # sup|g| / r
    slope: float             # sup|grad g|
    witness: tuple | None = None
    cells_used: int = 0

    def to_dict(self):
        return {"is_graph": self.is_graph, "c1_norm": self.c1_norm, "sup_term": self.sup_term,
                "slope": self.slope, "witness": None if self.witness is None else list(self.witness),
                "cells_used": self.cells_used}


def graph_check(mesh: MeshSurface, plane: AffinePlane, ball: Ball, cells=None) -> GraphCheck:
    """Is ``mesh ∩ ball`` a graph over ``plane``, and with what normalised C^1 norm?

    Cells with every vertex inside the closed ball are used. A fold shows up
    as projected simplices of opposite orientation (or, for segments,
    overlapping projected intervals); the witness is a pair of cell indices.
    ``g`` is the normal offset from ``plane``; its gradient is the piecewise
    linear one on the projected cells.
    """
    c, r = np.asarray(ball.center, dtype=float), float(ball.radius)
    v = mesh.vertices
    pool = np.arange(len(mesh.cells)) if cells is None else np.asarray(cells, dtype=np.int64)
    inside = np.all(np.linalg.norm(v[mesh.cells[pool]] - c, axis=2) <= r, axis=1)
    use = pool[inside]
    if len(use) == 0:
        raise MeshError("mesh has no cell inside the ball")
    sub, local = np.unique(mesh.cells[use], return_inverse=True)
    cells = local.reshape(-1, mesh.k + 1)
    v = v[sub]
    N = plane.normal_basis()
    uv = plane.coords(v)
    g = (v - plane.base) @ N.T
    gv = np.abs(g)
    sup = float(np.max(np.linalg.norm(gv, axis=1))) / r
    k = mesh.k
    if k == 1:
        du = uv[cells[:, 1], 0] - uv[cells[:, 0], 0]
        dg = g[cells[:, 1]] - g[cells[:, 0]]
        slopes = np.linalg.norm(dg, axis=1) / np.where(du != 0, np.abs(du), np.nan)
        witness = None
        if np.any(du == 0):
            i = int(np.flatnonzero(du == 0)[0])
            witness = (int(use[i]), int(use[i]))
        else:
            lo = np.minimum(uv[cells[:, 0], 0], uv[cells[:, 1], 0])
            hi = np.maximum(uv[cells[:, 0], 0], uv[cells[:, 1], 0])
            order = np.argsort(lo, kind="stable")
            run_hi, run_i = -np.inf, -1
            for j in order:
                if lo[j] < run_hi - 1e-12 * max(1.0, abs(run_hi)):
                    witness = (int(use[run_i]), int(use[j]))
                    break
                if hi[j] > run_hi:
                    run_hi, run_i = hi[j], j
        slope = float(np.nanmax(slopes)) if np.any(np.isfinite(slopes)) else math.inf
        if witness is not None:
            return GraphCheck(False, math.inf, sup, math.inf, witness, len(use))
        return GraphCheck(True, sup + slope, sup, slope, None, len(use))
    a, b, cc = uv[cells[:, 0]], uv[cells[:, 1]], uv[cells[:, 2]]
    e1, e2 = b - a, cc - a
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    pos, neg = det > 0, det < 0
    witness = None
    if np.any(pos) and np.any(neg) or np.any(det == 0):
        i = int(np.flatnonzero(pos)[0]) if np.any(pos) else 0
        j = int(np.flatnonzero(~pos)[0])
        witness = (int(use[i]), int(use[j]))
    else:
        witness = _overlap_witness(uv, cells, det)
        if witness is not None:
            witness = (int(use[witness[0]]), int(use[witness[1]]))
    if witness is not None:
        return GraphCheck(False, math.inf, sup, math.inf, witness, len(use))
    # gradient of the linear interpolant: solve [e1 e2]^T grad = [dg1 dg2]
    G = np.stack([e1, e2], axis=1)                     # (m, 2, 2)
    D = np.stack([g[cells[:, 1]] - g[cells[:, 0]], g[cells[:, 2]] - g[cells[:, 0]]], axis=1)  # (m, 2, n-k)
    grad = np.linalg.solve(G, D)                       # (m, 2, n-k)
    slope = float(np.max(np.linalg.norm(grad, axis=(1, 2), ord=2)))
    return GraphCheck(True, sup + slope, sup, slope, None, len(use))


def _overlap_witness(uv, cells, det):
    """A projected vertex strictly inside a non-incident projected triangle, if any."""
    verts = np.unique(cells)
    tree = cKDTree(uv[verts])
    a, b, c = uv[cells[:, 0]], uv[cells[:, 1]], uv[cells[:, 2]]
    cen = (a + b + c) / 3
    rad = np.max(np.stack([np.linalg.norm(p - cen, axis=1) for p in (a, b, c)]), axis=0)
    hits = tree.query_ball_point(cen, rad)
    counts = np.fromiter((len(h) for h in hits), dtype=np.int64, count=len(hits))
    if counts.sum() == 0:
        return None
    t = np.repeat(np.arange(len(cells)), counts)
    w = verts[np.concatenate([np.asarray(h, dtype=np.int64) for h in hits])]
    keep = np.all(cells[t] != w[:, None], axis=1)
    t, w = t[keep], w[keep]
    p = uv[w]
    at, bt, ct = a[t], b[t], c[t]
    cross = lambda s, e: (e[:, 0] - s[:, 0]) * (p[:, 1] - s[:, 1]) - (e[:, 1] - s[:, 1]) * (p[:, 0] - s[:, 0])
    sg = np.sign(det[t])
    tol = 1e-12 * np.abs(det[t])
    inside = (sg * cross(at, bt) > tol) & (sg * cross(bt, ct) > tol) & (sg * cross(ct, at) > tol)
    if not np.any(inside):
        return None
    i = int(np.flatnonzero(inside)[0])
    owner = np.flatnonzero(np.any(cells == w[i], axis=1))[0]
    return int(t[i]), int(owner)


@dataclass
class LipschitzReport:
    constant: float          # max(stretch, 1 / compression), >= 1
    stretch: float
    compression: float
    cells: int
    skipped: int

    def to_dict(self):
        return dict(self.__dict__)


def simplex_singular_values(src: np.ndarray, dst: np.ndarray, cells: np.ndarray, k: int):
    """Extreme singular values of the affine map taking each source simplex to its image."""
    if k == 1:
        a = np.linalg.norm(src[cells[:, 1]] - src[cells[:, 0]], axis=1)
        b = np.linalg.norm(dst[cells[:, 1]] - dst[cells[:, 0]], axis=1)
        ok = a > 0
        s = b[ok] / a[ok]
        return s, s, int(np.sum(~ok))
    E = np.stack([src[cells[:, 1]] - src[cells[:, 0]], src[cells[:, 2]] - src[cells[:, 0]]], axis=2)
    F = np.stack([dst[cells[:, 1]] - dst[cells[:, 0]], dst[cells[:, 2]] - dst[cells[:, 0]]], axis=2)
    # intrinsic map: F = L E with L acting on span(E); singular values of F (E^T E)^{-1/2}
    gram = np.einsum("mdi,mdj->mij", E, E)
    det = gram[:, 0, 0] * gram[:, 1, 1] - gram[:, 0, 1] ** 2
    ok = det > 0
    w, U = np.linalg.eigh(gram[ok])
    inv_sqrt = np.einsum("mij,mj,mkj->mik", U, 1.0 / np.sqrt(w), U)
    L = np.einsum("mdi,mij->mdj", F[ok], inv_sqrt)
    sv = np.linalg.svd(L, compute_uv=False)
    return sv[:, 0], sv[:, -1], int(np.sum(~ok))


def bilipschitz_measure(sigma: SigmaMap, mesh: MeshSurface, region: Ball) -> LipschitzReport:
    """Bi-Lipschitz constant of ``sigma`` restricted to the mesh cells meeting ``region``.

    For segments this is the extreme edge-length ratio; for triangles the
    extreme singular values of the per-triangle affine map (which bound
    every edge ratio inside it).
    """
    c, r = np.asarray(region.center, dtype=float), float(region.radius)
    vin = np.linalg.norm(mesh.vertices - c, axis=1) <= r
    cells = mesh.cells[np.any(vin[mesh.cells], axis=1)]
    if len(cells) == 0:
        raise MeshError("mesh does not meet the region")
    dst = sigma.evaluate(mesh.vertices)
    return lipschitz_of_images(mesh.vertices, dst, cells, mesh.k)


def lipschitz_of_images(src, dst, cells, k) -> LipschitzReport:
    smax, smin, skipped = simplex_singular_values(src, dst, cells, k)
    if len(smax) == 0:
        return LipschitzReport(1.0, 1.0, 1.0, 0, skipped)
    stretch = float(np.max(smax))
    comp = float(np.min(smin))
    const = max(stretch, 1.0 / comp if comp > 0 else math.inf, 1.0)
    return LipschitzReport(const, stretch, comp, len(smax), skipped)

