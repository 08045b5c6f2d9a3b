"""Affine k-planes in R^n, projections and local distances between sets.

Points are plain 1-d numpy arrays. Planes carry an orthonormal frame whose
rows are canonicalised (see :func:`canonical_frame`) so that identical
inputs give bit-identical planes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm
from scipy.spatial import cKDTree
from scipy.special import gamma

INF = math.inf


class DimensionError(ValueError):
    """Raised when points and planes live in different ambient dimensions."""


def omega(k: int) -> float:
    """Volume of the unit ball in R^k."""
    return math.pi ** (k / 2) / gamma(k / 2 + 1)


def modified_gram_schmidt(vectors, tol=1e-12):
    """Orthonormalise the rows of ``vectors``; near-dependent rows are dropped."""
    out = []
    for v in np.atleast_2d(np.asarray(vectors, dtype=float)):
        w = v.copy()
        for u in out:
            w -= (w @ u) * u
        nrm = np.linalg.norm(w)
        if nrm > tol:
            out.append(w / nrm)
    if not out:
        return np.zeros((0, np.atleast_2d(vectors).shape[1]))
    return np.array(out)


def canonical_frame(frame):
    """Fix signs (largest-magnitude entry positive) and sort rows lexicographically."""
    f = np.array(frame, dtype=float, copy=True)
    if f.ndim == 2:
        f = f[None]
        squeeze = True
    else:
        squeeze = False
    idx = np.argmax(np.abs(f), axis=2)
    pick = np.take_along_axis(f, idx[..., None], axis=2)[..., 0]
    f *= np.where(pick < 0, -1.0, 1.0)[..., None]
    k = f.shape[1]
    if k > 1:
        for b in range(f.shape[0]):
            rows = sorted(range(k), key=lambda i: tuple(f[b, i]))
            f[b] = f[b, rows]
    return f[0] if squeeze else f


def complete_frame(span, k, n):
    """Pad an orthonormal ``span`` to ``k`` rows with standard basis directions.

    Candidates ``e_1, e_2, ...`` are tried in order and kept when they are not
    (numerically) in the current span.
    """
    rows = [np.asarray(v, dtype=float) for v in np.atleast_2d(span)] if len(span) else []
    for d in range(n):
        if len(rows) >= k:
            break
        e = np.zeros(n)
        e[d] = 1.0
        for u in rows:
            e -= (e @ u) * u
        nrm = np.linalg.norm(e)
        if nrm > 1e-8:
            rows.append(e / nrm)
    return np.array(rows[:k])


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")

    def scaled(self, factor: float) -> "Ball":
        return Ball(self.center, self.radius * factor)

    def contains(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.linalg.norm(pts - self.center, axis=1) <= self.radius

    def to_dict(self):
        return {"center": [float(c) for c in self.center], "radius": float(self.radius)}


@dataclass(frozen=True, eq=False)
class AffinePlane:
    """``base + span(frame)`` with ``frame`` a ``(k, n)`` orthonormal array."""

    base: np.ndarray
    frame: np.ndarray

    def __post_init__(self):
        base = np.asarray(self.base, dtype=float)
        frame = np.atleast_2d(np.asarray(self.frame, dtype=float))
        if frame.shape[1] != base.shape[0]:
            raise DimensionError("frame vectors and base point differ in dimension")
        k, n = frame.shape
        if not 1 <= k < n:
            raise ValueError(f"plane dimension must satisfy 1 <= k < n, got k={k}, n={n}")
        gram = frame @ frame.T
        if np.max(np.abs(gram - np.eye(k))) > 1e-12:
            raise ValueError("plane frame is not orthonormal")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "frame", frame)

    @classmethod
    def from_vectors(cls, base, vectors) -> "AffinePlane":
        """Orthonormalise ``vectors`` (MGS) and canonicalise the frame."""
        frame = modified_gram_schmidt(vectors)
        return cls(base, canonical_frame(frame))

    @property
    def k(self) -> int:
        return self.frame.shape[0]

    @property
    def n(self) -> int:
        return self.frame.shape[1]

    def translated_to_origin(self) -> "AffinePlane":
        return AffinePlane(np.zeros(self.n), self.frame)

    def coords(self, pts) -> np.ndarray:
        """In-plane coordinates of the projections of ``pts``."""
        return (np.atleast_2d(pts) - self.base) @ self.frame.T

    def normal_basis(self) -> np.ndarray:
        """Orthonormal basis of the orthogonal complement, ``(n - k, n)``."""
        _, _, vt = np.linalg.svd(self.frame, full_matrices=True)
        return vt[self.k:]

    def to_dict(self):
        return {"base": [float(v) for v in self.base],
                "frame": [[float(v) for v in row] for row in self.frame]}


def _check_dims(plane: AffinePlane, x: np.ndarray):
    if x.shape[-1] != plane.n:
        raise DimensionError(f"point has dimension {x.shape[-1]}, plane lives in R^{plane.n}")


def project(plane: AffinePlane, x) -> np.ndarray:
    """Orthogonal projection of ``x`` (one point or an array of points) onto ``plane``."""
    x = np.asarray(x, dtype=float)
    _check_dims(plane, x)
    c = (x - plane.base) @ plane.frame.T
    return plane.base + c @ plane.frame


def point_plane_distance(x, plane: AffinePlane):
    x = np.asarray(x, dtype=float)
    return np.linalg.norm(x - project(plane, x), axis=-1)


def _restrict(pts, x, r):
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if pts.size == 0:
        return pts.reshape(0, len(x))
    return pts[np.linalg.norm(pts - x, axis=1) <= r]


def local_hausdorff(E, F, x, r: float) -> float:
    """``(1/r) dist_H(E ∩ B_r(x), F ∩ B_r(x))`` for finite point sets.

    One empty restriction gives ``inf``; two empty restrictions give 0.
    """
    if not r > 0:
        raise ValueError("radius must be positive")
    x = np.asarray(x, dtype=float)
    e, f = _restrict(E, x, r), _restrict(F, x, r)
    if len(e) == 0 and len(f) == 0:
        return 0.0
    if len(e) == 0 or len(f) == 0:
        return INF
    d_ef = cKDTree(f).query(e)[0].max()
    d_fe = cKDTree(e).query(f)[0].max()
    return float(max(d_ef, d_fe)) / r


def _disk(plane: AffinePlane, x, r):
    """Center and radius of the k-disk ``plane ∩ B_r(x)`` (``None`` if empty)."""
    c = project(plane, x)
    h = np.linalg.norm(x - c)
    if h > r:
        return None
    return c, math.sqrt(max(r * r - h * h, 0.0))


def _disk_samples(plane: AffinePlane, center, radius):
    k = plane.k
    if radius == 0.0:
        return center[None, :]
    # pitch so that the lattice puts at least 100 * 10**k points in the disk
    target = 100 * 10 ** k
    h = radius * (omega(k) / (target * 1.2)) ** (1.0 / k)
    m = int(math.ceil(radius / h))
    axis = np.arange(-m, m + 1) * h
    grid = np.stack(np.meshgrid(*([axis] * k), indexing="ij"), axis=-1).reshape(-1, k)
    nrm = np.linalg.norm(grid, axis=1)
    inside = grid[nrm <= radius]
    shell = grid[nrm > 0]
    shell = shell / np.linalg.norm(shell, axis=1)[:, None] * radius
    local = np.vstack([inside, shell])
    return center + local @ plane.frame


def _dist_to_disk(pts, plane: AffinePlane, center, radius):
    c = (pts - plane.base) @ plane.frame.T
    foot = plane.base + c @ plane.frame
    normal = np.linalg.norm(pts - foot, axis=1)
    radial = np.linalg.norm(foot - center, axis=1)
    over = np.maximum(radial - radius, 0.0)
    return np.sqrt(normal ** 2 + over ** 2)


def plane_local_distance(V1: AffinePlane, V2: AffinePlane, x, r: float) -> float:
    """Normalised local Hausdorff distance ``d_{x,r}(V1, V2)`` of two k-planes.

    The sup over each disk is taken over a fixed lattice (plus boundary
    shell); the distance to the other disk is exact.
    """
    if V1.k != V2.k or V1.n != V2.n:
        raise DimensionError("planes must share k and n")
    if not r > 0:
        raise ValueError("radius must be positive")
    x = np.asarray(x, dtype=float)
    d1, d2 = _disk(V1, x, r), _disk(V2, x, r)
    if d1 is None and d2 is None:
        return 0.0
    if d1 is None or d2 is None:
        return INF
    s1 = _disk_samples(V1, *d1)
    s2 = _disk_samples(V2, *d2)
    a = _dist_to_disk(s1, V2, *d2).max()
    b = _dist_to_disk(s2, V1, *d1).max()
    return float(max(a, b)) / r


def projection_composition_defect(V1: AffinePlane, V2: AffinePlane) -> float:
    """Operator norm of ``pi_1 pi_2 - id`` restricted to the linear plane ``V1``."""
    if V1.k != V2.k or V1.n != V2.n:
        raise DimensionError("planes must share k and n")
    if np.any(V1.base != 0) or np.any(V2.base != 0):
        raise ValueError("projection defect needs linear planes (translate to the origin first)")
    U1, U2 = V1.frame.T, V2.frame.T
    G = U1.T @ U2
    M = G @ G.T - np.eye(V1.k)
    return float(np.linalg.svd(M, compute_uv=False)[0])


def rotation_near_identity(seed: int, t: float, n: int) -> np.ndarray:
    """``expm(t A)`` for a seeded antisymmetric ``A`` with unit operator norm."""
    if t < 0:
        raise ValueError("rotation size must be non-negative")
    if t > 1:
        raise ValueError("rotation size above 1 is outside the small-angle regime")
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, n))
    A = G - G.T
    A /= np.linalg.norm(A, 2)
    return expm(t * A)


def rotate_plane(Q: np.ndarray, V: AffinePlane) -> AffinePlane:
    """Image of ``V`` under the linear map ``Q`` (base rotated too)."""
    return AffinePlane.from_vectors(Q @ V.base, V.frame @ Q.T)
