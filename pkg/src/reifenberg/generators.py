"""Deterministic synthetic families: snowflake curves, flat lattices, graphs.

Every generator returns a certified-disjoint :class:`BallCollection` whose
centers lie in the closed unit ball; the affine map used to get there is
stored in ``collection.meta["normalization"]``.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .measure import DISJOINT_TOL, BallCollection, rho_powers

# x -> scale * (x - shift): maps the snowflake base segment [0,1] x {0} onto [-0.9, 0.9]
SNOWFLAKE_SCALE = 1.8
SNOWFLAKE_SHIFT = (0.5, 0.0)


@dataclass(frozen=True)
class SnowflakeSpec:
    """Per-generation bump angles; generation ``i`` (1-based) uses ``angles[i-1]``."""

    angles: tuple
    generations: int

    def __post_init__(self):
        angles = tuple(float(a) for a in self.angles)
        object.__setattr__(self, "angles", angles)
        if self.generations < 0:
            raise ValueError("generations must be non-negative")
        if len(angles) < self.generations:
            raise ValueError(f"need {self.generations} angles, got {len(angles)}")
        for a in angles[: self.generations]:
            if not math.isfinite(a) or not 0 <= a < math.pi / 3:
                raise ValueError(f"snowflake angle {a} outside [0, pi/3)")

    @classmethod
    def constant(cls, theta: float, generations: int) -> "SnowflakeSpec":
        return cls((theta,) * generations, generations)

    @classmethod
    def harmonic(cls, c: float, generations: int, power: float = 1.0) -> "SnowflakeSpec":
        """Angles ``c / i**power`` for ``i = 1..generations``."""
        return cls(tuple(c / i ** power for i in range(1, generations + 1)), generations)

    def to_dict(self):
        return {"angles": list(self.angles[: self.generations]), "generations": self.generations}

    @classmethod
    def from_dict(cls, doc) -> "SnowflakeSpec":
        return cls(tuple(doc["angles"]), int(doc["generations"]))


def snowflake_polyline(spec: SnowflakeSpec) -> np.ndarray:
    """Vertices ``(4**N + 1, 2)`` of the generalised Koch curve from (0,0) to (1,0).

    Each generation replaces the middle third of every segment by two
    segments at angle ``theta`` to it, bumps always on the left.
    """
    pts = np.array([[0.0, 0.0], [1.0, 0.0]])
    for i in range(spec.generations):
        tan = math.tan(spec.angles[i])
        p, q = pts[:-1], pts[1:]
        d = q - p
        normal = np.stack([-d[:, 1], d[:, 0]], axis=1)
        apex = p + 0.5 * d + normal * (tan / 6.0)
        new = np.empty((4 * len(p) + 1, 2))
        new[0:-1:4] = p
        new[1::4] = p + d / 3.0
        new[2::4] = apex
        new[3::4] = p + 2.0 * d / 3.0
        new[-1] = pts[-1]
        pts = new
    return pts


def snowflake_length(spec: SnowflakeSpec) -> float:
    """Closed-form length ``prod_i (2 + 1/cos theta_i) / 3``."""
    out = 1.0
    for a in spec.angles[: spec.generations]:
        out *= (2.0 + 1.0 / math.cos(a)) / 3.0
    return out


def polyline_length(vertices) -> float:
    v = np.asarray(vertices, dtype=float)
    return math.fsum(np.linalg.norm(np.diff(v, axis=0), axis=1))


def _arc_samples(v: np.ndarray, h: float) -> np.ndarray:
    """Points at arc length ``0, h, 2h, ...`` along the polyline, plus its end."""
    seg = np.linalg.norm(np.diff(v, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    s = np.arange(int(math.floor(total / h + 1e-9)) + 1) * h
    if total - s[-1] > 1e-12:
        s = np.append(s, total)
    j = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    frac = np.where(seg[j] > 0, (s - cum[j]) / np.where(seg[j] > 0, seg[j], 1.0), 0.0)
    return v[j] + np.clip(frac, 0.0, 1.0)[:, None] * (v[j + 1] - v[j])


def greedy_separated(points: np.ndarray, sep: float, tol: float = DISJOINT_TOL) -> np.ndarray:
    """Indices of a maximal ``sep``-separated subset (up to ``tol``), greedy in input order."""
    pts = np.asarray(points, dtype=float)
    cells: dict = {}
    keep = []
    n = pts.shape[1] if pts.ndim == 2 else 0
    offs = list(itertools.product((-1, 0, 1), repeat=n))
    for i, p in enumerate(pts):
        key = tuple(np.floor(p / sep).astype(np.int64))
        ok = True
        for off in offs:
            for j in cells.get(tuple(a + b for a, b in zip(key, off)), ()):
                if np.linalg.norm(pts[j] - p) < sep - tol:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            keep.append(i)
            cells.setdefault(key, []).append(i)
    return np.array(keep, dtype=np.int64)


def normalize(vertices, scale=SNOWFLAKE_SCALE, shift=SNOWFLAKE_SHIFT) -> np.ndarray:
    return scale * (np.asarray(vertices, dtype=float) - np.asarray(shift, dtype=float))


def polyline_to_balls(vertices, scale_index: int, rho: float, scale: float = SNOWFLAKE_SCALE,
                      shift=SNOWFLAKE_SHIFT) -> BallCollection:
    """Disjoint balls of radius ``rho**scale_index`` along a polyline.

    The polyline is first mapped by ``x -> scale * (x - shift)`` and must
    then lie in the closed unit ball. Centers form a maximal
    ``2 rho**s``-separated subset of arc-length samples taken every
    ``rho**s / 8``.
    """
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    v = normalize(vertices, scale, shift)
    if np.max(np.linalg.norm(v, axis=1)) > 1.0 + 1e-12:
        raise ValueError("normalised polyline leaves the unit ball")
    r = float(rho_powers(rho, scale_index + 1)[scale_index])
    samples = _arc_samples(v, r / 8.0)
    centers = samples[greedy_separated(samples, 2.0 * r)]
    if len(centers) < 2:
        raise ValueError(f"scale index {scale_index} too coarse: fewer than two balls fit")
    meta = {"generator": "polyline", "radius": r, "scale_index": scale_index, "rho": rho,
            "normalization": {"scale": scale, "shift": list(map(float, shift))},
            "length": polyline_length(v)}
    return BallCollection(centers, np.full(len(centers), r), meta=meta).certify()


def _lattice(k: int, pitch: float) -> np.ndarray:
    m = int(math.floor(1.0 / pitch + 1e-9))
    axis = np.arange(-m, m + 1) * pitch
    grid = np.stack(np.meshgrid(*([axis] * k), indexing="ij"), axis=-1).reshape(-1, k)
    return grid[np.linalg.norm(grid, axis=1) <= 1.0 + 1e-12]


def plane_lattice_balls(k: int, n: int, scale_index: int, rho: float) -> BallCollection:
    """Balls of radius ``rho**s`` on the pitch-``2 rho**s`` lattice of ``span(e_1..e_k) ∩ B_1``."""
    if not 1 <= k < n:
        raise ValueError("need 1 <= k < n")
    r = float(rho_powers(rho, scale_index + 1)[scale_index])
    coords = _lattice(k, 2.0 * r)
    centers = np.zeros((len(coords), n))
    centers[:, :k] = coords
    meta = {"generator": "lattice", "k": k, "n": n, "radius": r, "scale_index": scale_index,
            "rho": rho, "normalization": {"scale": 1.0, "shift": [0.0] * n}}
    return BallCollection(centers, np.full(len(centers), r), meta=meta).certify()


def perturbed_graph_balls(amplitude: float, frequency: int, scale_index: int, rho: float,
                          k: int = 1, n: int | None = None) -> BallCollection:
    """Lattice balls lifted onto the graph ``x_{k+1} = a sin(2 pi f x_1)``.

    Centers whose lifted position leaves ``B_1`` are dropped; ``a = 0``
    reproduces :func:`plane_lattice_balls`. Graph points over lattice
    points stay ``2 rho**s``-separated, so the balls remain disjoint.
    """
    if amplitude < 0:
        raise ValueError("amplitude must be non-negative")
    n = k + 1 if n is None else n
    base = plane_lattice_balls(k, n, scale_index, rho)
    c = base.centers.copy()
    c[:, k] = amplitude * np.sin(2.0 * math.pi * frequency * c[:, 0])
    keep = np.linalg.norm(c, axis=1) <= 1.0 + 1e-12
    meta = dict(base.meta, generator="perturbed_graph", amplitude=amplitude, frequency=frequency)
    return BallCollection(c[keep], base.radii[keep], meta=meta).certify()


def snowflake_balls(spec: SnowflakeSpec, scale_index: int, rho: float = 0.25) -> BallCollection:
    bc = polyline_to_balls(snowflake_polyline(spec), scale_index, rho)
    bc.meta.update(generator="snowflake", spec=spec.to_dict())
    return bc


def write_polyline_csv(vertices, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        for x, y in np.asarray(vertices, dtype=float):
            w.writerow([repr(float(x)), repr(float(y))])


def read_polyline_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[float(a), float(b)] for a, b in rows])
