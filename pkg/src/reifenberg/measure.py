"""Finite weighted measures, ball collections and their bucket-grid index.

A :class:`DiscreteMeasure` is immutable once built. Ball-mass queries use
closed balls everywhere (atoms on the boundary count).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .geometry import Ball, omega

DISJOINT_TOL = 1e-12


class DisjointnessError(ValueError):
    pass


class GridIndex:
    """Points bucketed on a regular grid with ``cell >= query radius``.

    Points are stored sorted by their row-major cell key, which is the layout
    every kernel in :mod:`reifenberg.kernels` expects.
    """

    def __init__(self, points, cell):
        pts = np.ascontiguousarray(points, dtype=np.float64)
        self.n = pts.shape[1]
        if len(pts):
            lo, hi = pts.min(axis=0), pts.max(axis=0)
        else:
            lo = hi = np.zeros(self.n)
        extent = float(np.max(hi - lo)) if len(pts) else 1.0
        # keep the linear key inside int64
        per_axis = max(int(2 ** (62 / self.n)) - 4, 4)
        cell = max(float(cell), extent / per_axis, 1e-300)
        self.cell = cell
        self.origin = np.ascontiguousarray(lo - cell)
        ic = np.floor((pts - self.origin) / cell).astype(np.int64)
        self.dims = np.ascontiguousarray(
            (ic.max(axis=0) + 2) if len(pts) else np.ones(self.n, dtype=np.int64), dtype=np.int64)
        strides = np.ones(self.n, dtype=np.int64)
        for d in range(self.n - 2, -1, -1):
            strides[d] = strides[d + 1] * self.dims[d + 1]
        self.strides = strides
        keys = ic @ strides if len(pts) else np.empty(0, dtype=np.int64)
        self.order = np.argsort(keys, kind="stable").astype(np.int64)
        self.keys = np.ascontiguousarray(keys[self.order], dtype=np.int64)
        self.points = np.ascontiguousarray(pts[self.order])

    def _args(self):
        return self.points, self.keys, self.origin, self.cell, self.dims, self.strides

    def _check(self, r):
        if r > self.cell * (1 + 1e-12):
            raise ValueError("query radius exceeds grid cell size")

    def query(self, centers, r):
        """CSR ``(offsets, indices)`` of original point indices in each closed ball."""
        self._check(r)
        centers = np.ascontiguousarray(np.atleast_2d(centers), dtype=np.float64)
        offsets, sidx = kernels.query_ball(*self._args(), centers, float(r))
        return offsets, self.order[sidx]

    def sums(self, values, centers, r):
        self._check(r)
        vals = np.ascontiguousarray(np.asarray(values, dtype=np.float64).reshape(len(self.order), -1)[self.order])
        centers = np.ascontiguousarray(np.atleast_2d(centers), dtype=np.float64)
        return kernels.ball_sums(*self._args(), vals, centers, float(r))


@dataclass(frozen=True)
class Atom:
    position: np.ndarray
    weight: float
    source_radius: Optional[float] = None


class DiscreteMeasure:
    """``sum_j w_j delta_{x_j}`` in R^n with intrinsic dimension ``k``.

    ``radii`` holds the source-ball radius per atom (``nan`` when the atom
    did not come from a ball). ``finest_radius`` is the smallest declared
    scale; Jones sums are truncated there.
    """

    def __init__(self, positions, weights, k, radii=None, finest_radius=None, description=""):
        pos = np.array(positions, dtype=np.float64, ndmin=2)
        if pos.size == 0:
            n = pos.shape[1] if pos.ndim == 2 and pos.shape[1] else None
            if n is None:
                raise ValueError("empty measure needs positions of shape (0, n)")
            pos = pos.reshape(0, n)
        w = np.array(weights, dtype=np.float64).reshape(-1)
        if len(w) != len(pos):
            raise ValueError("positions and weights differ in length")
        if np.any(~(w > 0)) or not np.all(np.isfinite(w)):
            raise ValueError("atom weights must be positive and finite")
        if not np.all(np.isfinite(pos)):
            raise ValueError("atom positions must be finite")
        n = pos.shape[1]
        if not 1 <= k < n:
            raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
        rad = np.full(len(w), np.nan) if radii is None else np.array(radii, dtype=np.float64).reshape(-1)
        if len(rad) != len(w):
            raise ValueError("radii and weights differ in length")
        have = ~np.isnan(rad)
        if np.any(have):
            expect = omega(k) * rad[have] ** k
            if np.any(np.abs(w[have] - expect) > 1e-12 * expect):
                raise ValueError("weight must equal omega_k * radius**k for ball atoms")
        if finest_radius is None and np.any(have):
            finest_radius = float(np.min(rad[have]))
        for arr in (pos, w, rad):
            arr.setflags(write=False)
        self.positions = pos
        self.weights = w
        self.radii = rad
        self.k = int(k)
        self.n = int(n)
        self.finest_radius = finest_radius
        self.description = description
        self._grids = {}

    def __len__(self):
        return len(self.weights)

    @property
    def total_mass(self) -> float:
        return math.fsum(self.weights)

    def atoms(self):
        for p, w, r in zip(self.positions, self.weights, self.radii):
            yield Atom(p, float(w), None if np.isnan(r) else float(r))

    def grid(self, r: float) -> GridIndex:
        """Grid with power-of-two cell in ``[r, 2r)``, cached per cell size."""
        e = math.ceil(math.log2(r)) if r > 0 else -60
        if e not in self._grids:
            if len(self._grids) > 24:
                self._grids.pop(next(iter(self._grids)))
            self._grids[e] = GridIndex(self.positions, 2.0 ** e)
        return self._grids[e]

    def in_ball(self, x, r) -> np.ndarray:
        """Sorted indices of atoms in the closed ball ``B_r(x)``."""
        _, idx = self.grid(r).query(np.asarray(x, dtype=float)[None, :], r)
        return np.sort(idx)

    def masses(self, centers, r) -> np.ndarray:
        """Ball masses for many centers at one radius (compensated sums)."""
        return self.grid(r).sums(self.weights[:, None], centers, r)[:, 0]

    def subset(self, idx, description=None) -> "DiscreteMeasure":
        idx = np.asarray(idx, dtype=int)
        return DiscreteMeasure(self.positions[idx].reshape(-1, self.n), self.weights[idx], self.k,
                               self.radii[idx], self.finest_radius,
                               self.description if description is None else description)


@dataclass
class BallCollection:
    centers: np.ndarray
    radii: np.ndarray
    certified: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.centers = np.array(self.centers, dtype=float, ndmin=2)
        self.radii = np.array(self.radii, dtype=float).reshape(-1)
        if len(self.radii) == 0 and self.centers.size == 0:
            self.centers = self.centers.reshape(0, self.meta.get("n", 2))
        if np.any(~(self.radii > 0)):
            raise ValueError("ball radii must be positive")

    def __len__(self):
        return len(self.radii)

    @property
    def balls(self):
        return [Ball(c, r) for c, r in zip(self.centers, self.radii)]

    def is_disjoint(self) -> bool:
        return not first_overlap(self.centers, self.radii)

    def certify(self) -> "BallCollection":
        if not self.is_disjoint():
            raise DisjointnessError("ball collection is not disjoint")
        self.certified = True
        return self


def first_overlap(centers, radii, tol=DISJOINT_TOL):
    """A pair ``(i, j)`` with ``|c_i - c_j| < r_i + r_j - tol``, else ``None``.

    Each radius class is queried against the balls no larger than it, so
    mixed-radius families cost about as much as single-radius ones.
    """
    centers = np.asarray(centers, dtype=float)
    radii = np.asarray(radii, dtype=float)
    if len(radii) < 2:
        return None
    found = []
    for R in np.unique(radii)[::-1]:
        small = np.flatnonzero(radii <= R)
        big = np.flatnonzero(radii == R)
        if len(small) < 2:
            continue
        tree = cKDTree(centers[small])
        hits = tree.query_ball_point(centers[big], 2 * float(R))
        counts = np.fromiter((len(h) for h in hits), dtype=np.int64, count=len(hits))
        if counts.sum() == 0:
            continue
        a = np.repeat(big, counts)
        b = small[np.concatenate([np.asarray(h, dtype=np.int64) for h in hits])]
        keep = a != b
        a, b = a[keep], b[keep]
        d = np.linalg.norm(centers[a] - centers[b], axis=1)
        bad = d < radii[a] + radii[b] - tol
        if np.any(bad):
            lo, hi = np.minimum(a[bad], b[bad]), np.maximum(a[bad], b[bad])
            first = np.lexsort((hi, lo))[0]
            found.append((int(lo[first]), int(hi[first])))
    return min(found) if found else None


def measure_from_balls(S: BallCollection, k: int, description="") -> DiscreteMeasure:
    """The associated measure ``sum_j omega_k r_j^k delta_{x_j}``."""
    w = omega(k) * S.radii ** k
    return DiscreteMeasure(S.centers, w, k, radii=S.radii,
                           description=description or S.meta.get("description", ""))


def mass_in_ball(mu: DiscreteMeasure, x, r: float) -> float:
    """``mu(B_r(x))`` for the closed ball, correctly rounded (``math.fsum``)."""
    if not r > 0:
        raise ValueError("radius must be positive")
    if len(mu) == 0:
        return 0.0
    return math.fsum(mu.weights[mu.in_ball(x, r)])


def scale_measure(mu: DiscreteMeasure, lam: float) -> DiscreteMeasure:
    """``nu(A) = lam**-k mu(lam A)``: positions / lam, weights / lam**k."""
    if not lam > 0:
        raise ValueError("scale factor must be positive")
    fin = None if mu.finest_radius is None else mu.finest_radius / lam
    return DiscreteMeasure(mu.positions / lam, mu.weights / lam ** mu.k, mu.k,
                           radii=mu.radii / lam, finest_radius=fin, description=mu.description)


def rho_powers(rho: float, count: int) -> np.ndarray:
    """``[rho**0, ..., rho**(count-1)]`` by repeated multiplication."""
    out = np.empty(count)
    v = 1.0
    for i in range(count):
        out[i] = v
        v *= rho
    return out


def scale_index(r: float, rho: float, max_index: int = 200) -> int:
    """``j >= 1`` with ``rho**j <= r < rho**(j-1)`` (``j = 1`` when ``r >= rho``)."""
    ladder = rho_powers(rho, max_index + 1)
    for j in range(1, max_index + 1):
        if ladder[j] <= r * (1 + 1e-12):
            return j
    raise ValueError("radius below the supported scale range")


def snap_radii(S: BallCollection, rho: float) -> BallCollection:
    """Shrink every radius to the ρ-adic value just below it."""
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    if not S.is_disjoint():
        raise DisjointnessError("snap_radii needs a disjoint collection")
    idx = [scale_index(r, rho) for r in S.radii]
    ladder = rho_powers(rho, max(idx, default=1) + 1)
    radii = np.array([ladder[j] for j in idx])
    meta = dict(S.meta, rho=rho)
    return BallCollection(S.centers.copy(), radii, certified=True, meta=meta)


def center_of_mass(mu: DiscreteMeasure, ball: Ball) -> np.ndarray:
    idx = mu.in_ball(ball.center, ball.radius)
    if len(idx) == 0:
        raise ValueError("center of mass of a ball with zero mass")
    w = mu.weights[idx]
    total = math.fsum(w)
    p = mu.positions[idx]
    return np.array([math.fsum(w * p[:, d]) / total for d in range(mu.n)])


def upper_density_profile(mu: DiscreteMeasure, x, radii) -> list:
    """``mu(B_r(x)) / (omega_k r^k)`` for each radius."""
    wk = omega(mu.k)
    if len(mu) == 0:
        return [0.0 for _ in radii]
    return [mass_in_ball(mu, x, r) / (wk * r ** mu.k) for r in radii]


@dataclass
class VitaliResult:
    collection: BallCollection        # {B_{r_j/10}(p_j)}
    nu: DiscreteMeasure               # sum omega_k (r_j/10)^k delta_{p_j}
    source_centers: np.ndarray        # x_j of the retained covering balls
    source_radii: np.ndarray          # r_j
    leftover: list                    # atom indices with no admissible radius


def vitali_discretize(sample: DiscreteMeasure, rho: float, menu_depth: int = 12,
                      resolution: float | None = None) -> VitaliResult:
    """Discretise a sampled k-dimensional measure through a Vitali subcovering.

    Each atom ``x`` gets the largest radius ``r_x`` from ``{rho, ..., rho**menu_depth}``
    with ``mu(B_{r_x/10}(x)) >= 2**(-k-1) omega_k (r_x/10)**k`` and
    ``mu(B_r(x)) <= 2 omega_k r**k`` for every menu radius ``r <= r_x`` above
    ``resolution`` (default: ten times the median nearest-neighbour spacing,
    below which the sample does not resolve densities). The balls
    ``B_{r_x/5}(x)`` are then selected greedily (radius descending, ties by
    lexicographic center), and each kept ball contributes the atom
    ``omega_k (r_j/10)**k`` at the center of mass ``p_j`` of ``B_{r_j/10}(x_j)``.
    """
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    k, n = sample.k, sample.n
    wk = omega(k)
    empty = VitaliResult(BallCollection(np.zeros((0, n)), np.zeros(0), True, {"n": n}),
                         DiscreteMeasure(np.zeros((0, n)), np.zeros(0), k),
                         np.zeros((0, n)), np.zeros(0), [])
    N = len(sample)
    if N == 0:
        return empty
    if resolution is None:
        if N > 1:
            nn = cKDTree(sample.positions).query(sample.positions, k=2)[0][:, 1]
            resolution = 10.0 * float(np.median(nn))
        else:
            resolution = 0.0
    menu = rho_powers(rho, menu_depth + 1)[1:]
    X = sample.positions
    lower_ok = {}
    upper_ok = {}
    for r in menu:
        lower_ok[r] = sample.masses(X, r / 10) >= 2.0 ** (-k - 1) * wk * (r / 10) ** k
        if r >= resolution:
            upper_ok[r] = sample.masses(X, r) <= 2.0 * wk * r ** k
    if N == 1:
        # a lone atom is its own (trivially resolved) measure
        lower_ok = {r: np.ones(1, bool) for r in menu}
        upper_ok = {}
    chosen = np.full(N, np.nan)
    for i in range(N):
        for a, r in enumerate(menu):
            if r / 10 < resolution and N > 1:
                break
            if not lower_ok[r][i]:
                continue
            if all(upper_ok[s][i] for s in menu[a:] if s in upper_ok):
                chosen[i] = r
                break
    leftover = [int(i) for i in np.flatnonzero(np.isnan(chosen))]
    cand = np.flatnonzero(~np.isnan(chosen))
    order = sorted(cand, key=lambda i: (-chosen[i], tuple(X[i])))
    kept = []
    kept_c, kept_r = [], []
    tree_pts = []
    for i in order:
        c, r5 = X[i], chosen[i] / 5
        ok = True
        for c2, r2 in zip(kept_c, kept_r):
            if np.linalg.norm(c - c2) <= (r5 + r2 / 5):
                ok = False
                break
        if ok:
            kept.append(i)
            kept_c.append(c)
            kept_r.append(chosen[i])
            tree_pts.append(c)
    src_c = np.array(kept_c).reshape(-1, n)
    src_r = np.array(kept_r)
    p = np.array([center_of_mass(sample, Ball(c, r / 10)) for c, r in zip(src_c, src_r)]).reshape(-1, n)
    radii = src_r / 10
    coll = BallCollection(p, radii, meta={"n": n, "rho": rho, "source": "vitali"})
    coll.certify()
    nu = DiscreteMeasure(p, wk * radii ** k, k, radii=radii,
                         description=f"vitali({sample.description})")
    return VitaliResult(coll, nu, src_c, src_r, leftover)


# ---------------------------------------------------------------- file I/O

def _fmt(x: float) -> str:
    return repr(float(x))


def write_measure_csv(mu: DiscreteMeasure, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow([f"x{d}" for d in range(mu.n)] + ["weight", "radius"])
        for p, wt, r in zip(mu.positions, mu.weights, mu.radii):
            w.writerow([_fmt(v) for v in p] + [_fmt(wt), "" if np.isnan(r) else _fmt(r)])


def read_measure_csv(path, k: int, description="") -> DiscreteMeasure:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n = len(header) - 2
    pos = np.array([[float(v) for v in row[:n]] for row in body]).reshape(-1, n)
    w = np.array([float(row[n]) for row in body])
    rad = np.array([float(row[n + 1]) if row[n + 1] != "" else np.nan for row in body])
    return DiscreteMeasure(pos, w, k, radii=rad, description=description)


def measure_to_json(mu: DiscreteMeasure) -> dict:
    return {
        "n": mu.n,
        "k": mu.k,
        "description": mu.description,
        "finest_radius": mu.finest_radius,
        "atoms": [[float(v) for v in p] + [float(wt), None if np.isnan(r) else float(r)]
                  for p, wt, r in zip(mu.positions, mu.weights, mu.radii)],
    }


def measure_from_json(doc: dict) -> DiscreteMeasure:
    n, k = int(doc["n"]), int(doc["k"])
    atoms = doc["atoms"]
    pos = np.array([a[:n] for a in atoms], dtype=float).reshape(-1, n)
    w = np.array([a[n] for a in atoms], dtype=float)
    rad = np.array([np.nan if a[n + 1] is None else a[n + 1] for a in atoms], dtype=float)
    return DiscreteMeasure(pos, w, k, radii=rad, finest_radius=doc.get("finest_radius"),
                           description=doc.get("description", ""))


def write_measure_json(mu: DiscreteMeasure, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(measure_to_json(mu), fh)


def read_measure_json(path) -> DiscreteMeasure:
    with open(path, encoding="utf-8") as fh:
        return measure_from_json(json.load(fh))
