"""Multiscale covering, sigma-maps, approximating surfaces and the key estimates.

The construction follows the usual stopping-time pattern. At scale ``i``
every *good* ball ``B_{r_i}(y)`` carries a best plane at radius ``kappa r_i``.
Atoms far from that plane go into the excess set. The rest of the good region
is re-covered at scale ``i+1`` by source balls of that radius (*fin*) and by
a maximal separated family of deeper atoms, which splits into *good* and
*bad* balls by the mass threshold ``tau M r^k``.

Two kinds of check run along the way:

* hard invariants (coverage, half-ball disjointness, centre exclusion,
  termination, the Markov excess inequality) raise
  :class:`InvariantViolation`; they are consequences of the definitions and
  must never fail;
* soft checks (displacement, local area, bi-Lipschitz, graph property,
  surface density, mass comparison) depend on the unknown constant ``M``;
  :func:`run_construction` doubles ``M`` until all of them pass.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import linregress

from .generators import greedy_separated
from .geometry import AffinePlane, Ball, omega, point_plane_distance
from .jones import beta_values, fit_planes, flatness
from .measure import DISJOINT_TOL, DiscreteMeasure, first_overlap, mass_in_ball, rho_powers
from .surface import (CellLocator, MeshError, MeshSurface, SigmaMap, graph_check, measure_in_ball,
                      plane_mesh, pushforward_surface, segment_mesh, disk_mesh, simplex_singular_values,
                      surface_area, lipschitz_of_images)

C0 = 10.0                   # M_0 = C0 * max(1, J^(q/(q+2)))
MAX_DOUBLINGS = 64
DISPLACEMENT_FACTOR = 0.1   # |sigma(y) - y| <= r / 10
AREA_FACTOR = 10.0          # |T ∩ 5B| <= 10 omega_k (5r)^k
GRAPH_FACTOR = 2.0          # graph over the local plane on 2B
RATIO_TOL = 1e-12           # float slack on telescoping area products


class PreconditionError(ValueError):
    """The input measure does not satisfy the construction's hypotheses."""


class InvariantViolation(RuntimeError):
    """A hard invariant failed; ``identifier`` names it."""

    def __init__(self, identifier: str, detail: str = ""):
        super().__init__(f"{identifier}: {detail}" if detail else identifier)
        self.identifier = identifier
        self.detail = detail


def default_tau(n: int) -> float:
    return 1.0 / (80.0 * 6.0 ** n)


def comparison_constant(k: int) -> float:
    """``C_1 = 20 * 3^k``."""
    return 20.0 * 3.0 ** k


@dataclass(frozen=True)
class ScaleLadder:
    """Radii ``r_i = rho^i`` for ``i = 0..A`` with ``kappa = 1/(1 - rho)``."""

    rho: float
    A: int
    tau: float

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if self.A < 1:
            raise ValueError("need at least one scale below the unit ball")
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    @property
    def radii(self) -> np.ndarray:
        return rho_powers(self.rho, self.A + 1)

    @property
    def kappa(self) -> float:
        return 1.0 / (1.0 - self.rho)

    @classmethod
    def for_measure(cls, mu: DiscreteMeasure, rho: float = 0.25, tau: float | None = None,
                    A: int | None = None) -> "ScaleLadder":
        """Ladder down to the finest source radius of ``mu``."""
        if A is None:
            A = int(np.max(atom_scale_indices(mu, rho)))
        return cls(rho, A, default_tau(mu.n) if tau is None else tau)

    def to_dict(self):
        return {"rho": self.rho, "A": self.A, "tau": self.tau, "kappa": self.kappa,
                "radii": self.radii.tolist()}


def atom_scale_indices(mu: DiscreteMeasure, rho: float) -> np.ndarray:
    """Index ``j`` with ``radius == rho**j`` for every atom, or a precondition error."""
    if np.any(np.isnan(mu.radii)):
        raise PreconditionError("every atom must come from a source ball")
    ladder = rho_powers(rho, 400)
    j = np.rint(np.log(mu.radii) / math.log(rho)).astype(np.int64)
    if np.any(j < 1) or np.any(j >= len(ladder)):
        raise PreconditionError("source radii must be rho^j with j >= 1")
    if np.any(np.abs(ladder[j] - mu.radii) > 1e-12 * mu.radii):
        raise PreconditionError("source radii are not rho-adic")
    return j


# ------------------------------------------------------------------ elementary operations

def separated_indices(points, r: float) -> np.ndarray:
    """Greedy maximal subset in input order with pairwise distances ``>= r``."""
    if not r > 0:
        raise ValueError("separation must be positive")
    pts = np.asarray(points, dtype=float)
    if len(pts) == 0:
        return np.zeros(0, dtype=np.int64)
    return greedy_separated(pts, r, tol=0.0)


def separated_subset(points, r: float) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    return pts[separated_indices(pts, r)]


def classify_ball(mu: DiscreteMeasure, ball: Ball, tau: float, M: float) -> str:
    """``"good"`` when ``mu(B) >= tau M r^k``, else ``"bad"``."""
    if not (tau > 0 and M > 0):
        raise ValueError("tau and M must be positive")
    mass = mass_in_ball(mu, ball.center, ball.radius) if len(mu) else 0.0
    return "good" if mass >= tau * M * ball.radius ** mu.k else "bad"


def excess_set(mu: DiscreteMeasure, good_ball: Ball, plane: AffinePlane, r_next: float) -> np.ndarray:
    """Atoms of ``good_ball`` at distance ``>= r_next / 4`` from ``plane``."""
    idx = mu.in_ball(good_ball.center, good_ball.radius)
    d = point_plane_distance(mu.positions[idx], plane)
    return idx[4.0 * d >= r_next]


def markov_terms(weights, dist, r_next: float, q: float):
    """``(mu(E), (4/r_next)^q sum w d^q)`` with the right side summed termwise.

    Each excess atom contributes ``w (4d/r)^q >= w`` to the right side, so
    correctly rounded sums keep the inequality exact in floating point.
    """
    w = np.asarray(weights, dtype=float)
    x = 4.0 * np.asarray(dist, dtype=float) / r_next
    lhs = math.fsum(w[x >= 1.0])
    rhs = math.fsum(w * x ** q)
    return lhs, rhs


# ------------------------------------------------------------------ covering

@dataclass
class ScaleRecord:
    index: int
    radius: float
    good: np.ndarray                     # (G, n) centres
    bad: np.ndarray                      # (B, n)
    fin: np.ndarray                      # (F, n)
    fin_atoms: np.ndarray                # atom indices of fin balls
    excess_new: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    excess_mass: float = 0.0             # mu(E^{<=i}) after this scale's excess
    plane_bases: np.ndarray | None = None      # L^q planes V(y, kappa r_i) of good balls
    plane_frames: np.ndarray | None = None
    sigma_bases: np.ndarray | None = None      # L^2 planes used by sigma_i
    sigma_frames: np.ndarray | None = None
    markov: list = field(default_factory=list)  # (lhs, rhs) per good ball

    def good_balls(self):
        return [Ball(c, self.radius) for c in self.good]

    def planes(self, which="sigma"):
        b, f = (self.sigma_bases, self.sigma_frames) if which == "sigma" else (self.plane_bases, self.plane_frames)
        return [] if b is None else [AffinePlane(x, y) for x, y in zip(b, f)]

    def to_dict(self):
        def planes(b, f):
            return None if b is None else [{"base": x.tolist(), "frame": y.tolist()} for x, y in zip(b, f)]
        return {"index": self.index, "radius": self.radius,
                "good": self.good.tolist(), "bad": self.bad.tolist(), "fin": self.fin.tolist(),
                "fin_atoms": self.fin_atoms.tolist(), "excess_new": self.excess_new.tolist(),
                "excess_mass": self.excess_mass,
                "best_planes": planes(self.plane_bases, self.plane_frames),
                "sigma_planes": planes(self.sigma_bases, self.sigma_frames),
                "markov": [list(m) for m in self.markov]}


@dataclass
class CoveringHierarchy:
    ladder: ScaleLadder
    M: float
    q: float
    k: int
    n: int
    scales: list
    excess: np.ndarray          # bool mask of E^{<=A}
    trivial: bool               # B_1 itself was bad
    mass_B1: float
    checks: dict
    run_id: str

    @property
    def excess_mass_total(self) -> float:
        return self.scales[-1].excess_mass if self.scales else 0.0

    def final_balls(self):
        """``(scale, kind, Ball)`` for every bad and fin ball."""
        out = []
        for rec in self.scales:
            out += [(rec.index, "bad", Ball(c, rec.radius)) for c in rec.bad]
            out += [(rec.index, "fin", Ball(c, rec.radius)) for c in rec.fin]
        return out

    def to_dict(self):
        return {"run_id": self.run_id, "M": self.M, "q": self.q, "k": self.k, "n": self.n,
                "ladder": self.ladder.to_dict(), "trivial": self.trivial, "mass_B1": self.mass_B1,
                "excess_atoms": np.flatnonzero(self.excess).tolist(), "checks": self.checks,
                "scales": [s.to_dict() for s in self.scales]}


def _run_id(mu: DiscreteMeasure, ladder: ScaleLadder, M: float, q: float) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mu.positions).tobytes())
    h.update(np.ascontiguousarray(mu.weights).tobytes())
    h.update(repr((ladder.rho, ladder.A, ladder.tau, float(M), float(q))).encode())
    return h.hexdigest()[:16]


def _covered(mu: DiscreteMeasure, centers: np.ndarray, r: float) -> np.ndarray:
    mask = np.zeros(len(mu), bool)
    if len(centers):
        _, idx = mu.grid(r).query(centers, r)
        mask[idx] = True
    return mask


def _check_preconditions(mu: DiscreteMeasure, ladder: ScaleLadder) -> np.ndarray:
    if len(mu) == 0:
        raise PreconditionError("empty measure")
    j = atom_scale_indices(mu, ladder.rho)
    if j.max() > ladder.A:
        raise PreconditionError(f"finest source scale {j.max()} below ladder end {ladder.A}")
    if np.any(np.linalg.norm(mu.positions, axis=1) > 1.0 + DISJOINT_TOL):
        raise PreconditionError("source centres must lie in the closed unit ball")
    if first_overlap(mu.positions, mu.radii) is not None:
        raise PreconditionError("source balls are not disjoint")
    return j


def build_covering(mu: DiscreteMeasure, ladder: ScaleLadder, M: float, q: float = 2.0) -> CoveringHierarchy:
    """Good/Bad/Fin/Excess families for every scale, with all hard checks asserted."""
    if not M > 0:
        raise ValueError("M must be positive")
    jidx = _check_preconditions(mu, ladder)
    k, n, N = mu.k, mu.n, len(mu)
    radii, kappa, tau = ladder.radii, ladder.kappa, ladder.tau
    pos, w = mu.positions, mu.weights
    empty = np.zeros((0, n))
    checks = {"claim2.coverage": 0, "claim2.disjoint": 0, "claim2.centers": 0, "markov": 0,
              "termination": 0}

    mass1 = mass_in_ball(mu, np.zeros(n), 1.0)
    trivial = not mass1 >= tau * M
    origin = np.zeros((1, n))
    rec0 = ScaleRecord(0, 1.0, empty if trivial else origin, origin if trivial else empty, empty,
                       np.zeros(0, np.int64))
    scales = [rec0]
    removed = _covered(mu, rec0.bad, 1.0)       # atoms inside bad/fin balls so far
    excess = np.zeros(N, bool)
    half_c = [rec0.bad]
    half_r = [np.full(len(rec0.bad), 0.5)]
    _claim2(mu, jidx, scales, removed, excess, half_c, half_r, checks)

    for i in range(ladder.A):
        r_i, r_n = float(radii[i]), float(radii[i + 1])
        rec = scales[i]
        G = rec.good
        if len(G):
            fit = fit_planes(mu, G, kappa * r_i, q)
            fit2 = fit if q == 2.0 else fit_planes(mu, G, kappa * r_i, 2.0)
            rec.plane_bases, rec.plane_frames = fit.bases, fit.frames
            rec.sigma_bases, rec.sigma_frames = fit2.bases, fit2.frames
            off, idx = mu.grid(r_i).query(G, r_i)
            new = []
            for g in range(len(G)):
                atoms = idx[off[g]:off[g + 1]]
                plane = AffinePlane(fit.bases[g], fit.frames[g])
                d = point_plane_distance(pos[atoms], plane)
                lhs, rhs = markov_terms(w[atoms], d, r_n, q)
                if not lhs <= rhs:
                    raise InvariantViolation("markov", f"scale {i} ball {g}: {lhs!r} > {rhs!r}")
                checks["markov"] += 1
                rec.markov.append((lhs, rhs))
                new.append(atoms[4.0 * d >= r_n])
            new = np.unique(np.concatenate(new)) if new else np.zeros(0, np.int64)
            rec.excess_new = new[~excess[new]]
            excess[new] = True
        rec.excess_mass = math.fsum(w[excess])

        in_good = _covered(mu, G, r_i)
        U = in_good & ~removed & ~excess
        fin_atoms = np.flatnonzero(U & (jidx == i + 1))
        star = np.flatnonzero(U & (jidx > i + 1))
        J = pos[star][separated_indices(pos[star], r_n)] if len(star) else empty
        masses = mu.masses(J, r_n) if len(J) else np.zeros(0)
        is_good = masses >= tau * M * r_n ** k
        nrec = ScaleRecord(i + 1, r_n, J[is_good], J[~is_good], pos[fin_atoms], fin_atoms)
        scales.append(nrec)
        removed |= _covered(mu, nrec.bad, r_n) | _covered(mu, nrec.fin, r_n)
        half_c += [nrec.bad, nrec.fin]
        half_r += [np.full(len(nrec.bad) + len(nrec.fin), r_n / 2)]
        _claim2(mu, jidx, scales, removed, excess, half_c, half_r, checks)

    if len(scales[-1].good):
        raise InvariantViolation("termination", f"{len(scales[-1].good)} good balls at the finest scale")
    checks["termination"] += 1
    scales[-1].excess_mass = math.fsum(w[excess])
    return CoveringHierarchy(ladder, float(M), float(q), k, n, scales, excess, trivial, mass1, checks,
                             _run_id(mu, ladder, M, q))


def _claim2(mu, jidx, scales, removed, excess, half_c, half_r, checks):
    rec = scales[-1]
    i, r = rec.index, rec.radius
    # (a) coverage: good balls of this scale, bad/fin so far, excess of earlier scales
    cov = removed | excess | _covered(mu, rec.good, r)
    if not np.all(cov):
        raise InvariantViolation("claim2.coverage", f"scale {i}: atom {int(np.flatnonzero(~cov)[0])} uncovered")
    checks["claim2.coverage"] += 1
    # (b) half-balls of Good^i and all bad/fin balls so far
    cen = np.vstack([rec.good] + half_c)
    rad = np.concatenate([np.full(len(rec.good), r / 2)] + half_r)
    pair = first_overlap(cen, rad)
    if pair is not None:
        raise InvariantViolation("claim2.disjoint", f"scale {i}: half-balls {pair} overlap")
    checks["claim2.disjoint"] += 1
    # (c) no source centre of scale <= i strictly inside a good ball
    if len(rec.good):
        off, idx = mu.grid(r).query(rec.good, r)
        d = np.linalg.norm(mu.positions[idx] - np.repeat(rec.good, np.diff(off), axis=0), axis=1)
        bad = (jidx[idx] <= i) & (d < r)
        if np.any(bad):
            raise InvariantViolation("claim2.centers", f"scale {i}: atom {int(idx[np.argmax(bad)])} inside a good ball")
    checks["claim2.centers"] += 1


# ------------------------------------------------------------------ surfaces

@dataclass
class SurfaceStep:
    scale: int
    area: float
    good_balls: int
    max_displacement: float
    max_lipschitz: float
    max_local_area_ratio: float     # |T ∩ 5B| / (10 omega_k (5r)^k)
    max_graph_c1: float
    min_density_ratio: float        # |T ∩ B/2| r^-k * 20 * 3^k over new bad/fin balls
    refined: bool = False

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class SoftFailure:
    identifier: str
    scale: int
    detail: str

    def to_dict(self):
        return dict(self.__dict__)


def initial_surface(mu: DiscreteMeasure, ladder: ScaleLadder, max_edge: float | None = None,
                    run_id: str = "") -> MeshSurface:
    """``T_0``: the L^2 best plane at ``(0, kappa)`` meshed on ``B_1.5``."""
    n = mu.n
    fit = fit_planes(mu, np.zeros((1, n)), ladder.kappa, 2.0)
    plane = AffinePlane(fit.bases[0], fit.frames[0])
    edge = ladder.radii[-1] / 2 if max_edge is None else max_edge
    mesh = plane_mesh(plane, np.zeros(n), 1.5, edge)
    mesh.provenance = [{"run": run_id, "scale": 0, "plane": plane.to_dict(), "edge": edge}]
    return mesh


def _density_floor(k):
    return 1.0 / comparison_constant(k)


def build_surfaces(mu: DiscreteMeasure, h: CoveringHierarchy, max_edge: float | None = None,
                   stop_on_failure: bool = True):
    """Push ``T_0`` through every ``sigma_{i+1}`` and run the soft checks.

    Returns ``(surfaces, steps, failures)``; ``surfaces[i]`` is ``T_i``.
    """
    k = h.k
    T = initial_surface(mu, h.ladder, max_edge, h.run_id)
    surfaces, steps, failures = [T], [], []
    lip_cap = 2.0 ** (1.0 / k)
    floor = _density_floor(k)

    def fail(ident, scale, detail):
        failures.append(SoftFailure(ident, scale, detail))

    rec0 = h.scales[0]
    d0 = _min_density(T, rec0, floor)
    if d0 < 1.0:
        fail("comparison.density", 0, f"ratio {d0!r}")
    steps.append(SurfaceStep(0, surface_area(T), len(rec0.good), 0.0, 1.0, 0.0, 0.0, d0))
    for rec in h.scales[1:]:
        if failures and stop_on_failure:
            break
        s, r = rec.index, rec.radius
        G = rec.good
        refined = False
        if len(G):
            sigma = SigmaMap.from_planes(s, rec.good_balls(), rec.planes("sigma"))
            try:
                Tn = pushforward_surface(T, sigma)
            except MeshError as exc:
                fail("pushforward", s, str(exc))
                break
            src = T
            if Tn.cells.shape != T.cells.shape:
                src, refined = T.refined(), True
            disp = float(np.max(np.linalg.norm(Tn.vertices - src.vertices, axis=1)))
            if disp > DISPLACEMENT_FACTOR * r:
                fail("prop1a.displacement", s, f"{disp!r} > r/10 = {DISPLACEMENT_FACTOR * r!r}")
            smax, smin, _ = simplex_singular_values(src.vertices, Tn.vertices, src.cells, k)
            area_before, area_after = surface_area(src), surface_area(Tn)
            L = max(float(np.max(smax)), 1.0)
            if area_after > area_before * L ** k * (1 + RATIO_TOL):
                raise InvariantViolation("area.telescoping", f"scale {s}: {area_after!r} > {area_before!r} * {L!r}^{k}")
            src_loc, dst_loc = CellLocator(src), CellLocator(Tn)
            planes = rec.planes("sigma")
            lip_max = area_max = c1_max = 0.0
            for y, plane in zip(G, planes):
                cells = src_loc.near(y, 5 * r)
                lip = max(float(np.max(smax[cells])), 1.0 / float(np.min(smin[cells])), 1.0) if len(cells) else 1.0
                lip_max = max(lip_max, lip)
                if lip > lip_cap:
                    fail("prop1c.lipschitz", s, f"{lip!r} > 2^(1/k) at {y.tolist()}")
                loc = measure_in_ball(Tn, Ball(y, 5 * r), cells=dst_loc.near(y, 5 * r))
                ratio = loc / (AREA_FACTOR * omega(k) * (5 * r) ** k)
                area_max = max(area_max, ratio)
                if ratio > 1.0:
                    fail("prop1b.area", s, f"|T ∩ 5B| ratio {ratio!r} at {y.tolist()}")
                try:
                    gc = graph_check(Tn, plane, Ball(y, GRAPH_FACTOR * r), cells=dst_loc.near(y, GRAPH_FACTOR * r))
                except MeshError as exc:
                    fail("prop1d.graph", s, str(exc))
                    continue
                if not gc.is_graph:
                    fail("prop1d.graph", s, f"fold {gc.witness} at {y.tolist()}")
                else:
                    c1_max = max(c1_max, gc.c1_norm)
                if failures and stop_on_failure:
                    break
            T = Tn
        else:
            disp, lip_max, area_max, c1_max = 0.0, 1.0, 0.0, 0.0
        dens = _min_density(T, rec, floor)
        if dens < 1.0:
            fail("comparison.density", s, f"ratio {dens!r}")
        surfaces.append(T)
        steps.append(SurfaceStep(s, surface_area(T), len(G), disp, lip_max, area_max, c1_max, dens, refined))
    if not failures:
        _key_comparison(mu, h, surfaces[-1], failures)
    return surfaces, steps, failures


def _min_density(T: MeshSurface, rec: ScaleRecord, floor: float) -> float:
    """``min |T ∩ B/2| / (floor r^k)`` over the bad and fin balls of ``rec`` (``inf`` if none)."""
    balls = np.vstack([rec.bad, rec.fin])
    if len(balls) == 0:
        return math.inf
    loc = CellLocator(T)
    r = rec.radius
    vals = [measure_in_ball(T, Ball(c, r / 2), cells=loc.near(c, r / 2)) for c in balls]
    return min(vals) / (floor * r ** T.k)


def _key_comparison(mu, h, TA, failures):
    C1 = comparison_constant(h.k)
    loc = CellLocator(TA)
    worst = 0.0
    for s, kind, b in h.final_balls():
        m = mass_in_ball(mu, b.center, b.radius)
        t = measure_in_ball(TA, b.scaled(0.5), cells=loc.near(b.center, b.radius / 2))
        bound = C1 * h.ladder.tau * h.M * t
        if not m <= bound:
            failures.append(SoftFailure("comparison.key", s, f"{kind} ball {b.center.tolist()}: {m!r} > {bound!r}"))
            return
        worst = max(worst, m / bound if bound > 0 else math.inf)
    return worst


# ------------------------------------------------------------------ reports and the runner

def key_estimates_report(h: CoveringHierarchy, surfaces, mu: DiscreteMeasure, ladder: ScaleLadder | None = None,
                         beta_sums: bool = True) -> dict:
    """Per-scale surface area, comparison ratio, excess mass and beta sums."""
    ladder = h.ladder if ladder is None else ladder
    if ladder != h.ladder:
        raise ValueError("ladder does not belong to this hierarchy")
    run = surfaces[0].provenance[0].get("run") if surfaces and surfaces[0].provenance else None
    if run != h.run_id:
        raise ValueError(f"mismatched run identifiers: surfaces {run!r}, hierarchy {h.run_id!r}")
    k, q = h.k, h.q
    C1 = comparison_constant(k)
    radii = ladder.radii
    beta_int = []
    if beta_sums:
        for l in range(ladder.A + 1):
            R = 6.0 * radii[l]
            fit = fit_planes(mu, mu.positions, R, q)
            beta_int.append(math.fsum(mu.weights * beta_values(fit, R, k, q) ** 2))
    rows = []
    final = h.final_balls()
    for i, T in enumerate(surfaces):
        loc = CellLocator(T)
        worst = 0.0
        for s, kind, b in final:
            if s > i:
                continue
            t = measure_in_ball(T, b.scaled(0.5), cells=loc.near(b.center, b.radius / 2))
            m = mass_in_ball(mu, b.center, b.radius)
            worst = max(worst, m / t if t > 0 else math.inf)
        rows.append({
            "scale": i, "area": surface_area(T), "max_mass_over_surface": worst,
            "excess_mass": h.scales[i].excess_mass if i < len(h.scales) else h.excess_mass_total,
            "beta_sum": math.fsum(beta_int[:i]) if beta_sums else None,
            "lookback_radius": float(6.0 * radii[i - 2]) if i >= 2 else float(ladder.kappa),
            "lookback_clamped": i < 2,
        })
    TA = surfaces[-1]
    loc = CellLocator(TA)
    comps = []
    for s, kind, b in final:
        m = mass_in_ball(mu, b.center, b.radius)
        t = measure_in_ball(TA, b.scaled(0.5), cells=loc.near(b.center, b.radius / 2))
        comps.append((m, C1 * ladder.tau * h.M * t))
    ok = all(m <= bound for m, bound in comps)
    return {"run_id": h.run_id, "M": h.M, "q": q, "C1": C1, "rows": rows,
            "comparison_pass": ok,
            "comparison_worst": max((m / b if b > 0 else math.inf) for m, b in comps) if comps else 0.0,
            "area_T0": rows[0]["area"], "area_TA": rows[-1]["area"],
            "excess_mass": h.excess_mass_total}


@dataclass
class ConstructionRun:
    hierarchy: CoveringHierarchy
    surfaces: list
    steps: list
    attempts: list            # one dict per tried M
    J: float
    M0: float

    @property
    def M(self) -> float:
        return self.hierarchy.M

    def to_dict(self):
        return {"M": self.M, "M0": self.M0, "J": self.J, "attempts": self.attempts,
                "steps": [s.to_dict() for s in self.steps], "hierarchy": self.hierarchy.to_dict()}


def _signature(h: CoveringHierarchy) -> bytes:
    d = hashlib.sha256()
    for rec in h.scales:
        for arr in (rec.good, rec.bad, rec.fin):
            d.update(np.ascontiguousarray(arr).tobytes())
            d.update(b"|")
    return d.digest()


def initial_M(J: float, q: float, C: float = C0) -> float:
    return C * max(1.0, J ** (q / (q + 2.0)))


def run_construction(mu: DiscreteMeasure, ladder: ScaleLadder, q: float = 2.0, M0: float | None = None,
                     J: float | None = None, max_edge: float | None = None,
                     max_doublings: int = MAX_DOUBLINGS) -> ConstructionRun:
    """Covering plus surfaces, doubling ``M`` until every soft check passes.

    Hard invariant failures propagate as :class:`InvariantViolation`. Since
    ``B_1`` turns bad once ``tau M > mu(B_1)``, the doubling terminates.
    """
    if J is None:
        J = flatness(mu, q, ladder.rho, finest=ladder.A).J_sup if M0 is None else 0.0
    M = initial_M(J, q) if M0 is None else float(M0)
    attempts = []
    prev = None
    for _ in range(max_doublings + 1):
        h = build_covering(mu, ladder, M, q)
        sig = _signature(h)
        if prev is not None and prev[0] == sig and prev[3]:
            # same covering: only the M-dependent comparison can change
            surfaces = [MeshSurface(T.vertices, T.cells, T.k, T.scale, [dict(T.provenance[0], run=h.run_id)]
                                    + list(T.provenance[1:])) for T in prev[1]]
            steps, failures = prev[2], []
            _key_comparison(mu, h, surfaces[-1], failures)
        else:
            surfaces, steps, failures = build_surfaces(mu, h, max_edge)
        only_key = bool(failures) and all(f.identifier == "comparison.key" for f in failures)
        prev = (sig, surfaces, steps, only_key)
        attempts.append({"M": M, "trivial": h.trivial,
                         "failure": failures[0].to_dict() if failures else None})
        if not failures:
            return ConstructionRun(h, surfaces, steps, attempts, float(J), attempts[0]["M"])
        M *= 2.0
    raise InvariantViolation("m.doubling", f"no admissible M after {max_doublings} doublings")


# ------------------------------------------------------------------ the bound

@dataclass
class Verdict:
    mode: str
    q: float
    mu_B1: float
    J: float
    exponent: float
    ratio: float
    claim1_M: float
    claim1_max_density: float
    claim1_balls: int
    claim1_pass: bool

    def to_dict(self):
        return dict(self.__dict__)


def claim1_density(mu: DiscreteMeasure, ladder: ScaleLadder):
    """Max of ``mu(B_{r_j}(x)) / r_j^k`` over sampled balls containing no centre of ``S^{<=j}``.

    Sampled centres are the atoms and the lattice ``(r_j/2) Z^n`` near them.
    """
    from .jones import candidate_centers
    jidx = atom_scale_indices(mu, ladder.rho)
    best, count = 0.0, 0
    for j, r in enumerate(ladder.radii):
        cen = candidate_centers(mu, float(r))
        if len(cen) == 0:
            continue
        coarse = (jidx <= j).astype(float)
        sums = mu.grid(float(r)).sums(np.stack([mu.weights, coarse], axis=1), cen, float(r))
        ok = sums[:, 1] == 0
        count += int(ok.sum())
        if np.any(ok):
            best = max(best, float(np.max(sums[ok, 0])) / float(r) ** mu.k)
    return best, count


def verify_bound(mu: DiscreteMeasure, q: float, ladder: ScaleLadder, mode: str = "sup",
                 report=None, M: float | None = None) -> Verdict:
    """``mu(B_1)`` against ``max(1, J^{q/(q+2)})`` (sup) or ``max(1, J^{q/2})`` (avg).

    The density check uses ``M`` when given (e.g. a construction run's final
    value) and otherwise ``M_0 = 10 max(1, J^{q/(q+2)})``.
    """
    if mode not in ("sup", "avg"):
        raise ValueError("mode must be 'sup' or 'avg'")
    _check_preconditions(mu, ladder)
    if report is None:
        report = flatness(mu, q, ladder.rho, finest=ladder.A)
    J = report.J_sup if mode == "sup" else report.J_avg
    expo = q / (q + 2.0) if mode == "sup" else q / 2.0
    m1 = mass_in_ball(mu, np.zeros(mu.n), 1.0)
    ratio = m1 / max(1.0, J ** expo)
    MC = initial_M(report.J_sup, q) if M is None else float(M)
    dens, count = claim1_density(mu, ladder)
    return Verdict(mode, float(q), m1, float(J), expo, ratio, MC, dens, count, dens <= MC)


# ------------------------------------------------------------------ squash experiment

def squash_experiment(deltas, k: int = 1, n: int | None = None, r: float = 1.0, edge: float | None = None,
                      delta1_factor: float = 1.0) -> dict:
    """Bi-Lipschitz defect of a single-ball sigma on a graph, for shrinking perturbations.

    For each ``d`` in ``deltas``: ``G_0`` is the graph of
    ``g_0 = (d/2) r sin(x_1 / r) e_{k+1}`` over ``V = span(e_1..e_k)``
    (so ``||g_0||_{C^1_r} = d``), and the single plane ``V_1`` is ``V``
    tilted by ``d1/2`` and lifted by ``d1 r / 4`` with ``d1 = delta1_factor d``.
    Returns ``Lip - 1`` on ``G_0 ∩ 5B`` and the log-log slope against
    ``d^2 + d1^2``.
    """
    n = k + 1 if n is None else n
    edge = r / 64 if edge is None else edge
    V = AffinePlane(np.zeros(n), np.eye(n)[:k])
    flat = segment_mesh(V, np.zeros(n), 5 * r, edge) if k == 1 else disk_mesh(V, np.zeros(n), 5 * r, max_edge=edge)
    rows = []
    for d in deltas:
        d1 = delta1_factor * d
        v = flat.vertices.copy()
        v[:, k] = 0.5 * d * r * np.sin(v[:, 0] / r)
        t = d1 / 2
        frame = np.eye(n)[:k].copy()
        frame[0] = 0.0
        frame[0, 0], frame[0, k] = math.cos(t), math.sin(t)
        base = np.zeros(n)
        base[k] = d1 * r / 4
        sigma = SigmaMap(1, np.zeros((1, n)), r, base[None, :], frame[None, :, :])
        rep = lipschitz_of_images(v, sigma.evaluate(v), flat.cells, k)
        rows.append({"delta0": float(d), "delta1": float(d1), "x": float(d * d + d1 * d1),
                     "lip_minus_one": rep.constant - 1.0})
    x = np.log([row["x"] for row in rows])
    y = np.log([row["lip_minus_one"] for row in rows])
    fit = linregress(x, y)
    return {"rows": rows, "slope": float(fit.slope), "intercept": float(fit.intercept)}
