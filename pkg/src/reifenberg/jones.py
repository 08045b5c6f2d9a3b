"""L^q best planes, Jones beta numbers and square functions.

All fits are batched: one call fits the best plane on ``B_r(c)`` for a whole
array of centers ``c`` at a common radius ``r``. For ``q == 2`` the weighted
PCA plane is the exact minimiser; for ``q > 2`` the PCA plane seeds an
iteratively reweighted fit (weights ``d**(q-2)``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import AffinePlane, Ball, canonical_frame, complete_frame
from .measure import DiscreteMeasure, rho_powers

IRLS_MAX_ROUNDS = 100
IRLS_TOL = 1e-8
IRLS_FLOOR = 1e-9
IRLS_BACKTRACK = 30
DEFAULT_DEPTH = 12


@dataclass
class PlaneFit:
    """Batched fit result; row ``i`` belongs to ``centers[i]``."""
    bases: np.ndarray       # (C, n)
    frames: np.ndarray      # (C, k, n)
    residual: np.ndarray    # (C,) attained sum of w d^q
    mass: np.ndarray        # (C,) ball mass
    converged: np.ndarray   # (C,) bool
    rounds: np.ndarray      # (C,) IRLS rounds used

    def plane(self, i) -> AffinePlane | None:
        if not self.mass[i] > 0:
            return None
        return AffinePlane(self.bases[i], self.frames[i])


def _pca_frames(scat, k):
    """Top-k eigenvectors (rows) of each scatter matrix, degenerate spans completed."""
    C, n, _ = scat.shape
    if C == 0:
        return np.zeros((0, k, n))
    evals, evecs = np.linalg.eigh(scat)
    frames = np.ascontiguousarray(np.transpose(evecs[:, :, ::-1][:, :, :k], (0, 2, 1)))
    top = evals[:, -1]
    kth = evals[:, n - k]
    degenerate = kth <= 1e-13 * np.maximum(top, 0.0)
    for i in np.flatnonzero(degenerate):
        keep = evals[i, ::-1] > 1e-13 * max(top[i], 0.0)
        span = evecs[i][:, ::-1][:, keep].T if np.any(keep) and top[i] > 0 else np.zeros((0, n))
        frames[i] = complete_frame(span[:k], k, n)
    return canonical_frame(frames)


def fit_planes(mu: DiscreteMeasure, centers, r: float, q: float = 2.0,
               tol: float = IRLS_TOL, max_rounds: int = IRLS_MAX_ROUNDS) -> PlaneFit:
    """Best ``L^q`` k-planes on ``B_r(c)`` for every row ``c`` of ``centers``."""
    if q < 2:
        raise ValueError("q must be at least 2")
    if not r > 0:
        raise ValueError("radius must be positive")
    k, n = mu.k, mu.n
    centers = np.ascontiguousarray(np.atleast_2d(np.asarray(centers, dtype=float)))
    C = len(centers)
    if len(mu) == 0 or C == 0:
        z = np.zeros(C)
        return PlaneFit(np.array(centers, copy=True), np.tile(np.eye(n)[:k], (C, 1, 1)), z, z.copy(),
                        np.ones(C, bool), np.zeros(C, int))
    g = mu.grid(r)
    w = np.ascontiguousarray(mu.weights[g.order])
    args = g._args()
    dummy_f = np.zeros(C)
    mass, mean, scat = kernels.ball_moments(*args, w, centers, float(r), centers,
                                            np.zeros((C, k, n)), 2.0, dummy_f)
    bases = np.where(mass[:, None] > 0, mean, centers)
    frames = _pca_frames(scat, k)
    res = kernels.ball_residuals(*args, w, centers, float(r), bases, frames, float(q))
    converged = np.ones(C, bool)
    rounds = np.zeros(C, int)
    if q == 2.0:
        return PlaneFit(bases, frames, res, mass, converged, rounds)

    # Reweighted least squares with Newton weights: plain d^(q-2) reweighting
    # is not monotone for q > 2, so each round solves the weighted normal
    # equations of the tilt/offset model (weights w d^(q-2) (I + (q-2) e e^T))
    # and backtracks on the true objective.
    active = np.flatnonzero((mass > 0) & (res > 0))
    converged[active] = False
    for it in range(1, max_rounds + 1):
        if len(active) == 0:
            break
        cen = centers[active]
        cur_b, cur_f, cur_res = bases[active], frames[active], res[active]
        normals = np.ascontiguousarray(np.linalg.svd(cur_f, full_matrices=True)[2][:, k:, :])
        grad, hess = kernels.ball_newton(*args, w, cen, float(r), np.ascontiguousarray(cur_b),
                                         np.ascontiguousarray(cur_f), normals, float(q))
        P = hess.shape[1]
        ridge = 1e-14 * np.maximum(np.trace(hess, axis1=1, axis2=2), 1e-300) / P
        theta = -np.linalg.solve(hess + ridge[:, None, None] * np.eye(P), grad[:, :, None])[:, :, 0]
        theta = theta.reshape(len(active), n - k, k + 1)
        rounds[active] = it
        nb = np.empty_like(cur_b)
        nf = np.empty_like(cur_f)
        nres = np.full(len(active), np.inf)
        pending = np.arange(len(active))
        t = 1.0
        for _ in range(IRLS_BACKTRACK):
            if len(pending) == 0:
                break
            th = t * theta[pending]
            cb = cur_b[pending] + np.einsum("ca,cad->cd", th[:, :, 0], normals[pending])
            tilt = cur_f[pending] + np.einsum("caj,cad->cjd", th[:, :, 1:], normals[pending])
            cf = canonical_frame(np.transpose(np.linalg.qr(np.transpose(tilt, (0, 2, 1)))[0], (0, 2, 1)))
            cres = kernels.ball_residuals(*args, w, cen[pending], float(r), cb, np.ascontiguousarray(cf), float(q))
            take = cres < cur_res[pending]
            sel = pending[take]
            nb[sel], nf[sel], nres[sel] = cb[take], cf[take], cres[take]
            pending = pending[~take]
            t *= 0.5
        ok = nres < cur_res
        gi = active[ok]
        bases[gi], frames[gi], res[gi] = nb[ok], nf[ok], nres[ok]
        converged[gi[(cur_res[ok] - nres[ok]) <= tol * nres[ok]]] = True
        # no decreasing step left: the current plane is stationary
        converged[active[~ok]] = True
        active = active[~converged[active]]
    return PlaneFit(bases, frames, res, mass, converged, rounds)


def _single_fit(mu: DiscreteMeasure, x, r: float, q: float) -> PlaneFit:
    """One-ball fit whose ``q = 2`` result depends only on the set of atoms in the ball.

    The batched kernels sum in grid order, which changes with the cell size;
    here the atoms are taken in index order, so two balls holding the same
    atoms give bit-identical planes and residuals.
    """
    x = np.asarray(x, dtype=float)
    if q != 2.0:
        return fit_planes(mu, x[None, :], r, q)
    k, n = mu.k, mu.n
    idx = mu.in_ball(x, r) if len(mu) else np.zeros(0, dtype=int)
    if len(idx) == 0:
        return PlaneFit(x[None, :].copy(), np.eye(n)[None, :k], np.zeros(1), np.zeros(1),
                        np.ones(1, bool), np.zeros(1, int))
    P, w = mu.positions[idx], mu.weights[idx]
    mass = float(np.sum(w))
    mean = (w @ P) / mass
    D = P - mean
    scat = (D * w[:, None]).T @ D
    frame = _pca_frames(scat[None], k)
    normal = D - (D @ frame[0].T) @ frame[0]
    res = float(np.sum(w * np.einsum("ij,ij->i", normal, normal)))
    return PlaneFit(mean[None, :], frame, np.array([res]), np.array([mass]),
                    np.ones(1, bool), np.zeros(1, int))


def best_plane(mu: DiscreteMeasure, x, r: float, q: float = 2.0) -> AffinePlane | None:
    """A minimiser of ``sum_{B_r(x)} w d^q(y, V)``; ``None`` when the ball is empty."""
    if q < 2:
        raise ValueError("q must be at least 2")
    if not r > 0:
        raise ValueError("radius must be positive")
    return _single_fit(mu, x, r, q).plane(0)


@dataclass
class BetaResult:
    value: float
    plane: AffinePlane | None
    residual_q: float
    converged: bool = True


def beta_values(fit: PlaneFit, r: float, k: int, q: float) -> np.ndarray:
    return (np.maximum(fit.residual, 0.0) * r ** (-(k + q))) ** (1.0 / q)


def beta_q(mu: DiscreteMeasure, x, r: float, q: float = 2.0) -> BetaResult:
    """``beta_{mu,q}(x, r)`` with its minimising plane; empty balls give 0."""
    if q < 2:
        raise ValueError("q must be at least 2")
    if not r > 0:
        raise ValueError("radius must be positive")
    fit = _single_fit(mu, x, r, q)
    if not fit.mass[0] > 0:
        return BetaResult(0.0, None, 0.0, True)
    return BetaResult(float(beta_values(fit, r, mu.k, q)[0]), fit.plane(0),
                      float(fit.residual[0]), bool(fit.converged[0]))


def finest_index(mu: DiscreteMeasure, rho: float, depth: int = DEFAULT_DEPTH) -> int:
    """Index ``A`` of the finest declared scale ``rho**A`` (default ``depth``)."""
    if mu.finest_radius is None:
        return depth
    ladder = rho_powers(rho, 400)
    ok = np.flatnonzero(ladder >= mu.finest_radius * (1 - 1e-9))
    return int(ok[-1])


def first_scale(r: float, rho: float) -> int:
    """Smallest ``alpha >= 0`` with ``rho**alpha <= 2 r``."""
    ladder = rho_powers(rho, 400)
    ok = np.flatnonzero(ladder <= 2 * r * (1 + 1e-12))
    return int(ok[0]) if len(ok) else 400


@dataclass
class JonesProfile:
    center: np.ndarray
    top_radius: float
    rho: float
    q: float
    per_scale_beta: list          # [(radius, beta)]
    J: float
    truncated_at: int

    def to_dict(self):
        return {
            "center": [float(v) for v in self.center],
            "top_radius": self.top_radius,
            "rho": self.rho,
            "q": self.q,
            "per_scale": [{"radius": float(r), "value": float(b)} for r, b in self.per_scale_beta],
            "J": float(self.J),
            "truncated_at": self.truncated_at,
        }


def jones_square(mu: DiscreteMeasure, x, r: float, q: float = 2.0, rho: float = 0.25,
                 finest: int | None = None) -> JonesProfile:
    """ρ-adic Jones sum ``sum_{rho^a <= 2r, a <= A} beta_q(x, rho^a)**2``."""
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    x = np.asarray(x, dtype=float)
    A = finest_index(mu, rho) if finest is None else finest
    ladder = rho_powers(rho, A + 1)
    per = []
    for a in range(first_scale(r, rho), A + 1):
        per.append((float(ladder[a]), beta_q(mu, x, ladder[a], q).value))
    J = math.fsum(b * b for _, b in per)
    return JonesProfile(x, float(r), rho, q, per, J, A)


def delta_q(mu: DiscreteMeasure, x, r: float, q: float = 2.0) -> float:
    """``delta_q^2(x, r) = r^-k sum_{y in B_r(x)} w(y) beta_q(y, r)**2``."""
    if not r > 0:
        raise ValueError("radius must be positive")
    if len(mu) == 0:
        return 0.0
    idx = mu.in_ball(x, r)
    if len(idx) == 0:
        return 0.0
    fit = fit_planes(mu, mu.positions[idx], r, q)
    b = beta_values(fit, r, mu.k, q)
    return math.fsum(mu.weights[idx] * b * b) / r ** mu.k


def beta_table(mu: DiscreteMeasure, q: float, rho: float, A: int) -> np.ndarray:
    """``beta_q(y, rho^a)`` for every atom ``y`` and ``a = 0..A``; shape ``(N, A+1)``."""
    ladder = rho_powers(rho, A + 1)
    out = np.zeros((len(mu), A + 1))
    for a in range(A + 1):
        fit = fit_planes(mu, mu.positions, ladder[a], q)
        out[:, a] = beta_values(fit, ladder[a], mu.k, q)
    return out


def jones_at_atoms(table: np.ndarray, rho: float, r: float) -> np.ndarray:
    """Per-atom ``J_q(y, r)`` from a beta table."""
    a0 = first_scale(r, rho)
    if a0 >= table.shape[1]:
        return np.zeros(table.shape[0])
    return np.sum(table[:, a0:] ** 2, axis=1)


@dataclass
class FlatnessReport:
    q: float
    rho: float
    J_sup: float
    J_avg: float
    witness_ball_sup: Ball | None
    witness_ball_avg: Ball | None
    balls_examined: int
    truncated_at: int
    avg_witness_factor: float = 0.0    # r^k / mu(B) at the avg witness
    per_scale: list = field(default_factory=list)

    def to_dict(self):
        w = lambda b: None if b is None else b.to_dict()
        return {
            "q": self.q, "rho": self.rho,
            "J_sup": self.J_sup, "J_avg": self.J_avg,
            "witness": {"sup": w(self.witness_ball_sup), "avg": w(self.witness_ball_avg)},
            "balls_examined": self.balls_examined,
            "truncated_at": self.truncated_at,
            "avg_witness_factor": self.avg_witness_factor,
            "per_scale": self.per_scale,
        }


def candidate_centers(mu: DiscreteMeasure, r: float, pitch: float | None = None) -> np.ndarray:
    """Atoms plus the lattice ``(r/2) Z^n`` near the support, with ``B_r(c) ⊆ B_2``."""
    if len(mu) == 0:
        return np.zeros((0, mu.n))
    h = r / 2 if pitch is None else pitch
    m = int(math.ceil(r / h))
    base = np.floor(mu.positions / h).astype(np.int64)
    offs = np.stack(np.meshgrid(*([np.arange(-m, m + 2)] * mu.n), indexing="ij"), -1).reshape(-1, mu.n)
    lat = np.unique((base[:, None, :] + offs[None, :, :]).reshape(-1, mu.n), axis=0) * h
    cen = np.vstack([mu.positions, lat])
    keep = np.linalg.norm(cen, axis=1) + r <= 2.0 + 1e-12
    return cen[keep]


def flatness(mu: DiscreteMeasure, q: float = 2.0, rho: float = 0.25,
             table: np.ndarray | None = None, finest: int | None = None) -> FlatnessReport:
    """Sup- and average-form flatness functionals over the candidate ball family.

    ``J_sup = max r^-k  int_{B_r(x)} J_q(y, r) dmu(y)`` and
    ``J_avg = max mu(B_r(x))^-1 int_{B_r(x)} J_q(y, r) dmu(y)`` with radii
    ``rho^a``, ``a = 0..A``; zero-mass balls are skipped by the average.
    """
    A = finest_index(mu, rho) if finest is None else finest
    if len(mu) == 0:
        return FlatnessReport(q, rho, 0.0, 0.0, None, None, 0, A, 0.0)
    if table is None:
        table = beta_table(mu, q, rho, A)
    ladder = rho_powers(rho, A + 1)
    k = mu.k
    best_sup, best_avg = (0.0, None), (0.0, None)
    examined = 0
    per_scale = []
    avg_factor = 0.0
    for a in range(A + 1):
        r = float(ladder[a])
        g = mu.weights * jones_at_atoms(table, rho, r)
        cen = candidate_centers(mu, r)
        examined += len(cen)
        if len(cen) == 0:
            continue
        sums = mu.grid(r).sums(np.stack([mu.weights, g], axis=1), cen, r)
        mass, integ = sums[:, 0], sums[:, 1]
        sup_vals = integ / r ** k
        i = int(np.argmax(sup_vals))
        if sup_vals[i] > best_sup[0]:
            best_sup = (float(sup_vals[i]), Ball(cen[i], r))
        pos = mass > 0
        avg_vals = np.where(pos, integ / np.where(pos, mass, 1.0), 0.0)
        j = int(np.argmax(avg_vals))
        if avg_vals[j] > best_avg[0]:
            best_avg = (float(avg_vals[j]), Ball(cen[j], r))
            avg_factor = r ** k / float(mass[j])
        per_scale.append({"radius": r, "J_sup": float(sup_vals[i]), "J_avg": float(avg_vals[j])})
    return FlatnessReport(q, rho, best_sup[0], best_avg[0], best_sup[1], best_avg[1],
                          examined, A, avg_factor, per_scale)


def flatness_sup(mu, q=2.0, rho=0.25, **kw) -> FlatnessReport:
    return flatness(mu, q, rho, **kw)


def flatness_avg(mu, q=2.0, rho=0.25, **kw) -> FlatnessReport:
    return flatness(mu, q, rho, **kw)
