"""The compiled and numpy backends must agree on every kernel."""
import os
import subprocess
import sys

import numpy as np
import pytest

from reifenberg.kernels import BACKEND, backends
from reifenberg.measure import GridIndex

MODS = backends()
needs_both = pytest.mark.skipif(len(MODS) < 2, reason="compiled extension not built")


def test_backend_name():
    assert BACKEND in MODS


def test_pure_env_forces_fallback():
    env = dict(os.environ, REIFENBERG_PURE="1")
    out = subprocess.run([sys.executable, "-c", "import reifenberg; print(reifenberg.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "python"


def _setup(seed, n=3, k=1, N=400, C=25):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, (N, n))
    r = 0.3
    g = GridIndex(pts, r)
    w = np.ascontiguousarray(rng.uniform(0.1, 1, N)[g.order])
    cen = np.ascontiguousarray(rng.uniform(-1, 1, (C, n)))
    frames = np.ascontiguousarray(np.linalg.qr(rng.normal(size=(C, n, k)))[0].transpose(0, 2, 1))
    full = np.linalg.svd(frames, full_matrices=True)[2]
    normals = np.ascontiguousarray(full[:, k:, :])
    return rng, g, w, cen, r, frames, normals


def _run_all(mod, seed, n=3, k=1):
    rng, g, w, cen, r, frames, normals = _setup(seed, n, k)
    args = g._args()
    out = {}
    off, idx = mod.query_ball(*args, cen, r)
    out["query"] = [sorted(idx[off[i]:off[i + 1]]) for i in range(len(cen))]
    vals = np.ascontiguousarray(np.stack([w, w ** 2], 1))
    out["sums"] = mod.ball_sums(*args, vals, cen, r)
    out["moments"] = mod.ball_moments(*args, w, cen, r, cen, frames, 2.0, np.zeros(len(cen)))
    out["moments_q"] = mod.ball_moments(*args, w, cen, r, cen, frames, 3.0, np.full(len(cen), 1e-3))
    out["residuals"] = mod.ball_residuals(*args, w, cen, r, cen, frames, 4.0)
    out["newton"] = mod.ball_newton(*args, w, cen, r, cen, frames, normals, 4.0)
    bg = GridIndex(cen, 4 * r)
    pts = np.ascontiguousarray(rng.uniform(-1.5, 1.5, (300, n)))
    out["sigma"] = mod.sigma_eval(bg.points, bg.keys, bg.origin, bg.cell, bg.dims, bg.strides,
                                  np.ascontiguousarray(cen[bg.order]), np.ascontiguousarray(frames[bg.order]),
                                  r, pts)
    return out


def _flat(x):
    if isinstance(x, tuple):
        return np.concatenate([np.ravel(v) for v in x])
    return np.ravel(x)


@needs_both
@pytest.mark.parametrize("seed,n,k", [(0, 2, 1), (1, 3, 1), (2, 3, 2), (3, 4, 2)])
def test_backends_agree(seed, n, k):
    a = _run_all(MODS["python"], seed, n, k)
    b = _run_all(MODS["cython"], seed, n, k)
    assert a["query"] == b["query"]
    for key in ("sums", "moments", "moments_q", "residuals", "newton", "sigma"):
        np.testing.assert_allclose(_flat(a[key]), _flat(b[key]), rtol=1e-10, atol=1e-13, err_msg=key)


@pytest.mark.parametrize("name", sorted(MODS))
def test_query_matches_brute_force(name):
    rng, g, w, cen, r, _, _ = _setup(5)
    off, idx = MODS[name].query_ball(*g._args(), cen, r)
    for i, c in enumerate(cen):
        expect = np.flatnonzero(np.linalg.norm(g.points - c, axis=1) <= r)
        assert sorted(idx[off[i]:off[i + 1]]) == expect.tolist()


@pytest.mark.parametrize("name", sorted(MODS))
def test_residuals_brute_force(name):
    rng, g, w, cen, r, frames, _ = _setup(6)
    res = MODS[name].ball_residuals(*g._args(), w, cen, r, cen, frames, 2.0)
    for i, c in enumerate(cen):
        inside = np.linalg.norm(g.points - c, axis=1) <= r
        diff = g.points[inside] - c
        perp = diff - (diff @ frames[i].T) @ frames[i]
        assert res[i] == pytest.approx(np.sum(w[inside] * np.sum(perp ** 2, 1)), rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("name", sorted(MODS))
def test_empty_inputs(name):
    mod = MODS[name]
    g = GridIndex(np.zeros((0, 2)), 0.5)
    off, idx = mod.query_ball(*g._args(), np.zeros((3, 2)), 0.5)
    assert off.tolist() == [0, 0, 0, 0] and len(idx) == 0
