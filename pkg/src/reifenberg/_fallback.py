"""Pure numpy versions of the grid kernels in ``_kernels.pyx``.

The signatures and results match the compiled module (up to summation
order in floating point); ``reifenberg.kernels`` falls back to this module
when the extension is not built or ``REIFENBERG_PURE=1`` is set.
"""
import itertools

import numpy as np

_CHUNK_PAIRS = 2_000_000


def _range_keys(centers, origin, cell, dims, strides):
    """Per-center key intervals ``[lo_key, hi_key]`` (shape ``(C, R)``)."""
    n = centers.shape[1]
    cc = np.floor((centers - origin) / cell).astype(np.int64)
    offs = list(itertools.product((-1, 0, 1), repeat=n - 1))
    C = centers.shape[0]
    lo = np.empty((C, len(offs)), dtype=np.int64)
    hi = np.empty((C, len(offs)), dtype=np.int64)
    valid = np.ones((C, len(offs)), dtype=bool)
    a = np.maximum(cc[:, n - 1] - 1, 0)
    b = np.minimum(cc[:, n - 1] + 1, dims[n - 1] - 1)
    for t, off in enumerate(offs):
        base = np.zeros(C, dtype=np.int64)
        ok = a <= b
        for d in range(n - 1):
            ad = cc[:, d] + off[d]
            ok &= (ad >= 0) & (ad < dims[d])
            base += ad * strides[d]
        lo[:, t] = base + a
        hi[:, t] = base + b
        valid[:, t] = ok
    return lo, hi, valid


def _pairs(spts, skeys, origin, cell, dims, strides, centers, r):
    """Yield ``(center_idx, point_idx)`` arrays of in-ball pairs, chunked."""
    C = centers.shape[0]
    if C == 0 or skeys.shape[0] == 0:
        return
    lo_k, hi_k, valid = _range_keys(centers, origin, cell, dims, strides)
    lo = np.searchsorted(skeys, lo_k, side="left")
    hi = np.searchsorted(skeys, hi_k, side="right")
    lens = np.where(valid, np.maximum(hi - lo, 0), 0)
    per_center = lens.sum(axis=1)
    r2 = r * r
    start = 0
    while start < C:
        stop = start + 1
        acc = per_center[start]
        while stop < C and acc + per_center[stop] <= _CHUNK_PAIRS:
            acc += per_center[stop]
            stop += 1
        l = lens[start:stop].ravel()
        s = lo[start:stop].ravel()
        owner = np.repeat(np.arange(start, stop), lens.shape[1])
        total = int(l.sum())
        if total:
            rep_owner = np.repeat(owner, l)
            first = np.repeat(np.cumsum(l) - l, l)
            pidx = np.repeat(s, l) + (np.arange(total) - first)
            diff = spts[pidx] - centers[rep_owner]
            keep = np.einsum("ij,ij->i", diff, diff) <= r2
            yield rep_owner[keep], pidx[keep]
        start = stop


def query_ball(spts, skeys, origin, cell, dims, strides, centers, r):
    owners, idxs = [], []
    for o, p in _pairs(spts, skeys, origin, cell, dims, strides, centers, r):
        owners.append(o)
        idxs.append(p)
    C = centers.shape[0]
    if not owners:
        return np.zeros(C + 1, dtype=np.int64), np.empty(0, dtype=np.int64)
    o = np.concatenate(owners)
    p = np.concatenate(idxs)
    offsets = np.zeros(C + 1, dtype=np.int64)
    np.cumsum(np.bincount(o, minlength=C), out=offsets[1:])
    return offsets, p.astype(np.int64)


def ball_sums(spts, skeys, origin, cell, dims, strides, vals, centers, r):
    C, m = centers.shape[0], vals.shape[1]
    out = np.zeros((C, m))
    for o, p in _pairs(spts, skeys, origin, cell, dims, strides, centers, r):
        for j in range(m):
            out[:, j] += np.bincount(o, weights=vals[p, j], minlength=C)
    return out


def _plane_d2(pts, bases, frames):
    diff = pts - bases
    proj = np.einsum("ikd,id->ik", frames, diff)
    return np.maximum(np.einsum("id,id->i", diff, diff) - np.einsum("ik,ik->i", proj, proj), 0.0)


def ball_moments(spts, skeys, origin, cell, dims, strides, w, centers, r,
                 bases, frames, q, floors):
    C, n = centers.shape
    pairs = list(_pairs(spts, skeys, origin, cell, dims, strides, centers, r))
    us = []
    mass = np.zeros(C)
    first = np.zeros((C, n))
    for o, p in pairs:
        u = w[p].copy()
        if q != 2.0:
            d = np.sqrt(_plane_d2(spts[p], bases[o], frames[o]))
            u *= np.maximum(d, floors[o]) ** (q - 2.0)
        us.append(u)
        mass += np.bincount(o, weights=u, minlength=C)
        for a in range(n):
            first[:, a] += np.bincount(o, weights=u * spts[p, a], minlength=C)
    mean = np.zeros((C, n))
    pos = mass > 0
    mean[pos] = first[pos] / mass[pos, None]
    scat = np.zeros((C, n, n))
    for (o, p), u in zip(pairs, us):
        dx = spts[p] - mean[o]
        for a in range(n):
            for b in range(a, n):
                scat[:, a, b] += np.bincount(o, weights=u * dx[:, a] * dx[:, b], minlength=C)
    for a in range(n):
        for b in range(a + 1, n):
            scat[:, b, a] = scat[:, a, b]
    scat[~pos] = 0.0
    return mass, mean, scat


def ball_residuals(spts, skeys, origin, cell, dims, strides, w, centers, r,
                   bases, frames, q):
    C = centers.shape[0]
    res = np.zeros(C)
    for o, p in _pairs(spts, skeys, origin, cell, dims, strides, centers, r):
        d2 = _plane_d2(spts[p], bases[o], frames[o])
        v = w[p] * (d2 if q == 2.0 else d2 ** (0.5 * q))
        res += np.bincount(o, weights=v, minlength=C)
    return res


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (u * (6.0 * u - 15.0) + 10.0)


def sigma_eval(bpts, bkeys, origin, cell, dims, strides, bases, frames, r, points):
    P = points.shape[0]
    out = np.array(points, dtype=np.float64, copy=True)
    lam_sum = np.zeros(P)
    # pairs are (point, ball): query the ball grid around every point with radius 4r
    pairs = list(_pairs(bpts, bkeys, origin, cell, dims, strides, points, 4.0 * r))
    if not pairs:
        return out, lam_sum
    o = np.concatenate([a for a, _ in pairs])
    s = np.concatenate([b for _, b in pairs])
    dist = np.linalg.norm(points[o] - bpts[s], axis=1)
    inside = dist < 4.0 * r
    o, s, dist = o[inside], s[inside], dist[inside]
    bump = _smoothstep(4.0 - dist / r)
    bsum = np.bincount(o, weights=bump, minlength=P)
    hs = np.where(bsum >= 1.0, 1.0 / np.where(bsum > 0, bsum, 1.0),
                  bsum * bsum * (10.0 + bsum * (6.0 * bsum - 15.0)))
    lam = bump * hs[o]
    lam_sum += np.bincount(o, weights=lam, minlength=P)
    diff = points[o] - bases[s]
    proj = np.einsum("ikd,id->ik", frames[s], diff)
    disp = -diff + np.einsum("ik,ikd->id", proj, frames[s])
    for d in range(points.shape[1]):
        out[:, d] += np.bincount(o, weights=lam * disp[:, d], minlength=P)
    return out, lam_sum


def ball_newton(spts, skeys, origin, cell, dims, strides, w, centers, r,
                bases, frames, normals, q):
    C, k, m = centers.shape[0], frames.shape[1], normals.shape[1]
    kk = k + 1
    grad = np.zeros((C, m, kk))
    hess = np.zeros((C, m, kk, m, kk))
    for o, p in _pairs(spts, skeys, origin, cell, dims, strides, centers, r):
        diff = spts[p] - bases[o]
        z = np.concatenate([np.ones((len(p), 1)), np.einsum("ikd,id->ik", frames[o], diff)], axis=1)
        v = np.einsum("iad,id->ia", normals[o], diff)
        s2 = np.einsum("ia,ia->i", v, v)
        keep = s2 > 0
        o, z, v, s2, wp = o[keep], z[keep], v[keep], s2[keep], w[p][keep]
        alpha = wp * np.sqrt(s2) ** (q - 2.0)
        gam = (q - 2.0) * alpha / s2
        for a in range(m):
            for j in range(kk):
                grad[:, a, j] -= np.bincount(o, weights=alpha * v[:, a] * z[:, j], minlength=C)
        for a in range(m):
            for b in range(m):
                coef = gam * v[:, a] * v[:, b] + (alpha if a == b else 0.0)
                for j in range(kk):
                    for l in range(kk):
                        hess[:, a, j, b, l] += np.bincount(o, weights=coef * z[:, j] * z[:, l], minlength=C)
    P = m * kk
    return grad.reshape(C, P), hess.reshape(C, P, P)
