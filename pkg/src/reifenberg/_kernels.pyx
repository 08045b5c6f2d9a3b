# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops over the bucket-grid index.

Every function here has a line-for-line counterpart in ``_fallback.py``;
``reifenberg.kernels`` picks one of the two at import time.

Grid layout (built in :class:`reifenberg.measure.GridIndex`): points are
sorted by a row-major linear cell key, the query radius never exceeds the
cell size, so a closed ball touches at most ``3**n`` cells which collapse
into ``3**(n-1)`` contiguous key ranges.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, sqrt, pow, fabs

cnp.import_array()

ctypedef cnp.int64_t i64


cdef inline Py_ssize_t _lower(const i64[::1] keys, i64 key) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = keys.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if keys[mid] < key:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef inline Py_ssize_t _upper(const i64[::1] keys, i64 key) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = keys.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if keys[mid] <= key:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef Py_ssize_t _ranges(const double[::1] x, const i64[::1] keys,
                        const double[::1] origin, double cell,
                        const i64[::1] dims, const i64[::1] strides,
                        i64[::1] cc, i64[::1] off,
                        Py_ssize_t[:, ::1] out) noexcept nogil:
    """Fill ``out`` with [lo, hi) slices of the sorted arrays near ``x``."""
    cdef Py_ssize_t n = x.shape[0], d, nr = 0
    cdef i64 base, lo_key, hi_key, c_last, a, b
    cdef bint ok
    if keys.shape[0] == 0:
        return 0
    for d in range(n):
        cc[d] = <i64>floor((x[d] - origin[d]) / cell)
        off[d] = -1
    while True:
        ok = True
        base = 0
        for d in range(n - 1):
            a = cc[d] + off[d]
            if a < 0 or a >= dims[d]:
                ok = False
                break
            base += a * strides[d]
        if ok:
            c_last = cc[n - 1]
            a = c_last - 1
            b = c_last + 1
            if a < 0:
                a = 0
            if b > dims[n - 1] - 1:
                b = dims[n - 1] - 1
            if a <= b:
                lo_key = base + a
                hi_key = base + b
                out[nr, 0] = _lower(keys, lo_key)
                out[nr, 1] = _upper(keys, hi_key)
                if out[nr, 1] > out[nr, 0]:
                    nr += 1
        # odometer over the first n-1 axes
        d = 0
        while d < n - 1:
            off[d] += 1
            if off[d] <= 1:
                break
            off[d] = -1
            d += 1
        if d >= n - 1:
            break
    return nr


cdef inline double _dist2(const double[:, ::1] pts, Py_ssize_t i,
                          const double[::1] x) noexcept nogil:
    cdef Py_ssize_t d
    cdef double s = 0.0, t
    for d in range(x.shape[0]):
        t = pts[i, d] - x[d]
        s += t * t
    return s


cdef inline double _plane_dist2(const double[:, ::1] pts, Py_ssize_t i,
                                const double[:, ::1] bases, const double[:, :, ::1] frames,
                                Py_ssize_t c, double* tmp) noexcept nogil:
    cdef Py_ssize_t n = pts.shape[1], k = frames.shape[1], d, j
    cdef double s = 0.0, dot, t
    for d in range(n):
        tmp[d] = pts[i, d] - bases[c, d]
        s += tmp[d] * tmp[d]
    for j in range(k):
        dot = 0.0
        for d in range(n):
            dot += tmp[d] * frames[c, j, d]
        s -= dot * dot
    if s < 0.0:
        s = 0.0
    return s


def query_ball(const double[:, ::1] spts, const i64[::1] skeys,
               const double[::1] origin, double cell,
               const i64[::1] dims, const i64[::1] strides,
               const double[:, ::1] centers, double r):
    """CSR of sorted-space indices within the closed ball of each center."""
    cdef Py_ssize_t C = centers.shape[0], n = spts.shape[1]
    cdef Py_ssize_t c, t, i, nr, total = 0, pos
    cdef double r2 = r * r
    nrange = 1
    for _ in range(n - 1):
        nrange *= 3
    cdef Py_ssize_t[:, ::1] rg = np.empty((nrange, 2), dtype=np.intp)
    cdef i64[::1] cc = np.empty(n, dtype=np.int64)
    cdef i64[::1] off = np.empty(n, dtype=np.int64)
    offsets_arr = np.zeros(C + 1, dtype=np.int64)
    cdef i64[::1] offsets = offsets_arr
    with nogil:
        for c in range(C):
            nr = _ranges(centers[c], skeys, origin, cell, dims, strides, cc, off, rg)
            for t in range(nr):
                for i in range(rg[t, 0], rg[t, 1]):
                    if _dist2(spts, i, centers[c]) <= r2:
                        total += 1
            offsets[c + 1] = total
    idx_arr = np.empty(total, dtype=np.int64)
    cdef i64[::1] idx = idx_arr
    pos = 0
    with nogil:
        for c in range(C):
            nr = _ranges(centers[c], skeys, origin, cell, dims, strides, cc, off, rg)
            for t in range(nr):
                for i in range(rg[t, 0], rg[t, 1]):
                    if _dist2(spts, i, centers[c]) <= r2:
                        idx[pos] = i
                        pos += 1
    return offsets_arr, idx_arr


def ball_sums(const double[:, ::1] spts, const i64[::1] skeys,
              const double[::1] origin, double cell,
              const i64[::1] dims, const i64[::1] strides,
              const double[:, ::1] vals, const double[:, ::1] centers, double r):
    """Compensated (Neumaier) column sums of ``vals`` over each closed ball."""
    cdef Py_ssize_t C = centers.shape[0], n = spts.shape[1], m = vals.shape[1]
    cdef Py_ssize_t c, t, i, j, nr
    cdef double r2 = r * r, v, s, tt
    nrange = 1
    for _ in range(n - 1):
        nrange *= 3
    cdef Py_ssize_t[:, ::1] rg = np.empty((nrange, 2), dtype=np.intp)
    cdef i64[::1] cc = np.empty(n, dtype=np.int64)
    cdef i64[::1] off = np.empty(n, dtype=np.int64)
    out_arr = np.zeros((C, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] comp = np.zeros(m, dtype=np.float64)
    with nogil:
        for c in range(C):
            for j in range(m):
                comp[j] = 0.0
            nr = _ranges(centers[c], skeys, origin, cell, dims, strides, cc, off, rg)
            for t in range(nr):
                for i in range(rg[t, 0], rg[t, 1]):
                    if _dist2(spts, i, centers[c]) <= r2:
                        for j in range(m):
                            v = vals[i, j]
                            s = out[c, j]
                            tt = s + v
                            if fabs(s) >= fabs(v):
                                comp[j] += (s - tt) + v
                            else:
                                comp[j] += (v - tt) + s
                            out[c, j] = tt
            for j in range(m):
                out[c, j] += comp[j]
    return out_arr


def ball_moments(const double[:, ::1] spts, const i64[::1] skeys,
                 const double[::1] origin, double cell,
                 const i64[::1] dims, const i64[::1] strides,
                 const double[::1] w, const double[:, ::1] centers, double r,
                 const double[:, ::1] bases, const double[:, :, ::1] frames,
                 double q, const double[::1] floors):
    """Weighted mass, mean and centered scatter for each closed ball.

    With ``q > 2`` each atom weight is multiplied by
    ``max(d, floor)**(q - 2)`` where ``d`` is its distance to the plane
    ``(bases[c], frames[c])``; this is one reweighting round of the L^q fit.
    """
    cdef Py_ssize_t C = centers.shape[0], n = spts.shape[1]
    cdef Py_ssize_t c, t, i, a, b, nr
    cdef double r2 = r * r, u, dd, mass
    cdef bint reweight = q != 2.0
    nrange = 1
    for _ in range(n - 1):
        nrange *= 3
    cdef Py_ssize_t[:, ::1] rg = np.empty((nrange, 2), dtype=np.intp)
    cdef i64[::1] cc = np.empty(n, dtype=np.int64)
    cdef i64[::1] off = np.empty(n, dtype=np.int64)
    cdef double[::1] tmp = np.empty(n, dtype=np.float64)
    mass_arr = np.zeros(C, dtype=np.float64)
    mean_arr = np.zeros((C, n), dtype=np.float64)
    scat_arr = np.zeros((C, n, n), dtype=np.float64)
    cdef double[::1] m_ = mass_arr
    cdef double[:, ::1] mu_ = mean_arr
    cdef double[:, :, ::1] sc_ = scat_arr
    with nogil:
        for c in range(C):
            nr = _ranges(centers[c], skeys, origin, cell, dims, strides, cc, off, rg)
            mass = 0.0
            for t in range(nr):
                for i in range(rg[t, 0], rg[t, 1]):
                    if _dist2(spts, i, centers[c]) <= r2:
                        u = w[i]
                        if reweight:
                            dd = sqrt(_plane_dist2(spts, i, bases, frames, c, &tmp[0]))
                            if dd < floors[c]:
                                dd = floors[c]
                            u = u * pow(dd, q - 2.0)
                        mass += u
                        for a in range(n):
                            mu_[c, a] += u * spts[i, a]
            m_[c] = mass
            if mass <= 0.0:
                continue
            for a in range(n):
                mu_[c, a] /= mass
            for t in range(nr):
                for i in range(rg[t, 0], rg[t, 1]):
                    if _dist2(spts, i, centers[c]) <= r2:
                        u = w[i]
                        if reweight:
                            dd = sqrt(_plane_dist2(spts, i, bases, frames, c, &tmp[0]))
                            if dd < floors[c]:
                                dd = floors[c]
                            u = u * pow(dd, q - 2.0)
                        for a in range(n):
                            tmp[a] = spts[i, a] - mu_[c, a]
                        for a in range(n):
                            for b in range(a, n):
                                sc_[c, a, b] += u * tmp[a] * tmp[b]
            for a in range(n):
                for b in range(a + 1, n):
                    sc_[c, b, a] = sc_[c, a, b]
    return mass_arr, mean_arr, scat_arr


def ball_residuals(const double[:, ::1] spts, const i64[::1] skeys,
                   const double[::1] origin, double cell,
                   const i64[::1] dims, const i64[::1] strides,
                   const double[::1] w, const double[:, ::1] centers, double r,
                   const double[:, ::1] bases, const double[:, :, ::1] frames,
                   double q):
    """Compensated sums of ``w * d(y, V_c)**q`` over each closed ball."""
    cdef Py_ssize_t C = centers.shape[0], n = spts.shape[1]
    cdef Py_ssize_t c, t, i, nr
    cdef double r2 = r * r, d2, v, s, tt, comp
    nrange = 1
    for _ in range(n - 1):
        nrange *= 3
    cdef Py_ssize_t[:, ::1] rg = np.empty((nrange, 2), dtype=np.intp)
    cdef i64[::1] cc = np.empty(n, dtype=np.int64)
    cdef i64[::1] off = np.empty(n, dtype=np.int64)
    cdef double[::1] tmp = np.empty(n, dtype=np.float64)
    res_arr = np.zeros(C, dtype=np.float64)
    cdef double[::1] res = res_arr
    with nogil:
        for c in range(C):
            nr = _ranges(centers[c], skeys, origin, cell, dims, strides, cc, off, rg)
            s = 0.0
            comp = 0.0
            for t in range(nr):
                for i in range(rg[t, 0], rg[t, 1]):
                    if _dist2(spts, i, centers[c]) <= r2:
                        d2 = _plane_dist2(spts, i, bases, frames, c, &tmp[0])
                        if q == 2.0:
                            v = w[i] * d2
                        else:
                            v = w[i] * pow(d2, 0.5 * q)
                        tt = s + v
                        if fabs(s) >= fabs(v):
                            comp += (s - tt) + v
                        else:
                            comp += (v - tt) + s
                        s = tt
            res[c] = s + comp
    return res_arr


cdef inline double _smoothstep(double u) noexcept nogil:
    if u <= 0.0:
        return 0.0
    if u >= 1.0:
        return 1.0
    return u * u * u * (u * (6.0 * u - 15.0) + 10.0)


def sigma_eval(const double[:, ::1] bpts, const i64[::1] bkeys,
               const double[::1] origin, double cell,
               const i64[::1] dims, const i64[::1] strides,
               const double[:, ::1] bases, const double[:, :, ::1] frames,
               double r, const double[:, ::1] points):
    """Apply ``x -> psi(x) x + sum_s lambda_s(x) pi_s(x)`` to every point.

    ``bpts`` are the (sorted) ball centers, ``bases``/``frames`` their planes
    in the same order, ``cell >= 4 r``. Returns the mapped points and the
    partition mass ``sum_s lambda_s`` at each input point.
    """
    cdef Py_ssize_t P = points.shape[0], n = points.shape[1], k = frames.shape[1]
    cdef Py_ssize_t p, t, s, d, j, nr
    cdef double r4sq = 16.0 * r * r, dist, bsum, hs, lam, dot
    nrange = 1
    for _ in range(n - 1):
        nrange *= 3
    cdef Py_ssize_t[:, ::1] rg = np.empty((nrange, 2), dtype=np.intp)
    cdef i64[::1] cc = np.empty(n, dtype=np.int64)
    cdef i64[::1] off = np.empty(n, dtype=np.int64)
    cdef double[::1] tmp = np.empty(n, dtype=np.float64)
    cdef double[::1] acc = np.empty(n, dtype=np.float64)
    out_arr = np.array(points, dtype=np.float64, copy=True)
    lam_arr = np.zeros(P, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] lsum = lam_arr
    with nogil:
        for p in range(P):
            nr = _ranges(points[p], bkeys, origin, cell, dims, strides, cc, off, rg)
            bsum = 0.0
            for t in range(nr):
                for s in range(rg[t, 0], rg[t, 1]):
                    dist = _dist2(bpts, s, points[p])
                    if dist < r4sq:
                        bsum += _smoothstep(4.0 - sqrt(dist) / r)
            if bsum <= 0.0:
                continue
            if bsum >= 1.0:
                hs = 1.0 / bsum
            else:
                hs = bsum * bsum * (10.0 + bsum * (6.0 * bsum - 15.0))
            for d in range(n):
                acc[d] = 0.0
            for t in range(nr):
                for s in range(rg[t, 0], rg[t, 1]):
                    dist = _dist2(bpts, s, points[p])
                    if dist >= r4sq:
                        continue
                    lam = _smoothstep(4.0 - sqrt(dist) / r) * hs
                    if lam <= 0.0:
                        continue
                    lsum[p] += lam
                    # pi_s(x) - x = -(component of x - base orthogonal to frame)
                    for d in range(n):
                        tmp[d] = points[p, d] - bases[s, d]
                    for d in range(n):
                        acc[d] -= lam * tmp[d]
                    for j in range(k):
                        dot = 0.0
                        for d in range(n):
                            dot += tmp[d] * frames[s, j, d]
                        for d in range(n):
                            acc[d] += lam * dot * frames[s, j, d]
            for d in range(n):
                out[p, d] = points[p, d] + acc[d]
    return out_arr, lam_arr


def ball_newton(const double[:, ::1] spts, const i64[::1] skeys,
                const double[::1] origin, double cell,
                const i64[::1] dims, const i64[::1] strides,
                const double[::1] w, const double[:, ::1] centers, double r,
                const double[:, ::1] bases, const double[:, :, ::1] frames,
                const double[:, :, ::1] normals, double q):
    """Gradient and Hessian of ``sum w |e|**q`` in the tilt/offset parameters.

    For a point with in-plane coordinates ``u`` and normal coordinates ``v``
    the residual is ``e = v - Theta z`` with ``z = (1, u)``; derivatives are
    taken at ``Theta = 0`` and share the overall factor ``q`` dropped.
    Parameters are ordered ``a * (k + 1) + j`` for normal ``a``, column ``j``.
    """
    cdef Py_ssize_t C = centers.shape[0], n = spts.shape[1], k = frames.shape[1]
    cdef Py_ssize_t m = normals.shape[1], kk = k + 1, P = m * (k + 1)
    cdef Py_ssize_t c, t, i, a, b, j, l, d, nr
    cdef double r2 = r * r, s2, sabs, alpha, gam, dot
    nrange = 1
    for _ in range(n - 1):
        nrange *= 3
    cdef Py_ssize_t[:, ::1] rg = np.empty((nrange, 2), dtype=np.intp)
    cdef i64[::1] cc = np.empty(n, dtype=np.int64)
    cdef i64[::1] off = np.empty(n, dtype=np.int64)
    cdef double[::1] tmp = np.empty(n, dtype=np.float64)
    cdef double[::1] z = np.empty(kk, dtype=np.float64)
    cdef double[::1] v = np.empty(m, dtype=np.float64)
    grad_arr = np.zeros((C, P), dtype=np.float64)
    hess_arr = np.zeros((C, P, P), dtype=np.float64)
    cdef double[:, ::1] g = grad_arr
    cdef double[:, :, ::1] h = hess_arr
    with nogil:
        for c in range(C):
            nr = _ranges(centers[c], skeys, origin, cell, dims, strides, cc, off, rg)
            for t in range(nr):
                for i in range(rg[t, 0], rg[t, 1]):
                    if _dist2(spts, i, centers[c]) > r2:
                        continue
                    for d in range(n):
                        tmp[d] = spts[i, d] - bases[c, d]
                    z[0] = 1.0
                    for j in range(k):
                        dot = 0.0
                        for d in range(n):
                            dot += tmp[d] * frames[c, j, d]
                        z[j + 1] = dot
                    s2 = 0.0
                    for a in range(m):
                        dot = 0.0
                        for d in range(n):
                            dot += tmp[d] * normals[c, a, d]
                        v[a] = dot
                        s2 += dot * dot
                    if s2 <= 0.0:
                        continue
                    sabs = sqrt(s2)
                    alpha = w[i] * pow(sabs, q - 2.0)
                    gam = (q - 2.0) * alpha / s2
                    for a in range(m):
                        for j in range(kk):
                            g[c, a * kk + j] -= alpha * v[a] * z[j]
                    for a in range(m):
                        for b in range(m):
                            dot = gam * v[a] * v[b]
                            if a == b:
                                dot += alpha
                            for j in range(kk):
                                for l in range(kk):
                                    h[c, a * kk + j, b * kk + l] += dot * z[j] * z[l]
    return grad_arr, hess_arr
