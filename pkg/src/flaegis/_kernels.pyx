# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled clustering/eigensolver kernels. Mirror of flaegis._kernels_py —
keep the two in lockstep; the backend test suite diffs their outputs."""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()

BACKEND = "compiled"


def sax_symbols(v, double lo, double hi, int bands):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t n = vv.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(n, dtype=np.int64)
    cdef Py_ssize_t i
    cdef double span, s
    cdef long sym
    if lo == hi:
        out[:] = bands // 2
        return out
    span = hi - lo
    for i in range(n):
        s = (bands * (vv[i] - lo)) / span
        sym = <long> s
        if s < 0:
            sym = 0
        if sym > bands - 1:
            sym = bands - 1
        out[i] = sym
    return out


def cosine_sim_int(symbols):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] s = np.ascontiguousarray(symbols, dtype=np.float64)
    cdef Py_ssize_t k = s.shape[0], p = s.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((k, k), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] norms = np.empty(k, dtype=np.float64)
    cdef Py_ssize_t i, j, t
    cdef double acc, c
    for i in range(k):
        acc = 0.0
        for t in range(p):
            acc += s[i, t] * s[i, t]
        norms[i] = sqrt(acc)
    for i in range(k):
        out[i, i] = 1.0
        for j in range(i + 1, k):
            if norms[i] == 0.0 or norms[j] == 0.0:
                c = 1.0 if norms[i] == norms[j] else 0.0
            else:
                acc = 0.0
                for t in range(p):
                    acc += s[i, t] * s[j, t]
                c = acc / (norms[i] * norms[j])
                if c > 1.0:
                    c = 1.0
                elif c < -1.0:
                    c = -1.0
            out[i, j] = c
            out[j, i] = c
    return out


cdef double _offdiag_norm(cnp.float64_t[:, :] a, Py_ssize_t n):
    cdef double acc = 0.0
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(i + 1, n):
            acc += 2.0 * a[i, j] * a[i, j]
    return sqrt(acc)


def jacobi_eigh(a_in, double tol_factor=1e-10, int max_sweeps=100):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] a = np.array(a_in, dtype=np.float64, order="C")
    cdef Py_ssize_t n = a.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] v = np.eye(n, dtype=np.float64)
    if n == 1:
        return a.diagonal().copy(), v
    cdef double norm = 0.0
    cdef Py_ssize_t i, j, p, q
    for i in range(n):
        for j in range(n):
            norm += a[i, j] * a[i, j]
    norm = sqrt(norm)
    cdef double thresh = tol_factor * norm
    cdef double off = _offdiag_norm(a, n)
    cdef int sweeps = 0
    cdef double apq, theta, t, c, s, aip, aiq, api, aqi, vip, viq
    while off > thresh and sweeps < max_sweeps:
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                else:
                    t = (1.0 if theta > 0.0 else -1.0) / (fabs(theta) + sqrt(theta * theta + 1.0))
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for i in range(n):
                    aip = a[i, p]
                    aiq = a[i, q]
                    a[i, p] = c * aip - s * aiq
                    a[i, q] = s * aip + c * aiq
                for i in range(n):
                    api = a[p, i]
                    aqi = a[q, i]
                    a[p, i] = c * api - s * aqi
                    a[q, i] = s * api + c * aqi
                for i in range(n):
                    vip = v[i, p]
                    viq = v[i, q]
                    v[i, p] = c * vip - s * viq
                    v[i, q] = s * vip + c * viq
        off = _offdiag_norm(a, n)
        sweeps += 1
    if off > thresh:
        raise ValueError(
            f"jacobi eigensolver did not converge in {max_sweeps} sweeps; "
            f"off-diagonal residual {off:.3e}"
        )
    vals = a.diagonal().copy()
    order = np.argsort(vals, kind="stable")
    return vals[order], np.asarray(v)[:, order]


def kmeans_iterate(x_in, centroids, int max_iter=100, double tol=1e-6):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] c = np.array(centroids, dtype=np.float64, order="C")
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], k = c.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] labels = np.zeros(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] sums = np.zeros((k, d), dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts = np.zeros(k, dtype=np.int64)
    cdef Py_ssize_t it, i, j, t, best
    cdef double dist, bestd, diff, shift, sh
    for it in range(max_iter):
        for i in range(n):
            best = 0
            bestd = 0.0
            for t in range(d):
                diff = x[i, t] - c[0, t]
                bestd += diff * diff
            for j in range(1, k):
                dist = 0.0
                for t in range(d):
                    diff = x[i, t] - c[j, t]
                    dist += diff * diff
                if dist < bestd:
                    bestd = dist
                    best = j
            labels[i] = best
        sums[:, :] = 0.0
        counts[:] = 0
        for i in range(n):
            counts[labels[i]] += 1
            for t in range(d):
                sums[labels[i], t] += x[i, t]
        shift = 0.0
        for j in range(k):
            if counts[j] == 0:
                continue
            sh = 0.0
            for t in range(d):
                diff = sums[j, t] / counts[j] - c[j, t]
                sh += diff * diff
                c[j, t] = sums[j, t] / counts[j]
            sh = sqrt(sh)
            if sh > shift:
                shift = sh
        if shift <= tol:
            break
    return labels, np.asarray(c)


def meanshift_flat(x_in, double bandwidth, double tol=1e-12, int max_iter=500,
                   double merge_tol=1e-5):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] modes = np.empty((n, d), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p = np.empty(d, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] m = np.empty(d, dtype=np.float64)
    cdef Py_ssize_t i, j, t, it
    cdef double bw2 = bandwidth * bandwidth
    cdef double d2, diff, shift
    cdef long cnt
    for i in range(n):
        for t in range(d):
            p[t] = x[i, t]
        for it in range(max_iter):
            cnt = 0
            for t in range(d):
                m[t] = 0.0
            for j in range(n):
                d2 = 0.0
                for t in range(d):
                    diff = x[j, t] - p[t]
                    d2 += diff * diff
                if d2 <= bw2:
                    cnt += 1
                    for t in range(d):
                        m[t] += x[j, t]
            if cnt == 0:
                break
            shift = 0.0
            for t in range(d):
                m[t] = m[t] / cnt
                diff = m[t] - p[t]
                shift += diff * diff
            for t in range(d):
                p[t] = m[t]
            if sqrt(shift) <= tol:
                break
        for t in range(d):
            modes[i, t] = p[t]
    labels_py = np.full(n, -1, dtype=np.int64)
    reps = []
    cdef Py_ssize_t li
    for i in range(n):
        assigned = False
        for li in range(len(reps)):
            d2 = 0.0
            for t in range(d):
                diff = modes[i, t] - reps[li][t]
                d2 += diff * diff
            if sqrt(d2) <= merge_tol:
                labels_py[i] = li
                assigned = True
                break
        if not assigned:
            labels_py[i] = len(reps)
            reps.append(modes[i].copy())
    return labels_py
