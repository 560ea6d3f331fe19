"""Reference implementations of the clustering/eigensolver kernels.

The compiled extension (flaegis._kernels) mirrors these exactly; this module is
the fallback when the extension is not built. Keep the two in lockstep — the
backend test suite diffs their outputs.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def sax_symbols(v: np.ndarray, lo: float, hi: float, bands: int) -> np.ndarray:
    """Quantize values into equidistant bands over [lo, hi].

    lo == hi means the range source saw a constant signal; everything maps to
    the middle band so downstream cosine still has a nonzero vector.
    """
    v = np.asarray(v, dtype=np.float64)
    if lo == hi:
        return np.full(v.shape, bands // 2, dtype=np.int64)
    scaled = np.floor(bands * (v - lo) / (hi - lo))
    return np.clip(scaled, 0, bands - 1).astype(np.int64)


def cosine_sim_int(symbols: np.ndarray) -> np.ndarray:
    """K x K cosine over integer symbol rows.

    Symbol dot products are exact in float64 (values < 2^52), so this is
    bit-identical across backends. Zero-norm rows: cos = 1 if both zero else 0.
    """
    s = np.asarray(symbols, dtype=np.float64)
    k = s.shape[0]
    norms = np.sqrt(np.einsum("ij,ij->i", s, s))
    out = np.empty((k, k), dtype=np.float64)
    for i in range(k):
        out[i, i] = 1.0
        for j in range(i + 1, k):
            if norms[i] == 0.0 or norms[j] == 0.0:
                c = 1.0 if norms[i] == norms[j] else 0.0
            else:
                c = float(np.dot(s[i], s[j])) / (norms[i] * norms[j])
                c = min(1.0, max(-1.0, c))
            out[i, j] = c
            out[j, i] = c
    return out


def jacobi_eigh(a: np.ndarray, tol_factor: float = 1e-10, max_sweeps: int = 100):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns (eigenvalues ascending, eigenvectors as columns). Converged when
    the off-diagonal Frobenius norm drops below tol_factor * ||A||_F.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n, dtype=np.float64)
    if n == 1:
        return a.diagonal().copy(), v
    norm = float(np.sqrt((a * a).sum()))
    thresh = tol_factor * norm
    off = _offdiag_norm(a)
    sweeps = 0
    while off > thresh and sweeps < max_sweeps:
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                _rotate(a, v, p, q, c, s)
        off = _offdiag_norm(a)
        sweeps += 1
    if off > thresh:
        raise ValueError(
            f"jacobi eigensolver did not converge in {max_sweeps} sweeps; "
            f"off-diagonal residual {off:.3e}"
        )
    vals = a.diagonal().copy()
    order = np.argsort(vals, kind="stable")
    return vals[order], v[:, order]


def _offdiag_norm(a: np.ndarray) -> float:
    n = a.shape[0]
    acc = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            acc += 2.0 * a[i, j] * a[i, j]
    return float(np.sqrt(acc))


def _rotate(a: np.ndarray, v: np.ndarray, p: int, q: int, c: float, s: float):
    n = a.shape[0]
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


def kmeans_iterate(x: np.ndarray, centroids: np.ndarray, max_iter: int = 100, tol: float = 1e-6):
    """Lloyd iterations from given initial centroids (seeding happens upstream).

    Ties in assignment go to the lower centroid index; an emptied cluster keeps
    its previous centroid. Returns (labels, centroids).
    """
    x = np.asarray(x, dtype=np.float64)
    c = np.array(centroids, dtype=np.float64)
    k = c.shape[0]
    labels = np.zeros(x.shape[0], dtype=np.int64)
    for _ in range(max_iter):
        d = ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d, axis=1).astype(np.int64)
        shift = 0.0
        for j in range(k):
            members = x[labels == j]
            if members.shape[0] == 0:
                continue
            nc = members.mean(axis=0)
            shift = max(shift, float(np.sqrt(((nc - c[j]) ** 2).sum())))
            c[j] = nc
        if shift <= tol:
            break
    return labels, c


def meanshift_flat(x: np.ndarray, bandwidth: float, tol: float = 1e-12,
                   max_iter: int = 500, merge_tol: float = 1e-5) -> np.ndarray:
    """Flat-kernel mean shift; returns integer mode labels per point.

    Every point is a start; it moves to the mean of in-bandwidth neighbours
    until the shift is below tol. Fixed points within merge_tol share a label
    (first-come representative), so exact co-location is required to merge —
    a bandwidth-sized merge radius would fuse modes the kernel keeps apart.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    modes = np.empty_like(x)
    for i in range(n):
        p = x[i].copy()
        for _ in range(max_iter):
            d2 = ((x - p) ** 2).sum(axis=1)
            nb = x[d2 <= bandwidth * bandwidth]
            if nb.shape[0] == 0:
                break
            m = nb.mean(axis=0)
            if float(np.sqrt(((m - p) ** 2).sum())) <= tol:
                p = m
                break
            p = m
        modes[i] = p
    labels = np.full(n, -1, dtype=np.int64)
    reps = []
    for i in range(n):
        for li, r in enumerate(reps):
            if float(np.sqrt(((modes[i] - r) ** 2).sum())) <= merge_tol:
                labels[i] = li
                break
        else:
            labels[i] = len(reps)
            reps.append(modes[i])
    return labels
