"""Identification phase: SAX discretization, cosine similarity graph, spectral
cluster-count estimation, two-way split, smaller-cluster flagging."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from flaegis import backend
from flaegis.core import Verdict, rng_for

__all__ = [
    "SaxConfig",
    "DetectConfig",
    "SpectralState",
    "sax_transform",
    "cosine_similarity",
    "build_similarity",
    "spectral_count",
    "two_means_split",
    "flag_malicious",
    "flaegis_identify",
]


@dataclass(frozen=True)
class SaxConfig:
    # band count sets the quantization floor for update-space contrast: at the
    # desk scale one local epoch moves weights by a small fraction of the
    # round-global envelope, and coarser banding (e.g. 45) leaves a minority
    # cohort of flipped-label trainers indistinguishable from benign
    # composition clusters
    bands: int = 90
    paa_window: int = 1
    range_mode: str = "round_global"

    def __post_init__(self):
        if self.bands < 2:
            raise ValueError("bands must be >= 2")
        if self.paa_window < 1:
            raise ValueError("paa_window must be >= 1")
        if self.range_mode not in ("round_global", "per_client"):
            raise ValueError(f"unknown range_mode {self.range_mode!r}")


@dataclass(frozen=True)
class DetectConfig:
    sax: SaxConfig = field(default_factory=SaxConfig)
    use_sax: bool = True
    k_max: int = 5
    kmeans_input: str = "embedding"
    scale_neighbor: int = 3
    sharpness: float = 1.0

    def __post_init__(self):
        if self.k_max < 2:
            raise ValueError("k_max must be >= 2")
        if self.kmeans_input not in ("embedding", "similarity"):
            raise ValueError(f"unknown kmeans_input {self.kmeans_input!r}")
        if self.scale_neighbor < 1 or self.sharpness <= 0:
            raise ValueError("scale_neighbor >= 1 and sharpness > 0 required")


@dataclass(frozen=True)
class SpectralState:
    w: np.ndarray
    affinity: np.ndarray
    degree: np.ndarray
    laplacian: np.ndarray
    eigenvalues: np.ndarray
    embedding: np.ndarray


def _paa(v: np.ndarray, window: int) -> np.ndarray:
    if window == 1:
        return v
    n_full = v.size // window
    head = v[: n_full * window].reshape(n_full, window).mean(axis=1)
    if v.size % window:
        return np.concatenate([head, [v[n_full * window :].mean()]])
    return head


def sax_transform(v: np.ndarray, cfg: SaxConfig, value_range) -> np.ndarray:
    """PAA means per window, then equidistant-band quantization over value_range."""
    v = np.asarray(v, dtype=np.float64)
    lo, hi = float(value_range[0]), float(value_range[1])
    pooled = _paa(v, cfg.paa_window)
    return backend.sax_symbols(pooled, lo, hi, cfg.bands)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine over raw symbol integers, clamped to [-1, 1].

    Zero-norm inputs: 1 if both zero, else 0 (a shared all-zero symbol string
    is a perfect match; zero against anything else carries no signal).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("length mismatch")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 1.0 if na == nb else 0.0
    return float(min(1.0, max(-1.0, float(np.dot(a, b)) / (na * nb))))


def build_similarity(rows) -> np.ndarray:
    """K x K matrix of max(0, cosine) with a forced unit diagonal.

    Rows may be symbol vectors or raw weight vectors (the no-SAX variant).
    """
    stack = np.stack([np.asarray(r, dtype=np.float64) for r in rows])
    if stack.shape[0] < 2:
        raise ValueError("need at least 2 rows")
    m = backend.cosine_sim_int(stack)
    np.fill_diagonal(m, 1.0)
    return np.maximum(m, 0.0)


def _selftune_affinity(w: np.ndarray, scale_neighbor: int, sharpness: float) -> np.ndarray:
    """Rescale similarities into a locally-scaled affinity graph.

    Raw cosine similarities concentrate near 1 for same-envelope weight
    vectors, which flattens the Laplacian spectrum; scaling each distance by
    the geometric mean of the endpoints' k-th-neighbour distances restores the
    contrast the eigengap needs. Exact duplicates (d = 0) snap to affinity 1;
    a zero local scale disconnects anything farther than the duplicates.
    """
    k = w.shape[0]
    d = 1.0 - w
    np.fill_diagonal(d, 0.0)
    sig = np.empty(k)
    for i in range(k):
        others = np.sort(np.delete(d[i], i))
        sig[i] = others[min(scale_neighbor, others.size) - 1]
    a = np.ones((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            if d[i, j] == 0.0:
                val = 1.0
            elif sig[i] * sig[j] == 0.0:
                val = 0.0
            else:
                val = float(np.exp(-(d[i, j] ** 2) / (sharpness * sig[i] * sig[j])))
            a[i, j] = val
            a[j, i] = val
    return a


def spectral_count(w: np.ndarray, k_max: int = 5, scale_neighbor: int = 3,
                   sharpness: float = 1.0):
    """Estimate the cluster count by the largest Laplacian eigengap.

    Returns (estimated_clusters, SpectralState). A spectrum that is flat below
    the gap floor carries no cluster structure and estimates 1.
    """
    w = np.asarray(w, dtype=np.float64)
    k = w.shape[0]
    a = _selftune_affinity(w, scale_neighbor, sharpness)
    deg = a.sum(axis=1)
    lap = np.diag(deg) - a
    vals, vecs = backend.jacobi_eigh(lap)
    vals = np.maximum(vals, 0.0)  # clip eigensolver noise on the PSD floor
    embedding = vecs[:, :2] if k >= 2 else vecs[:, :1]
    n_gaps = min(k_max, k) - 1
    gaps = vals[1 : n_gaps + 1] - vals[:n_gaps]
    floor = 1e-8 * float(np.trace(lap)) / k
    if n_gaps < 1 or float(gaps.max()) < floor:
        est = 1
    else:
        est = int(np.argmax(gaps)) + 1
    state = SpectralState(w=w, affinity=a, degree=deg, laplacian=lap,
                          eigenvalues=vals, embedding=embedding)
    return est, state


def two_means_split(state: SpectralState, seed: int, kmeans_input: str = "embedding"):
    """2-means with ++ seeding on the spectral embedding rows (or, for the
    literal variant, on the similarity-matrix rows). Returns (S1, S2)."""
    if kmeans_input == "embedding":
        x = np.asarray(state.embedding, dtype=np.float64)
    else:
        x = np.asarray(state.w, dtype=np.float64)
    n = x.shape[0]
    spread = np.abs(x - x[0]).max()
    if spread == 0.0:
        return set(range(n)), set()
    rng = np.random.Generator(np.random.PCG64(seed))
    first = int(rng.integers(n))
    d2 = ((x - x[first]) ** 2).sum(axis=1)
    second = int(rng.choice(n, p=d2 / d2.sum()))
    labels, _ = backend.kmeans_iterate(x, np.stack([x[first], x[second]]),
                                       max_iter=100, tol=1e-6)
    s1 = set(np.flatnonzero(labels == 0).tolist())
    s2 = set(np.flatnonzero(labels == 1).tolist())
    return s1, s2


def flag_malicious(s1, s2, w: np.ndarray, estimated_clusters: int = 2) -> Verdict:
    """Smaller cluster is flagged; a size tie flags the side with less total
    similarity mass. An empty side collapses to an all-benign verdict."""
    s1, s2 = set(s1), set(s2)
    w = np.asarray(w, dtype=np.float64)
    if not s1 or not s2:
        return Verdict(benign_ids=s1 | s2, flagged_ids=frozenset(), estimated_clusters=1)
    if len(s1) != len(s2):
        flagged = s1 if len(s1) < len(s2) else s2
    else:
        mass1 = float(w[sorted(s1), :].sum())
        mass2 = float(w[sorted(s2), :].sum())
        flagged = s1 if mass1 <= mass2 else s2
    benign = (s1 | s2) - flagged
    return Verdict(benign_ids=benign, flagged_ids=flagged,
                   estimated_clusters=max(2, estimated_clusters))


def flaegis_identify(updates, cfg: DetectConfig, seed: int) -> Verdict:
    """Full identification pass over the round's flattened updates."""
    vectors = [np.asarray(u, dtype=np.float64) for u in updates]
    if len(vectors) < 2:
        raise ValueError("need at least 2 updates")
    if cfg.use_sax:
        if cfg.sax.range_mode == "round_global":
            lo = min(float(v.min()) for v in vectors)
            hi = max(float(v.max()) for v in vectors)
            rows = [sax_transform(v, cfg.sax, (lo, hi)) for v in vectors]
        else:
            rows = [sax_transform(v, cfg.sax, (float(v.min()), float(v.max())))
                    for v in vectors]
    else:
        rows = vectors
    w = build_similarity(rows)
    est, state = spectral_count(w, cfg.k_max, cfg.scale_neighbor, cfg.sharpness)
    if est == 1:
        return Verdict(benign_ids=frozenset(range(len(vectors))),
                       flagged_ids=frozenset(), estimated_clusters=1)
    s1, s2 = two_means_split(state, seed, cfg.kmeans_input)
    return flag_malicious(s1, s2, w, estimated_clusters=est)
