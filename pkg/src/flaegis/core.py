"""Shared domain types, weight flattening, and deterministic seeding."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "WeightVector",
    "ClientUpdate",
    "ServerView",
    "Verdict",
    "weight_vector",
    "flatten",
    "unflatten",
    "derive_seed",
    "rng_for",
    "server_view",
    "check_similarity_matrix",
]

# A WeightVector is a finite 1-D float64 array; use weight_vector() to build
# one with the invariants enforced.
WeightVector = np.ndarray


def _first_nonfinite(a: np.ndarray) -> int:
    bad = ~np.isfinite(a)
    return int(np.flatnonzero(bad)[0])


def weight_vector(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"non-finite weight entry at index {_first_nonfinite(v)}")
    v = v.copy()
    v.flags.writeable = False
    return v


def flatten(layered_params) -> np.ndarray:
    """Concatenate tensors in the given layer order into one vector."""
    parts = []
    offset = 0
    for layer in layered_params:
        a = np.asarray(layer, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(a)):
            raise ValueError(
                f"non-finite entry at flat index {offset + _first_nonfinite(a)}"
            )
        parts.append(a)
        offset += a.size
    if not parts:
        return np.zeros(0, dtype=np.float64)
    return np.concatenate(parts)


def _shape_tuple(entry) -> tuple:
    if isinstance(entry, (int, np.integer)):
        return (int(entry),)
    return tuple(int(s) for s in entry)


def unflatten(v: np.ndarray, shapes) -> list:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    shapes = [_shape_tuple(s) for s in shapes]
    total = sum(int(np.prod(s)) for s in shapes)
    if v.size != total:
        raise ValueError(f"length mismatch: vector has {v.size}, shapes need {total}")
    out = []
    pos = 0
    for s in shapes:
        n = int(np.prod(s))
        out.append(v[pos : pos + n].reshape(s).copy())
        pos += n
    return out


def derive_seed(master: int, round_idx: int = 0, client: int = 0, purpose: str = "") -> int:
    """Counter-style child seed: hash of (master, round, client, purpose).

    Pure function; repeated calls with the same path give the same stream seed,
    so K clients can train in parallel without perturbing determinism.
    """
    msg = f"{int(master)}|{int(round_idx)}|{int(client)}|{purpose}".encode()
    return int.from_bytes(hashlib.sha256(msg).digest()[:8], "little")


def rng_for(master: int, round_idx: int = 0, client: int = 0, purpose: str = "") -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master, round_idx, client, purpose)))


@dataclass(frozen=True)
class ClientUpdate:
    """One client's per-round submission. The truth flag is for scoring only;
    defenses get the server view, which strips it."""

    client_id: int
    weights: np.ndarray
    ground_truth_malicious: bool = False

    def __post_init__(self):
        object.__setattr__(self, "weights", weight_vector(self.weights))


@dataclass(frozen=True)
class ServerView:
    client_id: int
    weights: np.ndarray


def server_view(updates) -> list[ServerView]:
    """Project updates to what the server may legally observe."""
    return [ServerView(u.client_id, u.weights) for u in updates]


@dataclass(frozen=True)
class Verdict:
    benign_ids: frozenset = field(default_factory=frozenset)
    flagged_ids: frozenset = field(default_factory=frozenset)
    estimated_clusters: int = 1

    def __post_init__(self):
        object.__setattr__(self, "benign_ids", frozenset(self.benign_ids))
        object.__setattr__(self, "flagged_ids", frozenset(self.flagged_ids))
        if self.benign_ids & self.flagged_ids:
            raise ValueError("benign and flagged sets overlap")
        if self.estimated_clusters < 1:
            raise ValueError("estimated_clusters must be >= 1")
        if self.estimated_clusters == 1 and self.flagged_ids:
            raise ValueError("single-cluster verdict cannot flag clients")


def check_similarity_matrix(m: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("similarity matrix must be square")
    if not np.all(np.isfinite(m)):
        raise ValueError("similarity matrix has non-finite entries")
    if np.max(np.abs(m - m.T)) > tol:
        raise ValueError("similarity matrix not symmetric")
    if np.max(np.abs(np.diag(m) - 1.0)) > tol:
        raise ValueError("similarity matrix diagonal must be 1")
    if m.min() < -tol or m.max() > 1.0 + tol:
        raise ValueError("similarity entries outside [0, 1]")
    return m
