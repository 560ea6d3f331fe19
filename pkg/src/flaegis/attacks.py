"""Poisoning strategies: label flipping, LIE, STATOPT, mimic, min-max, min-sum.

Model-poisoning attacks transform the colluders' honest post-training weights;
every colluder submits the identical crafted vector. Label flipping is data
poisoning and is applied to the training set before local training (see sim).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from flaegis.learner import Dataset

__all__ = [
    "ATTACK_KINDS",
    "AttackConfig",
    "MaliciousStats",
    "flip_labels",
    "malicious_stats",
    "lie_z",
    "lie_attack",
    "statopt_attack",
    "mimic_attack",
    "minmax_attack",
    "minsum_attack",
    "craft_update",
]

ATTACK_KINDS = ("label_flip", "lie", "statopt", "mimic", "min_max", "min_sum")
THETA_MODES = ("inverse_unit_mean", "inverse_sign", "inverse_std")


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "lie"
    gamma_max: float = 50.0
    gamma: float = 1.0
    theta_mode: str = "inverse_unit_mean"
    reference_set: str = "malicious"
    omniscient: bool = False
    statopt_mode: str = "literal"

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.gamma_max <= 0:
            raise ValueError("gamma_max must be > 0")
        if self.theta_mode not in THETA_MODES:
            raise ValueError(f"unknown theta_mode {self.theta_mode!r}")
        if self.reference_set not in ("malicious", "benign"):
            raise ValueError(f"unknown reference_set {self.reference_set!r}")
        if self.statopt_mode not in ("literal", "offset"):
            raise ValueError(f"unknown statopt_mode {self.statopt_mode!r}")
        if self.kind == "mimic" and not self.omniscient:
            raise ValueError("mimic requires omniscient=True")
        if self.reference_set == "benign" and not self.omniscient:
            raise ValueError("benign reference set requires omniscient=True")


@dataclass(frozen=True)
class MaliciousStats:
    mean_update: np.ndarray
    std_update: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mean_update, dtype=np.float64)
        s = np.asarray(self.std_update, dtype=np.float64)
        if m.shape != s.shape:
            raise ValueError("mean/std dimension mismatch")
        if np.any(s < 0):
            raise ValueError("std must be nonnegative")
        object.__setattr__(self, "mean_update", m)
        object.__setattr__(self, "std_update", s)


def flip_labels(ds: Dataset, seed: int) -> Dataset:
    """Relabel every sample via a seeded fixed-point-free class permutation."""
    C = int(ds.y.max()) + 1
    if C < 2:
        raise ValueError("label flipping needs at least 2 classes")
    rng = np.random.Generator(np.random.PCG64(seed))
    if C == 2:
        perm = np.array([1, 0], dtype=np.int64)
    else:
        while True:
            perm = rng.permutation(C).astype(np.int64)
            if not np.any(perm == np.arange(C)):
                break
    return Dataset(ds.x, perm[ds.y])


def malicious_stats(colluders) -> MaliciousStats:
    """Coordinate-wise mean and population std over the colluders' updates."""
    vs = [np.asarray(v, dtype=np.float64) for v in colluders]
    if not vs:
        raise ValueError("need at least one colluder")
    dim = vs[0].shape
    if any(v.shape != dim for v in vs):
        raise ValueError("colluder dimension mismatch")
    stack = np.stack(vs)
    return MaliciousStats(stack.mean(axis=0), stack.std(axis=0))


def lie_z(n_total: int, n_malicious: int) -> float:
    """Noise coefficient keyed to how many outliers the median can absorb."""
    K, m = int(n_total), int(n_malicious)
    if not 0 < m < K:
        raise ValueError("need 0 < m < K")
    s = K // 2 + 1 - m
    if s <= 0:
        raise ValueError(f"attack infeasible: supporter count s={s} <= 0")
    arg = (K - m - s) / (K - m)
    if not 0.0 < arg < 1.0:
        raise ValueError(f"attack infeasible: quantile argument {arg} outside (0,1)")
    if arg == 0.5:
        return 0.0
    return float(ndtri(arg))


def lie_attack(stats: MaliciousStats, z: float) -> np.ndarray:
    return stats.mean_update + z * stats.std_update


def statopt_attack(stats: MaliciousStats, gamma: float, mode: str = "literal") -> np.ndarray:
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    omega = -np.sign(stats.mean_update)
    if mode == "literal":
        return -gamma * omega
    if mode == "offset":
        return stats.mean_update + gamma * omega
    raise ValueError(f"unknown statopt mode {mode!r}")


def mimic_attack(benign_updates, omniscient: bool = True) -> np.ndarray:
    """Replicate the benign update whose entries have the largest variance."""
    if not omniscient:
        raise ValueError("mimic requires omniscient knowledge of benign updates")
    ups = sorted(benign_updates, key=lambda u: u.client_id)
    if not ups:
        raise ValueError("mimic needs at least one benign update")
    variances = [float(np.var(np.asarray(u.weights, dtype=np.float64))) for u in ups]
    best = int(np.argmax(variances))  # ties resolve to the lowest client_id
    return np.asarray(ups[best].weights, dtype=np.float64).copy()


def _theta(stats: MaliciousStats, theta_mode: str) -> np.ndarray:
    if theta_mode == "inverse_unit_mean":
        norm = float(np.linalg.norm(stats.mean_update))
        if norm == 0.0:
            return -np.sign(stats.mean_update)  # degenerate mean: sign direction
        return -stats.mean_update / norm
    if theta_mode == "inverse_sign":
        return -np.sign(stats.mean_update)
    if theta_mode == "inverse_std":
        return -stats.std_update
    raise ValueError(f"unknown theta_mode {theta_mode!r}")


def _bisect_gamma(feasible, gamma_max: float, steps: int = 30) -> float:
    if feasible(gamma_max):
        return gamma_max
    if not feasible(0.0):
        return 0.0
    lo, hi = 0.0, gamma_max
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _reference_stack(reference) -> np.ndarray:
    refs = np.stack([np.asarray(r, dtype=np.float64) for r in reference])
    if refs.shape[0] < 2:
        raise ValueError("reference set needs at least 2 updates")
    return refs


def minmax_attack(stats: MaliciousStats, reference, theta_mode: str = "inverse_unit_mean",
                  gamma_max: float = 50.0) -> np.ndarray:
    """Largest perturbation whose distance to every reference update stays
    within the reference set's own max pairwise distance."""
    refs = _reference_stack(reference)
    theta = _theta(stats, theta_mode)
    diffs = refs[:, None, :] - refs[None, :, :]
    bound = float(np.sqrt((diffs**2).sum(axis=2)).max())

    def feasible(g: float) -> bool:
        v = stats.mean_update + g * theta
        return float(np.sqrt(((refs - v) ** 2).sum(axis=1)).max()) <= bound

    gstar = _bisect_gamma(feasible, gamma_max)
    return stats.mean_update + gstar * theta


def minsum_attack(stats: MaliciousStats, reference, theta_mode: str = "inverse_unit_mean",
                  gamma_max: float = 50.0) -> np.ndarray:
    """Same bisection with a sum-of-squared-distances budget: the crafted
    update's total dispersion may not exceed the worst reference row-sum."""
    refs = _reference_stack(reference)
    theta = _theta(stats, theta_mode)
    diffs = refs[:, None, :] - refs[None, :, :]
    bound = float((diffs**2).sum(axis=2).sum(axis=1).max())

    def feasible(g: float) -> bool:
        v = stats.mean_update + g * theta
        return float(((refs - v) ** 2).sum(axis=1).sum()) <= bound

    gstar = _bisect_gamma(feasible, gamma_max)
    return stats.mean_update + gstar * theta


def craft_update(cfg: AttackConfig, colluder_updates, benign_updates=None,
                 n_total: int | None = None) -> np.ndarray:
    """Produce the shared malicious vector for a model-poisoning round.

    Non-omniscient configs never touch benign_updates (the argument may be
    None); label_flip is data poisoning and has no crafted vector.
    """
    if cfg.kind == "label_flip":
        raise ValueError("label_flip poisons training data, not update vectors")
    colluders = list(colluder_updates)
    stats = malicious_stats(colluders) if colluders else None
    if cfg.kind == "mimic":
        return mimic_attack(benign_updates, omniscient=cfg.omniscient)
    if stats is None:
        raise ValueError("model-poisoning attacks need colluder updates")
    if cfg.reference_set == "benign":
        reference = [np.asarray(u.weights, dtype=np.float64) for u in benign_updates]
    else:
        reference = colluders
    if cfg.kind == "lie":
        if n_total is None:
            raise ValueError("lie needs the round's total client count")
        return lie_attack(stats, lie_z(n_total, len(colluders)))
    if cfg.kind == "statopt":
        return statopt_attack(stats, cfg.gamma, cfg.statopt_mode)
    if cfg.kind == "min_max":
        return minmax_attack(stats, reference, cfg.theta_mode, cfg.gamma_max)
    if cfg.kind == "min_sum":
        return minsum_attack(stats, reference, cfg.theta_mode, cfg.gamma_max)
    raise ValueError(f"unhandled attack kind {cfg.kind!r}")
