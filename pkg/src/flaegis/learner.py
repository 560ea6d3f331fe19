"""Desk-scale learner: MLP + Adam, synthetic data, non-IID partitioning."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from flaegis.core import flatten, rng_for, unflatten

__all__ = [
    "Dataset",
    "TrainConfig",
    "MlpModel",
    "synth_dataset",
    "load_csv",
    "dirichlet_partition",
    "label_entropy",
    "local_train",
    "evaluate",
    "gradient",
]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("samples must be a non-empty n x d matrix")
        if y.shape != (x.shape[0],):
            raise ValueError("labels must be one integer per sample")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite sample values")
        if y.min() < 0:
            raise ValueError("negative label")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.x[idx], self.y[idx])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    batch_size: int = 32
    lr: float = 0.001

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("train config values must be positive (epochs >= 0)")


class MlpModel:
    """Fully connected ReLU net with softmax output.

    Hidden layers get Glorot-uniform init; the output layer starts at zero so
    the initial predictive distribution is exactly uniform — early rounds then
    reflect data, not init noise.
    """

    def __init__(self, sizes, seed: int = 0):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError("need input/output sizes >= 1")
        self.sizes = sizes
        rng = np.random.Generator(np.random.PCG64(seed))
        self.weights = []
        self.biases = []
        last = len(sizes) - 2
        for li in range(len(sizes) - 1):
            fan_in, fan_out = sizes[li], sizes[li + 1]
            if li == last:
                w = np.zeros((fan_in, fan_out))
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @property
    def n_classes(self) -> int:
        return self.sizes[-1]

    def shapes(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w.shape)
            out.append(b.shape)
        return out

    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def get_flat(self) -> np.ndarray:
        layered = []
        for w, b in zip(self.weights, self.biases):
            layered.append(w)
            layered.append(b)
        return flatten(layered)

    def set_flat(self, v: np.ndarray):
        layered = unflatten(v, self.shapes())
        self.weights = layered[0::2]
        self.biases = layered[1::2]

    def clone(self) -> "MlpModel":
        m = MlpModel.__new__(MlpModel)
        m.sizes = list(self.sizes)
        m.weights = [w.copy() for w in self.weights]
        m.biases = [b.copy() for b in self.biases]
        return m

    def _forward_cache(self, x: np.ndarray):
        acts = [x]
        pre = []
        h = x
        n_layers = len(self.weights)
        for li in range(n_layers):
            z = h @ self.weights[li] + self.biases[li]
            pre.append(z)
            if li < n_layers - 1:
                h = np.maximum(z, 0.0)
            else:
                zs = z - z.max(axis=1, keepdims=True)
                e = np.exp(zs)
                h = e / e.sum(axis=1, keepdims=True)
            acts.append(h)
        return pre, acts

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return self._forward_cache(x)[1][-1]

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray):
        """Mean cross-entropy and exact gradients, batch-size invariant."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        n = x.shape[0]
        pre, acts = self._forward_cache(x)
        probs = acts[-1]
        eps = 1e-300
        loss = float(-np.mean(np.log(probs[np.arange(n), y] + eps)))
        delta = probs.copy()
        delta[np.arange(n), y] -= 1.0
        delta /= n
        gw = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        for li in range(len(self.weights) - 1, -1, -1):
            gw[li] = acts[li].T @ delta
            gb[li] = delta.sum(axis=0)
            if li > 0:
                delta = (delta @ self.weights[li].T) * (pre[li - 1] > 0.0)
        return loss, gw, gb


def synth_dataset(seed: int, n: int = 4000, d: int = 8, C: int = 5,
                  cluster_spread: float = 0.2, center_scale: float = 6.0) -> Dataset:
    """Gaussian mixture with unit-direction centers scaled to center_scale.

    Labels are balanced by construction; a linear probe beats chance whenever
    center_scale is a few multiples of cluster_spread. The default ratio keeps
    one-epoch client updates aligned enough that update-space clustering sees
    colluder structure instead of data-composition noise.
    """
    if n < 1 or d < 1 or C < 1:
        raise ValueError("n, d, C must be positive")
    if C > n:
        raise ValueError(f"cannot draw {C} classes from {n} samples")
    rng = rng_for(seed, purpose="synth")
    centers = rng.normal(0.0, 1.0, size=(C, d))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    centers *= center_scale
    y = rng.permutation(np.arange(n, dtype=np.int64) % C)
    x = centers[y] + cluster_spread * rng.normal(0.0, 1.0, size=(n, d))
    return Dataset(x, y)


def load_csv(path) -> Dataset:
    """CSV with header f0,...,f{d-1},label; one sample per row."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[-1] != "label":
            raise ValueError("last CSV column must be 'label'")
        rows = [[float(v) for v in row[:-1]] + [int(row[-1])] for row in reader]
    if not rows:
        raise ValueError("empty CSV dataset")
    arr = np.asarray(rows, dtype=np.float64)
    return Dataset(arr[:, :-1], arr[:, -1].astype(np.int64))


def dirichlet_partition(ds: Dataset, K: int, alpha: float, seed: int) -> list:
    """Disjoint exhaustive split with Dirichlet(alpha) label proportions per client.

    Largest-remainder allocation per class; redraws the proportions if any
    client would end up empty.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    if ds.n < K:
        raise ValueError(f"cannot split {ds.n} samples across {K} clients")
    if K == 1:
        return [Dataset(ds.x.copy(), ds.y.copy())]
    classes = np.unique(ds.y)
    for attempt in range(1000):
        rng = rng_for(seed, round_idx=attempt, purpose="partition")
        props = rng.dirichlet([alpha] * len(classes), size=K)
        assigned = [[] for _ in range(K)]
        for ci, c in enumerate(classes):
            idx = np.flatnonzero(ds.y == c)
            idx = rng.permutation(idx)
            w = props[:, ci]
            w = w / w.sum()
            target = w * idx.size
            counts = np.floor(target).astype(np.int64)
            rem = idx.size - counts.sum()
            if rem > 0:
                frac = target - counts
                for j in np.argsort(-frac, kind="stable")[:rem]:
                    counts[j] += 1
            pos = 0
            for k in range(K):
                assigned[k].extend(idx[pos : pos + counts[k]].tolist())
                pos += counts[k]
        if all(len(a) > 0 for a in assigned):
            return [ds.subset(np.sort(np.asarray(a, dtype=np.int64))) for a in assigned]
    raise ValueError("could not produce a partition without empty clients")


def label_entropy(ds: Dataset, C: int) -> float:
    """Shannon entropy of the label histogram, normalized by log C."""
    if C < 1:
        raise ValueError("C must be >= 1")
    if C == 1:
        return 1.0
    counts = np.bincount(ds.y, minlength=C).astype(np.float64)
    p = counts / counts.sum()
    nz = p[p > 0]
    h = float(-(nz * np.log(nz)).sum())
    return h / float(np.log(C))


def local_train(model: MlpModel, ds: Dataset, cfg: TrainConfig, seed: int) -> np.ndarray:
    """Mini-batch Adam on mean cross-entropy; returns flattened trained weights.

    The input model is not mutated. Zero epochs returns the weights unchanged.
    """
    work = model.clone()
    if cfg.epochs == 0:
        return work.get_flat()
    rng = np.random.Generator(np.random.PCG64(seed))
    mw = [np.zeros_like(w) for w in work.weights]
    vw = [np.zeros_like(w) for w in work.weights]
    mb = [np.zeros_like(b) for b in work.biases]
    vb = [np.zeros_like(b) for b in work.biases]
    t = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(ds.n)
        for start in range(0, ds.n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            loss, gw, gb = work.loss_and_grads(ds.x[batch], ds.y[batch])
            if not np.isfinite(loss):
                raise ValueError(
                    f"training diverged: non-finite loss at step {t} "
                    f"(batch {start // cfg.batch_size})"
                )
            t += 1
            bc1 = 1.0 - ADAM_BETA1**t
            bc2 = 1.0 - ADAM_BETA2**t
            for li in range(len(work.weights)):
                mw[li] = ADAM_BETA1 * mw[li] + (1 - ADAM_BETA1) * gw[li]
                vw[li] = ADAM_BETA2 * vw[li] + (1 - ADAM_BETA2) * gw[li] ** 2
                work.weights[li] -= cfg.lr * (mw[li] / bc1) / (np.sqrt(vw[li] / bc2) + ADAM_EPS)
                mb[li] = ADAM_BETA1 * mb[li] + (1 - ADAM_BETA1) * gb[li]
                vb[li] = ADAM_BETA2 * vb[li] + (1 - ADAM_BETA2) * gb[li] ** 2
                work.biases[li] -= cfg.lr * (mb[li] / bc1) / (np.sqrt(vb[li] / bc2) + ADAM_EPS)
    return work.get_flat()


def evaluate(model: MlpModel, ds: Dataset) -> float:
    probs = model.forward(ds.x)
    pred = probs.argmax(axis=1)
    return float((pred == ds.y).mean())


def gradient(model: MlpModel, batch: Dataset) -> np.ndarray:
    """Flattened exact gradient of mean cross-entropy over the batch."""
    _, gw, gb = model.loss_and_grads(batch.x, batch.y)
    layered = []
    for w, b in zip(gw, gb):
        layered.append(w)
        layered.append(b)
    return flatten(layered)
