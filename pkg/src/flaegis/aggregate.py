"""Aggregators: FedAvg and coordinate-wise FFT density-mode selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["FftAggConfig", "fedavg", "kde_mode", "fft_aggregate"]


@dataclass(frozen=True)
class FftAggConfig:
    grid_bins: int = 512
    # multiplies the Silverman width; >1 smooths the per-coordinate density so
    # the mode tracks the consensus instead of the deepest local spike, which
    # matters when the surviving client set changes between rounds
    bandwidth_scale: float = 3.0

    def __post_init__(self):
        b = self.grid_bins
        if b < 8 or (b & (b - 1)) != 0:
            raise ValueError("grid_bins must be a power of two >= 8")
        if self.bandwidth_scale <= 0:
            raise ValueError("bandwidth_scale must be > 0")


def fedavg(updates, sample_counts=None) -> np.ndarray:
    """Coordinate-wise mean; unweighted unless sample counts are supplied."""
    stack = np.stack([np.asarray(u, dtype=np.float64) for u in updates])
    if stack.shape[0] < 1:
        raise ValueError("need at least one update")
    if sample_counts is None:
        return stack.mean(axis=0)
    counts = np.asarray(sample_counts, dtype=np.float64)
    if counts.shape != (stack.shape[0],) or counts.sum() <= 0:
        raise ValueError("sample_counts must be one positive total per update")
    return (stack * counts[:, None]).sum(axis=0) / counts.sum()


def _fft_mode_batch(values: np.ndarray, grid_bins: int,
                    bandwidth_scale: float = 1.0) -> np.ndarray:
    """Density mode per row of values (rows = coordinates, cols = clients).

    Gaussian KDE on a uniform grid via circular FFT convolution of the
    linearly-binned histogram; Silverman bandwidth, 3h padding, argmax with
    ties resolved to the smallest grid value.
    """
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite sample")
    n_rows, n = values.shape
    m = grid_bins
    out = np.empty(n_rows)
    std = values.std(axis=1)
    const = std == 0.0
    out[const] = values[const, 0]
    act = np.flatnonzero(~const)
    if act.size == 0:
        return out
    v = values[act]
    h = bandwidth_scale * 1.06 * std[act] * n ** (-0.2)
    lo = v.min(axis=1) - 3.0 * h
    hi = v.max(axis=1) + 3.0 * h
    delta = (hi - lo) / (m - 1)
    # linear binning: each sample splits its mass between flanking grid points
    pos = (v - lo[:, None]) / delta[:, None]
    i0 = np.floor(pos).astype(np.int64)
    i0 = np.clip(i0, 0, m - 2)
    w1 = pos - i0
    hist = np.zeros((act.size, m))
    rows = np.repeat(np.arange(act.size), n)
    np.add.at(hist, (rows, i0.ravel()), (1.0 - w1).ravel())
    np.add.at(hist, (rows, (i0 + 1).ravel()), w1.ravel())
    # circular Gaussian kernel sampled on grid offsets
    j = np.arange(m)
    dcirc = np.minimum(j, m - j)[None, :] * delta[:, None]
    kern = np.exp(-0.5 * (dcirc / h[:, None]) ** 2)
    dens = np.fft.irfft(np.fft.rfft(hist, axis=1) * np.fft.rfft(kern, axis=1), n=m, axis=1)
    # near-exact ties resolve to the smallest grid value
    peak = dens.max(axis=1, keepdims=True)
    idx = np.argmax(dens >= peak * (1.0 - 1e-9), axis=1)
    out[act] = lo + idx * delta
    return out


def kde_mode(samples, cfg: FftAggConfig = FftAggConfig()) -> float:
    """Grid point of maximum kernel density; all-equal samples short-circuit."""
    v = np.asarray(samples, dtype=np.float64).reshape(1, -1)
    if v.shape[1] < 1:
        raise ValueError("need at least one sample")
    return float(_fft_mode_batch(v, cfg.grid_bins, cfg.bandwidth_scale)[0])


def fft_aggregate(updates, cfg: FftAggConfig = FftAggConfig()) -> np.ndarray:
    """Coordinate-wise kde_mode across the clients' update vectors."""
    stack = np.stack([np.asarray(u, dtype=np.float64) for u in updates])
    if stack.shape[0] < 1:
        raise ValueError("need at least one update")
    return _fft_mode_batch(stack.T, cfg.grid_bins, cfg.bandwidth_scale)
