"""Randomized cosine features approximating the Gaussian kernel.

The kernel convention is k(x, y) = exp(-||x - y||^2 / (2 sigma^2)), so the
frequency matrix entries are drawn i.i.d. normal with standard deviation
1/sigma.  Inner products of the cosine features then concentrate around the
kernel value at the usual 1/sqrt(D) rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class RffMap:
    d: int
    D: int
    sigma: float
    seed: int
    W: np.ndarray = field(repr=False)  # (D, d)
    b: np.ndarray = field(repr=False)  # (D,)


def sample_map(d: int, D: int, sigma: float, seed: int) -> RffMap:
    """Draw a reproducible cosine feature map of D frequencies."""
    if d < 1:
        raise ValueError(f"input dim must be >= 1, got {d}")
    if D < 1:
        raise ValueError(f"feature count D must be >= 1, got {D}")
    if sigma <= 0:
        raise ValueError(f"bandwidth sigma must be > 0, got {sigma}")
    rng = np.random.default_rng(seed)
    W = rng.normal(0.0, 1.0 / sigma, size=(D, d))
    b = rng.uniform(0.0, 2.0 * np.pi, size=D)
    return RffMap(d=d, D=D, sigma=float(sigma), seed=int(seed), W=W, b=b)


def apply(rmap: RffMap, x) -> np.ndarray:
    """z(x) with z_r = sqrt(2/D) * cos(w_r.x + b_r); entries in [-sqrt(2/D), sqrt(2/D)]."""
    single = x.ndim == 1
    if single:
        x = x.reshape(1, -1)
    if x.shape[1] != rmap.d:
        raise ValueError(f"expected width {rmap.d}, got {x.shape[1]}")
    z = np.sqrt(2.0 / rmap.D) * np.cos(np.asarray(x @ rmap.W.T, dtype=np.float64) + rmap.b)
    return z[0] if single else z


def gaussian_kernel(x: np.ndarray, y: np.ndarray, sigma: float) -> float:
    """Exact kernel value the map approximates."""
    diff = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return float(np.exp(-np.dot(diff, diff) / (2.0 * sigma**2)))
