"""Shared synthetic task builders.

Every generator is a pure function of its seeds, so expected values frozen in
the tests stay valid.  Class-conditional second moments of the two-class
tasks are constructed analytically so oracle directions are known in closed
form.
"""

import gzip
import struct

import numpy as np
import pytest

from gevlearn.ingest import LabeledDataset


def write_idx_pair(tmp_path, images, labels, gz=False):
    """Write a fabricated idx image/label file pair; returns the two paths."""
    n, h, w = images.shape
    img_bytes = struct.pack(">BBBB", 0, 0, 8, 3) + struct.pack(">III", n, h, w)
    img_bytes += images.astype(np.uint8).tobytes()
    lab_bytes = struct.pack(">BBBB", 0, 0, 8, 1) + struct.pack(">I", n)
    lab_bytes += labels.astype(np.uint8).tobytes()
    ip, lp = tmp_path / "imgs.idx", tmp_path / "labs.idx"
    if gz:
        img_bytes = gzip.compress(img_bytes)
        lab_bytes = gzip.compress(lab_bytes)
    ip.write_bytes(img_bytes)
    lp.write_bytes(lab_bytes)
    return ip, lp


def make_gaussian_axes_task(n_per_class: int, seed: int, a: float = 1.98) -> LabeledDataset:
    """Two Gaussian classes whose second moments are diag(4,1) and diag(1,4).

    Class 1 has mean (a, 0) and covariance diag(4-a^2, 1); class 2 is the
    coordinate swap.  E[x x^T] = mu mu^T + cov gives the diagonal moments
    exactly, and for a close to 2 the classes are well separated.
    """
    rng = np.random.default_rng(seed)
    cov1 = np.diag([4.0 - a * a, 1.0])
    cov2 = np.diag([1.0, 4.0 - a * a])
    x1 = rng.multivariate_normal([a, 0.0], cov1, size=n_per_class)
    x2 = rng.multivariate_normal([0.0, a], cov2, size=n_per_class)
    X = np.vstack([x1, x2])
    y = np.r_[np.ones(n_per_class, dtype=int), 2 * np.ones(n_per_class, dtype=int)]
    perm = rng.permutation(len(y))
    return LabeledDataset(X=X[perm], y=y[perm])


def make_rings_task(n_per_class: int, seed: int, jitter: float = 0.1) -> LabeledDataset:
    """Radially separable, linearly confusable: radii {1,3} vs radius 2.

    Both classes are angle-uniform, so both second moments are multiples of
    the identity and no linear projection carries class information; a
    radial (kernel) view separates the interleaved rings easily.
    """
    rng = np.random.default_rng(seed)

    def ring(n, r):
        th = rng.uniform(0, 2 * np.pi, n)
        rr = r + jitter * rng.normal(size=n)
        return np.c_[rr * np.cos(th), rr * np.sin(th)]

    half = n_per_class // 2
    x1 = np.vstack([ring(half, 1.0), ring(n_per_class - half, 3.0)])
    x2 = ring(n_per_class, 2.0)
    X = np.vstack([x1, x2])
    y = np.r_[np.ones(n_per_class, dtype=int), 2 * np.ones(n_per_class, dtype=int)]
    perm = rng.permutation(len(y))
    return LabeledDataset(X=X[perm], y=y[perm])


def make_full_rank_gaussian(n: int, d: int, k: int, param_seed: int, noise_seed: int,
                            mean_scale: float = 1.0) -> LabeledDataset:
    """k Gaussian classes with random full-rank second moments."""
    prng = np.random.default_rng(param_seed)
    means, covs = [], []
    for _ in range(k):
        means.append(prng.normal(scale=mean_scale, size=d))
        A = prng.normal(size=(d, d))
        covs.append(A @ A.T / d + 0.5 * np.eye(d))
    rng = np.random.default_rng(noise_seed)
    per = n // k
    Xs, ys = [], []
    for m in range(k):
        Xs.append(rng.multivariate_normal(means[m], covs[m], size=per))
        ys.append(np.full(per, m + 1))
    X = np.vstack(Xs)
    y = np.concatenate(ys)
    perm = rng.permutation(len(y))
    return LabeledDataset(X=X[perm], y=y[perm])


def make_many_class_task(n_per_class: int, d: int, k: int, param_seed: int,
                         noise_seed: int, mean_scale: float = 0.8) -> LabeledDataset:
    """Harder many-class variant used for the ensemble experiments."""
    prng = np.random.default_rng(param_seed)
    means = [prng.normal(scale=mean_scale, size=d) for _ in range(k)]
    covs = []
    for _ in range(k):
        A = prng.normal(size=(d, d))
        covs.append(A @ A.T / d + 0.3 * np.eye(d))
    rng = np.random.default_rng(noise_seed)
    Xs, ys = [], []
    for m in range(k):
        Xs.append(rng.multivariate_normal(means[m], covs[m], size=n_per_class))
        ys.append(np.full(n_per_class, m + 1))
    X = np.vstack(Xs)
    y = np.concatenate(ys)
    perm = rng.permutation(len(y))
    return LabeledDataset(X=X[perm], y=y[perm])


def random_spd(d: int, rng: np.random.Generator, floor: float = 0.1) -> np.ndarray:
    A = rng.normal(size=(d, d))
    return A @ A.T / d + floor * np.eye(d)


def random_invertible(d: int, seed: int, cond: float = 50.0) -> np.ndarray:
    """Random matrix with the given condition number (geomspaced spectrum)."""
    rng = np.random.default_rng(seed)
    U, _ = np.linalg.qr(rng.normal(size=(d, d)))
    V, _ = np.linalg.qr(rng.normal(size=(d, d)))
    return U @ np.diag(np.geomspace(1.0, cond, d)) @ V.T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
