"""Class-conditional second-moment estimation.

Accumulates per-class sums of outer products x x^T in a mergeable sketch, so
large datasets can be sharded, accumulated independently, and combined.  All
accumulation happens in float64 regardless of the input dtype; scatter
matrices are kept exactly symmetric by mirroring the upper triangle after
every batched update.

The moments here are raw second moments (no mean centering), and the only
shrinkage offered is the trace-scaled ridge of :func:`regularize`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

_MAGIC = b"GVMM"
_VERSION = 1


class EmptyClassError(ValueError):
    """Raised when a per-class moment is requested for a class with no data."""


def _mirror_upper(m: np.ndarray) -> np.ndarray:
    """Force exact symmetry by reflecting the upper triangle onto the lower."""
    upper = np.triu(m)
    return upper + upper.T - np.diag(np.diag(m))


@dataclass
class MomentStats:
    """Running per-class scatter accumulators.

    scatter has shape (k, d, d); scatter[m-1] is the sum of x x^T over all
    examples accumulated with label m.  counts[m-1] is the number of such
    examples.  Labels are 1-based.
    """

    d: int
    k: int
    scatter: np.ndarray
    counts: np.ndarray

    @classmethod
    def empty(cls, d: int, k: int) -> "MomentStats":
        if d < 1 or k < 1:
            raise ValueError(f"need d >= 1 and k >= 1, got d={d}, k={k}")
        return cls(
            d=d,
            k=k,
            scatter=np.zeros((k, d, d), dtype=np.float64),
            counts=np.zeros(k, dtype=np.int64),
        )

    def copy(self) -> "MomentStats":
        return MomentStats(self.d, self.k, self.scatter.copy(), self.counts.copy())

    @property
    def total_count(self) -> int:
        return int(self.counts.sum())


def accumulate(stats: MomentStats, x: np.ndarray, y: int) -> MomentStats:
    """Add a single labeled example to the accumulator (in place).

    Returns the mutated ``stats`` for chaining.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (stats.d,):
        raise ValueError(f"expected feature vector of dim {stats.d}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite feature values")
    y = int(y)
    if not 1 <= y <= stats.k:
        raise ValueError(f"label {y} outside 1..{stats.k}")
    # outer(x, x) is exactly symmetric entrywise, so symmetry is preserved
    stats.scatter[y - 1] += np.outer(x, x)
    stats.counts[y - 1] += 1
    return stats


def accumulate_batch(stats: MomentStats, X, y: np.ndarray) -> MomentStats:
    """Add a batch of rows at once.  Accepts dense arrays or CSR matrices."""
    y = np.asarray(y)
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"row count {X.shape[0]} != label count {y.shape[0]}")
    if X.shape[1] != stats.d:
        raise ValueError(f"expected width {stats.d}, got {X.shape[1]}")
    if y.size and (y.min() < 1 or y.max() > stats.k):
        raise ValueError(f"labels outside 1..{stats.k}")
    sparse = sp.issparse(X)
    if sparse:
        if not np.all(np.isfinite(X.data)):
            raise ValueError("non-finite feature values")
    else:
        X = np.asarray(X, dtype=np.float64)
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite feature values")
    for m in range(1, stats.k + 1):
        mask = y == m
        if not mask.any():
            continue
        rows = X[mask]
        if sparse:
            prod = np.asarray((rows.T @ rows).todense(), dtype=np.float64)
        else:
            prod = rows.T @ rows
        stats.scatter[m - 1] = _mirror_upper(stats.scatter[m - 1] + prod)
        stats.counts[m - 1] += int(mask.sum())
    return stats


def merge(a: MomentStats, b: MomentStats) -> MomentStats:
    """Fieldwise sum of two accumulators; associative and commutative."""
    if (a.d, a.k) != (b.d, b.k):
        raise ValueError(f"shape mismatch: ({a.d},{a.k}) vs ({b.d},{b.k})")
    return MomentStats(a.d, a.k, a.scatter + b.scatter, a.counts + b.counts)


def finalize(stats: MomentStats, m: int) -> np.ndarray:
    """Return the class-m second-moment estimate scatter_m / count_m."""
    if not 1 <= m <= stats.k:
        raise ValueError(f"label {m} outside 1..{stats.k}")
    n_m = int(stats.counts[m - 1])
    if n_m == 0:
        raise EmptyClassError(f"class {m} has no examples")
    return stats.scatter[m - 1] / n_m


@dataclass(frozen=True)
class RegularizedMoment:
    """A second moment with a trace-scaled ridge added to the diagonal."""

    matrix: np.ndarray
    source_class: int
    gamma: float


def regularize(C: np.ndarray, gamma: float, source_class: int = 0) -> RegularizedMoment:
    """Return C + (gamma/d) * trace(C) * I.

    gamma is unitless: the ridge is gamma times the average eigenvalue of C,
    so the amount of regularization follows the scale of the data.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"expected square matrix, got shape {C.shape}")
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    d = C.shape[0]
    ridge = (gamma / d) * float(np.trace(C))
    return RegularizedMoment(matrix=C + ridge * np.eye(d), source_class=source_class, gamma=gamma)


def save_snapshot(stats: MomentStats, path) -> None:
    """Write a moment snapshot.

    Layout: magic ``GVMM``, uint32 version, uint32 d, uint32 k, then per class
    a uint64 count followed by the row-major upper triangle of the scatter as
    little-endian float64.  Round-trips bit-exactly.
    """
    iu, ju = np.triu_indices(stats.d)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", _VERSION, stats.d, stats.k))
        for m in range(stats.k):
            fh.write(struct.pack("<Q", int(stats.counts[m])))
            tri = np.ascontiguousarray(stats.scatter[m][iu, ju], dtype="<f8")
            fh.write(tri.tobytes())


def load_snapshot(path) -> MomentStats:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"not a moment snapshot (magic {magic!r})")
        version, d, k = struct.unpack("<III", fh.read(12))
        if version != _VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        stats = MomentStats.empty(d, k)
        iu, ju = np.triu_indices(d)
        ntri = len(iu)
        for m in range(k):
            (count,) = struct.unpack("<Q", fh.read(8))
            tri = np.frombuffer(fh.read(8 * ntri), dtype="<f8")
            mat = np.zeros((d, d))
            mat[iu, ju] = tri
            mat[ju, iu] = tri
            stats.scatter[m] = mat
            stats.counts[m] = count
    return stats
