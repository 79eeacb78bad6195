"""Nonlinear expansion of detector projections.

Each detector contributes six features per example: the half-rectified
projection raised to powers 1/2, 1, and 3/2, once for each sign.  A linear
classifier over these blocks (plus its bias) realizes a two-piece cubic
polynomial in the square root of the projection magnitude, one piece per
sign of the projection.

Output ordering is fixed for model portability: detectors in bank order;
within a detector the positive-sign block then the negative-sign block; each
block in ascending power order.  The output column of (detector f, sign
delta, power index alpha) is ``6*f + (0 if delta > 0 else 3) + (alpha - 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geneig import Detector

ALPHAS = (1, 2, 3)
DELTAS = (1, -1)
FEATURES_PER_DETECTOR = len(ALPHAS) * len(DELTAS)


def psi(p, alpha: int, delta: int):
    """max(0, delta*p) ** (alpha/2) for alpha in {1,2,3}, delta in {-1,+1}.

    Accepts scalars or arrays.  Half powers are computed as sqrt and
    p*sqrt(p) so results are exact for exactly-representable inputs.
    """
    if alpha not in ALPHAS:
        raise ValueError(f"alpha must be one of {ALPHAS}, got {alpha}")
    if delta not in DELTAS:
        raise ValueError(f"delta must be +1 or -1, got {delta}")
    r = np.maximum(0.0, delta * np.asarray(p, dtype=np.float64))
    if alpha == 1:
        out = np.sqrt(r)
    elif alpha == 2:
        out = r
    else:
        out = r * np.sqrt(r)
    return float(out) if np.isscalar(p) else out


class FeatureLayout:
    """Immutable detector bank plus basis spec defining the expanded features."""

    def __init__(self, detectors: list[Detector], input_dim: int, passthrough: bool = False):
        if not detectors:
            raise ValueError("layout needs at least one detector")
        for det in detectors:
            if det.vector.shape != (input_dim,):
                raise ValueError(
                    f"detector for pair {det.pair} has dim {det.vector.shape[0]}, "
                    f"layout expects {input_dim}"
                )
        self._detectors = tuple(detectors)
        self._input_dim = int(input_dim)
        self._passthrough = bool(passthrough)
        V = np.stack([det.vector for det in detectors]).astype(np.float64)
        V.setflags(write=False)
        self._V = V

    @property
    def detectors(self) -> tuple:
        return self._detectors

    @property
    def input_dim(self) -> int:
        return self._input_dim

    @property
    def passthrough(self) -> bool:
        return self._passthrough

    @property
    def width(self) -> int:
        w = FEATURES_PER_DETECTOR * len(self._detectors)
        return w + self._input_dim if self._passthrough else w

    def projections(self, X) -> np.ndarray:
        """Raw detector responses, shape (n, |F|)."""
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self._input_dim:
            raise ValueError(f"expected width {self._input_dim}, got {X.shape[1]}")
        return np.asarray(X @ self._V.T, dtype=np.float64)

    def expand(self, X) -> np.ndarray:
        """Expanded feature matrix, shape (n, width)."""
        single = X.ndim == 1
        P = self.projections(X)
        n, nf = P.shape
        pos = np.maximum(P, 0.0)
        neg = np.maximum(-P, 0.0)
        spos = np.sqrt(pos)
        sneg = np.sqrt(neg)
        out = np.empty((n, FEATURES_PER_DETECTOR * nf), dtype=np.float64)
        out[:, 0::6] = spos
        out[:, 1::6] = pos
        out[:, 2::6] = pos * spos
        out[:, 3::6] = sneg
        out[:, 4::6] = neg
        out[:, 5::6] = neg * sneg
        if self._passthrough:
            dense = np.asarray(X.todense()) if sp.issparse(X) else np.asarray(X)
            out = np.hstack([out, dense.reshape(n, self._input_dim).astype(np.float64)])
        return out[0] if single else out

    def describe(self) -> str:
        """Human-readable layout dump for debugging."""
        lines = [
            f"input_dim {self._input_dim}",
            f"detectors {len(self._detectors)}",
            f"width {self.width}",
            f"passthrough {int(self._passthrough)}",
            "column layout: 6*f + (0 if delta=+1 else 3) + (alpha-1)",
        ]
        for f, det in enumerate(self._detectors):
            lines.append(
                f"detector {f}: pair ({det.pair[0]},{det.pair[1]}) "
                f"rank {det.rank} eigenvalue {det.eigenvalue:.12g}"
            )
        return "\n".join(lines) + "\n"


def expand(layout: FeatureLayout, x) -> np.ndarray:
    """Module-level convenience wrapper around FeatureLayout.expand."""
    return layout.expand(x)


@dataclass
class Standardizer:
    """Per-feature affine map to zero mean and unit variance on the train set.

    Constant features keep scale 1 so they pass through centered.  This does
    not change what a linear classifier with a bias can represent; it only
    conditions the optimization, since the half-power blocks live on very
    different scales.
    """

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        scale = np.where(std > 0, std, 1.0)
        return cls(mean=mean, scale=scale)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale
