"""Symmetric-definite generalized eigensolver and detector selection.

Solves S v = lambda N v for a symmetric PSD signal matrix S and a symmetric
positive definite noise matrix N.  The vectors v are the stationary points of
the quotient v^T S v / v^T N v, so the top ones are the directions where the
signal-to-noise ratio is largest.

The solve reduces to a standard symmetric eigenproblem: factor N = L L^T,
find the eigenpairs (lambda, u) of L^{-1} S L^{-T}, and map back through
v = L^{-T} u.  This keeps everything in well-behaved dense symmetric
routines and makes the returned vectors N-orthonormal: v_p^T N v_q = [p==q].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

_SYM_TOL = 1e-8


class NotPositiveDefiniteError(ValueError):
    """The denominator matrix has no Cholesky factor.

    Typically means the class moment is rank-deficient; callers should raise
    the ridge strength gamma and retry.
    """


@dataclass
class EigenPairSet:
    """Full descending spectrum of one matrix pair.

    eigenvalues: (d,) descending.
    vectors: (d, d); column q is the eigenvector for eigenvalues[q],
        normalized so that v^T N v = 1.
    numerator/denominator: class labels of the pair (0 when not class-bound).
    """

    eigenvalues: np.ndarray
    vectors: np.ndarray
    numerator: int
    denominator: int

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]


@dataclass
class Detector:
    """One retained eigenvector with its selection context."""

    vector: np.ndarray
    eigenvalue: float
    pair: tuple[int, int]
    rank: int  # 1-based position in the descending spectrum of its pair


def _check_symmetric(M: np.ndarray, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    scale = max(1.0, float(np.abs(M).max()))
    if float(np.abs(M - M.T).max()) > _SYM_TOL * scale:
        raise ValueError(f"{name} is not symmetric within tolerance")
    return 0.5 * (M + M.T)


def solve_pair(S: np.ndarray, N: np.ndarray, pair: tuple[int, int] = (0, 0)) -> EigenPairSet:
    """Solve S v = lambda N v via Cholesky reduction.

    Returns the full spectrum in descending eigenvalue order.  Raises
    NotPositiveDefiniteError when N has no Cholesky factor.
    """
    S = _check_symmetric(S, "S")
    N = _check_symmetric(N, "N")
    if S.shape != N.shape:
        raise ValueError(f"shape mismatch: {S.shape} vs {N.shape}")
    try:
        L = np.linalg.cholesky(N)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(
            "denominator matrix is not positive definite; increase gamma"
        ) from exc
    # M = L^{-1} S L^{-T}, computed by two triangular solves
    half = solve_triangular(L, S, lower=True)
    M = solve_triangular(L, half.T, lower=True).T
    M = 0.5 * (M + M.T)
    evals, U = np.linalg.eigh(M)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    U = U[:, order]
    # back-transform: v = L^{-T} u, which makes v^T N v = u^T u = 1
    V = solve_triangular(L, U, lower=True, trans="T")
    return EigenPairSet(eigenvalues=evals, vectors=V, numerator=pair[0], denominator=pair[1])


def solve_quotient(S: np.ndarray, N: np.ndarray, pair: tuple[int, int] = (0, 0)) -> EigenPairSet:
    """Generic signal/noise quotient solver; same contract as solve_pair.

    Entry point for plugging in arbitrary signal and noise matrices rather
    than class-conditional moments.
    """
    return solve_pair(S, N, pair=pair)


def canonical_sign(v: np.ndarray, numerator_data=None) -> float:
    """Sign making the mean projection over the numerator class nonnegative.

    Ties (mean exactly zero) fall back to the sign of the mean cubed
    projection; if that is also zero the sign is left as +1.  Both statistics
    are preserved by invertible linear input transforms, so canonicalized
    detectors are comparable across re-parameterizations of the data.
    Without numerator data, falls back to the sign of the largest-magnitude
    coordinate (not transform-invariant; fine for standalone use).
    """
    if numerator_data is None:
        idx = int(np.argmax(np.abs(v)))
        return -1.0 if v[idx] < 0 else 1.0
    proj = np.asarray(numerator_data @ v, dtype=np.float64).ravel()
    m1 = float(proj.mean())
    if m1 != 0.0:
        return 1.0 if m1 > 0 else -1.0
    m3 = float((proj**3).mean())
    if m3 != 0.0:
        return 1.0 if m3 > 0 else -1.0
    return 1.0


def select_detectors(
    eigs: EigenPairSet,
    theta: float,
    m_max: int,
    numerator_data=None,
) -> list[Detector]:
    """Keep the top eigenvectors whose eigenvalue clears the threshold.

    Returns the first min(m_max, #{lambda >= theta}) detectors in descending
    eigenvalue order, each sign-canonicalized against the numerator-class
    data when given.  An empty list is a valid outcome.
    """
    if theta < 0:
        raise ValueError(f"theta must be >= 0, got {theta}")
    if m_max < 1:
        raise ValueError(f"m_max must be >= 1, got {m_max}")
    n_keep = min(m_max, int(np.sum(eigs.eigenvalues >= theta)))
    out = []
    for q in range(n_keep):
        v = eigs.vectors[:, q].copy()
        v *= canonical_sign(v, numerator_data)
        out.append(
            Detector(
                vector=v,
                eigenvalue=float(eigs.eigenvalues[q]),
                pair=(eigs.numerator, eigs.denominator),
                rank=q + 1,
            )
        )
    return out


def dump_detectors(detectors: list[Detector], path) -> None:
    """Plain-text bank dump: one row per detector, ``i j rank lambda v...``."""
    with open(path, "w") as fh:
        for det in detectors:
            head = f"{det.pair[0]} {det.pair[1]} {det.rank} {det.eigenvalue:.17g}"
            body = " ".join(f"{x:.17g}" for x in det.vector)
            fh.write(f"{head} {body}\n")


def parse_detector_dump(path) -> list[Detector]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) < 5:
                raise ValueError(f"{path}:{lineno}: malformed detector row")
            i, j, rank = int(parts[0]), int(parts[1]), int(parts[2])
            lam = float(parts[3])
            vec = np.array([float(p) for p in parts[4:]], dtype=np.float64)
            out.append(Detector(vector=vec, eigenvalue=lam, pair=(i, j), rank=rank))
    return out
