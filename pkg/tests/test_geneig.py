import numpy as np
import pytest

from gevlearn import geneig, moments
from gevlearn.geneig import NotPositiveDefiniteError

from conftest import random_invertible, random_spd


def brute_force_eigenvalues(S, N):
    """Dense-inverse oracle: eigenvalues of N^{-1} S, sorted descending."""
    vals = np.linalg.eigvals(np.linalg.solve(N, S))
    return np.sort(vals.real)[::-1]


def check_invariants(S, N, eigs):
    d = S.shape[0]
    s_norm = np.linalg.norm(S, 2)
    n_norm = np.linalg.norm(N, 2)
    for q in range(d):
        v = eigs.vectors[:, q]
        lam = eigs.eigenvalues[q]
        resid = np.linalg.norm(S @ v - lam * N @ v)
        assert resid <= 1e-8 * (s_norm + lam * n_norm)
        assert abs(v @ N @ v - 1.0) <= 1e-8
    G = eigs.vectors.T @ N @ eigs.vectors
    off = G - np.diag(np.diag(G))
    assert np.abs(off).max() <= 1e-8


def test_identity_pair():
    eigs = geneig.solve_pair(np.eye(3), np.eye(3))
    np.testing.assert_allclose(eigs.eigenvalues, np.ones(3), atol=1e-12)
    np.testing.assert_allclose(eigs.vectors.T @ eigs.vectors, np.eye(3), atol=1e-10)


def test_diagonal_pair():
    eigs = geneig.solve_pair(np.diag([4.0, 1.0]), np.eye(2))
    np.testing.assert_allclose(eigs.eigenvalues, [4.0, 1.0], atol=1e-12)
    assert abs(abs(eigs.vectors[0, 0]) - 1.0) <= 1e-10
    assert abs(abs(eigs.vectors[1, 1]) - 1.0) <= 1e-10


def test_random_pair_against_oracle(rng):
    d = 8
    S = random_spd(d, rng)
    N = random_spd(d, rng)
    eigs = geneig.solve_pair(S, N)
    check_invariants(S, N, eigs)
    np.testing.assert_allclose(eigs.eigenvalues, brute_force_eigenvalues(S, N), atol=1e-8)
    assert np.all(np.diff(eigs.eigenvalues) <= 1e-12)  # descending


def test_cholesky_failure_signals():
    S = np.eye(2)
    N = np.diag([1.0, -1.0])
    with pytest.raises(NotPositiveDefiniteError):
        geneig.solve_pair(S, N)


def test_rejects_asymmetric():
    M = np.array([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(ValueError):
        geneig.solve_pair(M, np.eye(2))


def test_maximizer_property(rng):
    # Rayleigh quotient at random unit vectors never beats the top eigenvalue
    d = 6
    S = random_spd(d, rng)
    N = random_spd(d, rng)
    eigs = geneig.solve_pair(S, N)
    top = eigs.eigenvalues[0]
    V = rng.normal(size=(1000, d))
    quot = np.einsum("nd,de,ne->n", V, S, V) / np.einsum("nd,de,ne->n", V, N, V)
    assert quot.max() <= top + 1e-8


def test_swap_property(rng):
    d = 7
    S = random_spd(d, rng)
    N = random_spd(d, rng)
    fwd = geneig.solve_pair(S, N).eigenvalues
    bwd = geneig.solve_pair(N, S).eigenvalues
    np.testing.assert_allclose(fwd * bwd[::-1], np.ones(d), atol=1e-8)


def test_scale_property(rng):
    d = 5
    S = random_spd(d, rng)
    N = random_spd(d, rng)
    c = 3.7
    base = geneig.solve_pair(S, N)
    scaled = geneig.solve_pair(c * S, N)
    np.testing.assert_allclose(scaled.eigenvalues, c * base.eigenvalues, rtol=1e-8)
    # same directions up to sign
    for q in range(d):
        dot = abs(base.vectors[:, q] @ N @ scaled.vectors[:, q])
        assert abs(dot - 1.0) <= 1e-8


def test_solve_quotient_is_alias(rng):
    d = 4
    S = random_spd(d, rng)
    N = random_spd(d, rng)
    a = geneig.solve_pair(S, N)
    b = geneig.solve_quotient(S, N)
    np.testing.assert_array_equal(a.eigenvalues, b.eigenvalues)
    np.testing.assert_array_equal(a.vectors, b.vectors)


def _empirical_pair(X1, X2, gamma=0.0):
    C1 = X1.T @ X1 / len(X1)
    C2 = X2.T @ X2 / len(X2)
    N = moments.regularize(C2, gamma).matrix
    return C1, N


def test_embedding_invariance(rng):
    # projections v.x survive any invertible reparameterization of the inputs
    n, d = 4000, 6
    X1 = rng.normal(size=(n, d)) @ np.diag(np.linspace(1.0, 2.5, d)) + rng.normal(size=d)
    X2 = rng.normal(size=(n, d)) + 0.5
    C1, N = _empirical_pair(X1, X2, gamma=0.0)
    eigs = geneig.solve_pair(C1, N)
    gaps = np.abs(np.diff(eigs.eigenvalues)) / np.abs(eigs.eigenvalues[:-1])
    assert gaps.min() > 1e-3, "test construction needs separated eigenvalues"
    dets = geneig.select_detectors(eigs, theta=0.0, m_max=d, numerator_data=X1)

    A = random_invertible(d, seed=99, cond=80.0)
    C1t, Nt = _empirical_pair(X1 @ A.T, X2 @ A.T, gamma=0.0)
    eigs_t = geneig.solve_pair(C1t, Nt)
    dets_t = geneig.select_detectors(eigs_t, theta=0.0, m_max=d, numerator_data=X1 @ A.T)

    probe = rng.normal(size=(50, d))
    probe_t = probe @ A.T
    for det, det_t in zip(dets, dets_t):
        p = probe @ det.vector
        pt = probe_t @ det_t.vector
        scale = np.abs(p).max()
        # sign canonicalization makes the signed projections agree
        np.testing.assert_allclose(pt, p, atol=1e-6 * scale)


def test_diversity_same_pair(rng):
    # responses of two detectors from one pair are uncorrelated on the
    # denominator class; with gamma=0 this is the empirical correlation
    n, d = 3000, 5
    X1 = rng.normal(size=(n, d)) * np.linspace(1, 3, d)
    X2 = rng.normal(size=(n, d))
    for gamma in (0.0, 0.5):
        C1, N = _empirical_pair(X1, X2, gamma)
        eigs = geneig.solve_pair(C1, N)
        dets = geneig.select_detectors(eigs, theta=0.0, m_max=3, numerator_data=X1)
        for a in range(len(dets)):
            for b in range(a + 1, len(dets)):
                assert abs(dets[a].vector @ N @ dets[b].vector) <= 1e-8
                if gamma == 0.0:
                    corr = np.mean((X2 @ dets[a].vector) * (X2 @ dets[b].vector))
                    assert abs(corr) <= 1e-8


def test_select_thresholding():
    d = 3
    vals = np.array([3.0, 1.2, 0.9])
    eigs = geneig.EigenPairSet(
        eigenvalues=vals, vectors=np.eye(d), numerator=1, denominator=2
    )
    got = geneig.select_detectors(eigs, theta=1.1, m_max=5)
    assert [round(det.eigenvalue, 6) for det in got] == [3.0, 1.2]
    assert [det.rank for det in got] == [1, 2]

    top_only = geneig.select_detectors(eigs, theta=1.1, m_max=1)
    assert len(top_only) == 1 and top_only[0].eigenvalue == 3.0

    everything = geneig.select_detectors(eigs, theta=0.0, m_max=d)
    assert len(everything) == d

    nothing = geneig.select_detectors(eigs, theta=10.0, m_max=d)
    assert nothing == []


def test_select_validates_args():
    eigs = geneig.EigenPairSet(
        eigenvalues=np.array([1.0]), vectors=np.eye(1), numerator=1, denominator=2
    )
    with pytest.raises(ValueError):
        geneig.select_detectors(eigs, theta=-0.5, m_max=1)
    with pytest.raises(ValueError):
        geneig.select_detectors(eigs, theta=0.0, m_max=0)


def test_canonical_sign_flips_negative_mean(rng):
    v = np.array([1.0, 0.0])
    data = rng.normal(size=(200, 2)) - np.array([5.0, 0.0])
    sign = geneig.canonical_sign(v, data)
    assert sign == -1.0
    assert geneig.canonical_sign(-v, data) == 1.0


def test_canonical_sign_tie_breaks_on_third_moment():
    # zero-mean projections, asymmetric tails: cube decides
    data = np.array([[2.0], [-1.0], [-1.0]])
    assert geneig.canonical_sign(np.array([1.0]), data) == 1.0
    assert geneig.canonical_sign(np.array([-1.0]), data) == -1.0


def test_detector_dump_round_trip(tmp_path, rng):
    d = 4
    S = random_spd(d, rng)
    N = random_spd(d, rng)
    eigs = geneig.solve_pair(S, N, pair=(2, 5))
    dets = geneig.select_detectors(eigs, theta=0.0, m_max=3)
    path = tmp_path / "bank.txt"
    geneig.dump_detectors(dets, path)
    back = geneig.parse_detector_dump(path)
    assert len(back) == len(dets)
    for a, b in zip(dets, back):
        assert a.pair == b.pair and a.rank == b.rank
        assert a.eigenvalue == b.eigenvalue  # %.17g round-trips float64
        np.testing.assert_array_equal(a.vector, b.vector)
