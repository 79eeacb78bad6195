import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gevlearn.featmap import FeatureLayout, Standardizer, psi
from gevlearn.geneig import Detector


def make_layout(vectors, passthrough=False):
    dets = [
        Detector(vector=np.asarray(v, dtype=float), eigenvalue=2.0, pair=(1, 2), rank=q + 1)
        for q, v in enumerate(vectors)
    ]
    return FeatureLayout(dets, input_dim=len(vectors[0]), passthrough=passthrough)


def test_psi_hand_values():
    assert psi(4.0, 2, 1) == 4.0
    assert psi(4.0, 1, 1) == 2.0
    assert psi(-9.0, 3, -1) == 27.0
    for alpha in (1, 2, 3):
        assert psi(4.0, alpha, -1) == 0.0


def test_psi_validates():
    with pytest.raises(ValueError):
        psi(1.0, 4, 1)
    with pytest.raises(ValueError):
        psi(1.0, 1, 0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-100, 100), st.sampled_from((1, 2, 3)), st.sampled_from((1, -1)))
def test_psi_nonnegative(p, alpha, delta):
    assert psi(p, alpha, delta) >= 0.0


def test_expand_single_detector_ordering():
    layout = make_layout([[1.0, 0.0]])
    out = layout.expand(np.array([4.0, 7.0]))
    np.testing.assert_array_equal(out, [2.0, 4.0, 8.0, 0.0, 0.0, 0.0])

    out_neg = layout.expand(np.array([-4.0, 7.0]))
    np.testing.assert_array_equal(out_neg, [0.0, 0.0, 0.0, 2.0, 4.0, 8.0])

    assert np.array_equal(layout.expand(np.array([0.0, 3.0])), np.zeros(6))


def test_expand_matches_scalar_psi(rng):
    # oracle: the scalar psi path applied entrywise
    vectors = rng.normal(size=(3, 4))
    layout = make_layout(vectors)
    X = rng.normal(size=(20, 4))
    out = layout.expand(X)
    assert out.shape == (20, 18)
    for row, x in zip(out, X):
        for f, v in enumerate(vectors):
            p = float(v @ x)
            for col, (delta, alpha) in enumerate(
                [(1, 1), (1, 2), (1, 3), (-1, 1), (-1, 2), (-1, 3)]
            ):
                assert row[6 * f + col] == pytest.approx(psi(p, alpha, delta), abs=1e-12)


def test_expand_nonneg_and_sparse(rng):
    layout = make_layout(rng.normal(size=(5, 3)))
    X = rng.normal(size=(50, 3))
    out = layout.expand(X)
    assert (out >= 0).all()
    # at most one of the two sign blocks per detector is active
    for f in range(5):
        block = out[:, 6 * f : 6 * f + 6]
        assert ((block[:, :3].sum(axis=1) == 0) | (block[:, 3:].sum(axis=1) == 0)).all()


def test_expand_positive_homogeneity(rng):
    layout = make_layout(rng.normal(size=(2, 3)))
    x = rng.normal(size=3)
    base = layout.expand(x)
    scaled = layout.expand(4.0 * x)
    factors = np.tile([2.0, 4.0, 8.0], 4)
    # scaling by 4 multiplies the alpha/2-power blocks by 4**(alpha/2) exactly
    np.testing.assert_array_equal(scaled, factors * base)

    c = 1.7
    general = layout.expand(c * x)
    expect = np.tile([c**0.5, c, c**1.5], 4) * base
    np.testing.assert_allclose(general, expect, rtol=1e-13)


def test_layout_width_and_validation(rng):
    layout = make_layout(rng.normal(size=(4, 6)))
    assert layout.width == 24
    with pytest.raises(ValueError):
        layout.expand(np.ones((3, 5)))
    with pytest.raises(ValueError):
        FeatureLayout([], input_dim=3)


def test_layout_passthrough(rng):
    vectors = rng.normal(size=(2, 3))
    layout = make_layout(vectors, passthrough=True)
    assert layout.width == 2 * 6 + 3
    X = rng.normal(size=(7, 3))
    out = layout.expand(X)
    np.testing.assert_array_equal(out[:, -3:], X)


def test_layout_immutable(rng):
    layout = make_layout(rng.normal(size=(2, 3)))
    with pytest.raises((ValueError, RuntimeError)):
        layout.projections(np.ones((1, 3)))  # warms nothing; V stays read-only
        layout._V[0, 0] = 5.0


def test_describe_mentions_every_detector(rng):
    layout = make_layout(rng.normal(size=(3, 2)))
    text = layout.describe()
    assert text.count("detector ") == 3
    assert "width 18" in text


def test_standardizer_zero_mean_unit_var(rng):
    X = rng.normal(loc=3.0, scale=2.0, size=(500, 4))
    std = Standardizer.fit(X)
    Z = std.transform(X)
    np.testing.assert_allclose(Z.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(Z.std(axis=0), 1.0, atol=1e-12)


def test_standardizer_constant_feature():
    X = np.ones((10, 2))
    X[:, 1] = np.arange(10)
    std = Standardizer.fit(X)
    Z = std.transform(X)
    assert np.array_equal(Z[:, 0], np.zeros(10))  # centered, scale 1
