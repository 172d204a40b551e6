import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ecdiscovery.embed_viz import embedding_to_csv, pca_project
from ecdiscovery.errors import ValidationError


def correlated(n=60, m=6, seed=0):
    rng = np.random.default_rng(seed)
    scales = np.array([5.0, 3.0, 1.5, 0.7, 0.3, 0.1])[:m]
    Q, _ = np.linalg.qr(rng.normal(size=(m, m)))
    return (rng.normal(size=(n, m)) * scales) @ Q.T + 4.0


def test_matches_eigendecomposition_oracle():
    X = correlated()
    emb = pca_project(X, 3)
    C = np.cov(X, rowvar=False)
    w, V = np.linalg.eigh(C)
    order = np.argsort(w)[::-1]
    for i in range(3):
        v = V[:, order[i]]
        assert abs(abs(v @ emb.components[i]) - 1) < 1e-8
        assert emb.explained_variance_ratio[i] == pytest.approx(w[order[i]] / w.sum(), rel=1e-8)


def test_sign_convention_and_orthonormality():
    emb = pca_project(correlated(), 4)
    W = emb.components
    assert np.allclose(W @ W.T, np.eye(4), atol=1e-10)
    for v in W:
        assert v[np.argmax(np.abs(v))] > 0


def test_projection_consistency():
    X = correlated()
    emb = pca_project(X, 2, labels=np.arange(60) % 3)
    assert np.allclose(emb.transform(X), emb.coordinates)
    assert np.allclose(emb.coordinates.mean(0), 0, atol=1e-10)
    # variance of each coordinate equals its eigenvalue
    ev = emb.coordinates.var(0, ddof=1) / np.trace(np.cov(X, rowvar=False))
    assert np.allclose(ev, emb.explained_variance_ratio)


@settings(max_examples=30, deadline=None)
@given(X=arrays(np.float64, st.tuples(st.integers(3, 12), st.integers(2, 6)), elements=st.floats(-10, 10)))
def test_ratios_bounded_and_deterministic(X):
    k = min(2, *X.shape)
    a = pca_project(X, k)
    b = pca_project(X.copy(), k)
    assert np.array_equal(a.coordinates, b.coordinates)
    assert np.all(a.explained_variance_ratio >= 0)
    assert a.explained_variance_ratio.sum() <= 1 + 1e-9


def test_constant_features_give_zero_ratio():
    emb = pca_project(np.ones((5, 3)), 2)
    assert np.all(emb.explained_variance_ratio == 0)


def test_validation_and_csv():
    with pytest.raises(ValidationError):
        pca_project(np.zeros(5))
    with pytest.raises(ValidationError):
        pca_project(np.zeros((1, 3)))
    with pytest.raises(ValidationError):
        pca_project(np.zeros((4, 3)), 4)
    emb = pca_project(correlated(), 2, labels=np.arange(60) % 3 + 1)
    lines = embedding_to_csv(emb).splitlines()
    assert lines[0].startswith("# explained_variance_ratio ")
    assert lines[1] == "label,pc1,pc2"
    assert lines[2].startswith("1,") and len(lines) == 62


def test_constant_matrix_gives_orthonormal_axes():
    # centering leaves a rank-one round-off covariance here
    X = np.full((11, 6), 9.944198715784221)
    emb = pca_project(X, 2)
    assert emb.explained_variance_ratio.sum() <= 1 + 1e-9
    assert np.allclose(emb.components @ emb.components.T, np.eye(2), atol=1e-12)
