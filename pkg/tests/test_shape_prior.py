import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from aerotrack.exceptions import ConfigError, DataError, ParseError, PreconditionError, ValidationError
from aerotrack.fleet import (
    CATEGORIES,
    body_keypoints,
    check_shape_vector,
    load_models,
    save_models,
    synthetic_fleet,
)
from aerotrack.shape_prior import ShapePrior, build_prior, classify_type, generate_shape, prior_from_fleet


def base_shape():
    return body_keypoints(4.6, 1.8, 1.45, 0.25, 0.2, 0.42).reshape(-1)


def eigh_residual(X, k):
    """Independent PCA route: eigen-decomposition of the sample covariance."""
    C = np.cov(X, rowvar=False)
    w, V = np.linalg.eigh(C)
    V = V[:, np.argsort(w)[::-1][:k]]
    Xc = X - X.mean(axis=0)
    R = Xc - Xc @ V @ V.T
    return float((R**2).sum())


def test_identical_shapes_k1():
    s = base_shape()
    prior = build_prior(np.tile(s, (3, 1)), k=1)
    np.testing.assert_allclose(prior.mean_, s, atol=1e-12)
    np.testing.assert_allclose(prior.params_, 0.0, atol=1e-12)


def test_single_direction_of_variation():
    s = base_shape()
    d = np.zeros_like(s)
    d[0::3] = 0.1 * s[0::3]  # stretch along x keeps the shape valid
    prior = build_prior(np.array([s + d, s - d, s]), k=1)
    w = prior.W[:, 0]
    assert abs(abs(w @ d) / np.linalg.norm(d) - 1.0) < 1e-12
    np.testing.assert_allclose(np.sort(np.abs(prior.params_[:, 0])), [0.0, np.linalg.norm(d), np.linalg.norm(d)], atol=1e-12)


def test_prior_invariants(prior):
    W = prior.W
    np.testing.assert_allclose(W.T @ W, np.eye(prior.k), atol=1e-12)
    np.testing.assert_allclose(prior.params_.mean(axis=0), 0.0, atol=1e-9)
    assert np.all(np.diff(prior.explained_variance_ratio_) <= 0)
    for lab, bt in prior.templates_.items():
        np.testing.assert_allclose(bt, prior.params_[prior.labels_ == lab].mean(axis=0), atol=1e-12)


def test_fleet_residual_matches_eigendecomposition(fleet):
    X = np.array([m.shape_vector for m in fleet])
    p5 = build_prior(X, k=5)
    p4 = build_prior(X, k=4)
    assert p5.reconstruction_residual() <= p4.reconstruction_residual()
    assert abs(p5.reconstruction_residual() - eigh_residual(X, 5)) <= 1e-9 * max(1.0, eigh_residual(X, 5))


def test_residual_monotone_in_k(fleet):
    X = np.array([m.shape_vector for m in fleet[:40]])
    res = [build_prior(X, k=k).reconstruction_residual() for k in range(1, 20)]
    assert all(b <= a + 1e-12 for a, b in zip(res, res[1:]))


def test_top_k_beats_random_bases(fleet, rng):
    X = np.array([m.shape_vector for m in fleet[:50]])
    prior = build_prior(X, k=3)
    Xc = X - X.mean(axis=0)
    for _ in range(20):
        Q, _ = np.linalg.qr(rng.normal(size=(99, 3)))
        assert prior.reconstruction_residual() <= float(((Xc - Xc @ Q @ Q.T) ** 2).sum())


def test_generate_identities(prior, rng):
    np.testing.assert_allclose(generate_shape(prior, np.zeros(prior.k)), prior.mean_)
    b1, b2 = rng.normal(size=(2, prior.k))
    np.testing.assert_allclose(
        generate_shape(prior, b1) + generate_shape(prior, b2) - generate_shape(prior, np.zeros(prior.k)),
        generate_shape(prior, b1 + b2),
        atol=1e-12,
    )
    np.testing.assert_allclose(prior.transform(generate_shape(prior, b1)[None, :])[0], b1, atol=1e-9)
    with pytest.raises(DataError):
        generate_shape(prior, np.zeros(prior.k + 1))


def test_training_reconstruction_residual(fleet, prior):
    X = np.array([m.shape_vector for m in fleet])
    rec = np.array([generate_shape(prior, b) for b in prior.params_])
    assert float(((X - rec) ** 2).sum()) == pytest.approx(prior.reconstruction_residual(), rel=1e-9)
    assert prior.reconstruction_residual(X) == pytest.approx(prior.reconstruction_residual(), rel=1e-9)


def test_classify_exact_and_template(prior):
    idx, _ = prior.kneighbors(prior.params_[17], 1)
    assert idx[0] == 17
    assert classify_type(prior, prior.params_[17], 1)[0] == prior.labels_[17]
    for cat in CATEGORIES:
        label, votes = classify_type(prior, prior.templates_[cat], 5)
        # oracle: exhaustive distances
        d = np.linalg.norm(prior.params_ - prior.templates_[cat], axis=1)
        nearest = list(prior.labels_[np.argsort(d, kind="stable")[:5]])
        assert votes == {lab: nearest.count(lab) for lab in set(nearest)}
        assert nearest.count(cat) >= 3
        assert label == cat


def test_classify_tie_break():
    s = base_shape()
    d = np.zeros_like(s)
    d[0::3] = 0.05 * s[0::3]
    prior = build_prior(np.array([s + d, s - d, s]), labels=["van", "coupe", "sedan"], k=1)
    # b = 0 is equidistant from the two outer models; "sedan" sits at distance 0
    assert prior.classify(np.zeros(1), 1)[0] == "sedan"
    label, votes = prior.classify(np.zeros(1), 2)
    assert label == "sedan" and votes == {"sedan": 1, prior.labels_[prior.kneighbors(np.zeros(1), 2)[0][1]]: 1}
    # two-point training set at equal distance: smaller mean distance ties, so the label order decides
    two = build_prior(np.array([s + d, s - d, s + d, s - d]), labels=["van", "coupe", "van", "coupe"], k=1)
    assert two.classify(np.zeros(1), 4)[0] == "coupe"


def test_kneighbors_preconditions(prior):
    with pytest.raises(PreconditionError):
        prior.kneighbors(np.zeros(prior.k), len(prior.params_) + 1)


def test_build_errors(fleet):
    X = np.array([m.shape_vector for m in fleet[:5]])
    with pytest.raises(ConfigError):
        build_prior(X, k=5)
    with pytest.raises(DataError):
        build_prior(X[:, :90], k=2)
    bad = X.copy()
    bad[0, 3 * 28 + 2] = 0.2  # lift a wheel contact off the ground
    with pytest.raises(ValidationError):
        build_prior(bad, k=2)


def test_sklearn_estimator_protocol(fleet):
    X = np.array([m.shape_vector for m in fleet[:30]])
    y = [m.category for m in fleet[:30]]
    est = clone(ShapePrior(n_components=3))
    B = est.fit_transform(X, y)
    assert B.shape == (30, 3)
    assert list(est.predict(B[:3])) == [est.classify(b)[0] for b in B[:3]]
    assert float(((X - est.inverse_transform(B)) ** 2).sum()) == pytest.approx(est.reconstruction_residual(), rel=1e-9)


def test_save_load_exact_and_deterministic(prior, tmp_path):
    prior.save(tmp_path / "a.npz")
    prior.save(tmp_path / "b.npz")
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
    loaded = ShapePrior.load(tmp_path / "a.npz")
    np.testing.assert_array_equal(loaded.mean_, prior.mean_)
    np.testing.assert_array_equal(loaded.components_, prior.components_)
    np.testing.assert_array_equal(loaded.params_, prior.params_)
    assert list(loaded.labels_) == list(prior.labels_)
    for lab in prior.templates_:
        np.testing.assert_array_equal(loaded.templates_[lab], prior.templates_[lab])


def test_model_file_round_trip(fleet, tmp_path):
    save_models(fleet[:10], tmp_path / "m.json")
    models = load_models(tmp_path / "m.json")
    assert [m.name for m in models] == [m.name for m in fleet[:10]]
    np.testing.assert_array_equal(models[3].keypoints, fleet[3].keypoints)
    (tmp_path / "bad.json").write_text('[{"name": "x"}]')
    with pytest.raises(ParseError):
        load_models(tmp_path / "bad.json")


def test_prior_from_fleet_templates(fleet):
    p = prior_from_fleet(fleet, k=5)
    assert sorted(p.templates_) == sorted(CATEGORIES)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(6, 50))
def test_pca_optimality_small_fleets(seed, n):
    X = np.array([m.shape_vector for m in synthetic_fleet(n, seed)])
    k = min(5, n - 1)
    p = build_prior(X, k=k)
    assert abs(p.reconstruction_residual() - eigh_residual(X, k)) <= 1e-9 * max(1.0, eigh_residual(X, k))


def test_synthetic_fleet_shapes_are_valid(fleet):
    for m in fleet:
        check_shape_vector(m.shape_vector, name=m.name)
