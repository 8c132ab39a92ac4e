import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from amrec.data import FeatureMatrix, ModelParams
from amrec.model import ModelKind, item_latent, item_latents, predict, predict_perturbed


def toy():
    P = np.array([[1.0, 2.0]])
    Q = np.array([[3.0, 4.0]])
    E = np.array([[1.0, 0, 0], [0, 1.0, 0]])
    return ModelParams(P, Q, E), FeatureMatrix(np.array([[5.0, 6.0, 7.0]]))


def test_item_latent():
    params, feats = toy()
    np.testing.assert_array_equal(item_latent(params, 0, feats), [8, 10])
    np.testing.assert_array_equal(item_latent(params, 0, feats, cold=True), [5, 6])
    zero = FeatureMatrix(np.zeros((1, 3)))
    np.testing.assert_array_equal(item_latent(params, 0, zero), [3, 4])


def test_predict_kinds():
    params, feats = toy()
    assert predict(params, 0, 0, feats, ModelKind.VBPR_ADJ) == 28.0
    assert predict(params, 0, 0, feats, "MF") == 11.0
    assert predict(params, 0, 0, feats, "DUIF") == 1 * 5 + 2 * 6
    params.P[:] = 0
    for kind in ModelKind:
        assert predict(params, 0, 0, feats, kind) == 0.0


def test_predict_perturbed():
    params, feats = toy()
    assert predict_perturbed(params, 0, 0, feats, np.zeros(3)) == predict(params, 0, 0, feats)
    assert predict_perturbed(params, 0, 0, feats, [1.0, 0, 0]) == 29.0
    with pytest.raises(ValueError):
        predict_perturbed(params, 0, 0, feats, [1.0, 0])


def test_vectorised_matches_scalar():
    rng = np.random.default_rng(0)
    params = ModelParams(rng.normal(size=(3, 4)), rng.normal(size=(5, 4)), rng.normal(size=(4, 6)))
    feats = FeatureMatrix(rng.normal(size=(5, 6)))
    cold = np.array([False, True, False, False, True])
    for kind in ModelKind:
        Z = item_latents(params, feats, kind, cold)
        for u in range(3):
            for i in range(5):
                assert Z[i] @ params.P[u] == pytest.approx(predict(params, u, i, feats, kind, cold=cold[i]))


small = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(K=st.integers(1, 4), D=st.integers(1, 5), data=st.data())
def test_perturbation_is_affine(K, D, data):
    vec = lambda *shape: data.draw(arrays(np.float64, shape, elements=small))
    params = ModelParams(vec(1, K), vec(1, K), vec(K, D))
    feats = FeatureMatrix(vec(1, D))
    delta = vec(D)
    diff = predict_perturbed(params, 0, 0, feats, delta) - predict(params, 0, 0, feats)
    assert diff == pytest.approx(params.P[0] @ params.E @ delta, abs=1e-9)


def test_cold_ignores_id_and_mf_ignores_features():
    params, feats = toy()
    before = predict(params, 0, 0, feats, cold=True)
    params.Q[0] = [100.0, -50.0]
    assert predict(params, 0, 0, feats, cold=True) == before
    mf = predict(params, 0, 0, feats, "MF")
    assert predict(params, 0, 0, FeatureMatrix(np.full((1, 3), 9.0)), "MF") == mf
