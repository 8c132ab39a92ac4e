import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from amrec.adversary import (attack_instance, batch_item_perturbations, fgm_perturbation,
                             random_perturbation, sign_perturbation)
from amrec.data import FeatureMatrix, ModelParams
from amrec.objective import grad_perturbation, perturbed_instance_loss

TRIPLE = (0, 0, 1)


def cosine(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def random_instance(rng, K, D):
    params = ModelParams(rng.normal(size=(1, K)), rng.normal(size=(2, K)), rng.normal(size=(K, D)))
    return params, FeatureMatrix(rng.normal(size=(2, D)))


class TestFGM:
    def test_hand_cases(self):
        np.testing.assert_allclose(fgm_perturbation([3.0, 4.0], 1.0).delta, [0.6, 0.8])
        np.testing.assert_array_equal(fgm_perturbation([0.0, 0.0], 0.5).delta, [0.0, 0.0])
        np.testing.assert_allclose(fgm_perturbation([0.0, -2.0], 0.5).delta, [0.0, -0.5])

    def test_negative_budget(self):
        with pytest.raises(ValueError):
            fgm_perturbation([1.0], -0.1)

    @settings(max_examples=100, deadline=None)
    @given(g=arrays(np.float64, st.integers(1, 16), elements=st.floats(-1e3, 1e3)),
           eps=st.floats(1e-3, 10), c=st.floats(1e-3, 1e3))
    def test_norm_and_scale_equivariance(self, g, eps, c):
        d = fgm_perturbation(g, eps)
        if np.linalg.norm(g) > 0:
            assert abs(d.norm - eps) < 1e-9 * max(1.0, eps)
            np.testing.assert_allclose(fgm_perturbation(c * g, eps).delta, d.delta, atol=1e-12)
        else:
            assert not d.delta.any()


class TestSign:
    def test_hand_cases(self):
        np.testing.assert_allclose(sign_perturbation([3.0, -4.0, 0.0], 0.1).delta, [0.1, -0.1, 0.0])
        assert not sign_perturbation(np.zeros(3), 0.1).delta.any()
        assert not sign_perturbation([1.0, -2.0], 0.0).delta.any()


class TestRandom:
    def test_norm_and_determinism(self):
        d = random_perturbation(64, 1.0, np.random.default_rng(3))
        assert abs(d.norm - 1.0) < 1e-9
        again = random_perturbation(64, 1.0, np.random.default_rng(3))
        np.testing.assert_array_equal(d.delta, again.delta)

    def test_mean_zero(self):
        rng = np.random.default_rng(0)
        n, dim = 100_000, 4
        draws = np.array([random_perturbation(dim, 1.0, rng).delta for _ in range(n)])
        # each coordinate of a uniform unit vector has variance 1/dim
        sigma = np.sqrt(1.0 / dim / n)
        assert (np.abs(draws.mean(axis=0)) < 3 * sigma).all()


class TestAttackInstance:
    def test_hand_case(self):
        params = ModelParams(np.array([[2.0]]), np.array([[0.5], [0.5]]), np.array([[3.0]]))
        feats = FeatureMatrix(np.array([[1.0], [1.0]]))
        di, dj = attack_instance(params, TRIPLE, feats, 0.1)
        np.testing.assert_allclose(di.delta, [-0.1])
        np.testing.assert_allclose(dj.delta, [0.1])

    def test_zero_user(self):
        rng = np.random.default_rng(1)
        params, feats = random_instance(rng, 3, 4)
        params.P[:] = 0
        di, dj = attack_instance(params, TRIPLE, feats, 0.5)
        assert not di.delta.any() and not dj.delta.any()

    def test_directions(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            K, D = rng.integers(1, 8), rng.integers(2, 12)
            params, feats = random_instance(rng, K, D)
            di, dj = attack_instance(params, TRIPLE, feats, 0.3)
            d = params.E.T @ params.P[0]
            assert cosine(di.delta, d) == pytest.approx(-1.0, abs=1e-6)
            assert cosine(dj.delta, d) == pytest.approx(1.0, abs=1e-6)

    def test_first_order_ascent(self):
        rng = np.random.default_rng(3)
        eps, h = 0.2, 1e-6
        for _ in range(20):
            params, feats = random_instance(rng, 3, 5)
            di, dj = attack_instance(params, TRIPLE, feats, eps)
            g = grad_perturbation(params, TRIPLE, feats)
            base = perturbed_instance_loss(params, TRIPLE, feats, np.zeros(5), np.zeros(5))
            step = perturbed_instance_loss(params, TRIPLE, feats, h * di.delta, h * dj.delta)
            # each block is normalised separately: gain = eps * (|G_i| + |G_j|)
            expected = eps * (np.linalg.norm(g.gamma_i) + np.linalg.norm(g.gamma_j))
            assert (step - base) / h == pytest.approx(expected, rel=1e-4)
            assert expected >= 0


def test_batch_aggregates_repeated_items():
    gi = np.array([[1.0, 0.0], [0.0, 1.0]])
    gj = -gi
    # item 5 is the positive of both triples, so its gradients are summed
    di, dj = batch_item_perturbations(np.array([5, 5]), np.array([7, 8]), gi, gj, 1.0)
    np.testing.assert_allclose(di[0], [np.sqrt(0.5), np.sqrt(0.5)])
    np.testing.assert_allclose(di[1], di[0])
    np.testing.assert_allclose(dj[0], [-1.0, 0.0])
    np.testing.assert_allclose(dj[1], [0.0, -1.0])


def test_brute_force_ball():
    rng = np.random.default_rng(5)
    eps = 0.7
    for dim in (1, 2, 3, 4):
        for _ in range(5):
            gamma = rng.normal(size=dim)
            best = fgm_perturbation(gamma, eps).delta @ gamma
            x = rng.normal(size=(10_000, dim))
            x *= (eps * rng.uniform(size=(10_000, 1)) ** (1 / dim)) / np.linalg.norm(x, axis=1, keepdims=True)
            assert (x @ gamma).max() <= best + 1e-6


def test_batch_matches_single_instance():
    rng = np.random.default_rng(4)
    params, feats = random_instance(rng, 3, 4)
    g = grad_perturbation(params, TRIPLE, feats)
    di, dj = batch_item_perturbations(np.array([0]), np.array([1]), g.gamma_i[None], g.gamma_j[None], 0.3)
    a, b = attack_instance(params, TRIPLE, feats, 0.3)
    np.testing.assert_allclose(di[0], a.delta)
    np.testing.assert_allclose(dj[0], b.delta)
