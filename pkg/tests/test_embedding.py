"""Tests for the embedding network and similarity kernel."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from kernelaj import EmbeddingConfig, ShapeMismatch, embed, embed_batch, init_mlp, kernel
from kernelaj.embedding import (
    MlpParams,
    backward,
    flatten_grads,
    flatten_params,
    forward_cached,
    kernel_matrix,
    kernel_matrix_backward,
    pairwise_sq_dists,
    unflatten_params,
)


class TestInit:
    def test_deterministic_given_seed(self):
        cfg = EmbeddingConfig(input_dim=3, num_layers=2, hidden_units=4, embed_dim=2)
        a = init_mlp(cfg, seed=42)
        b = init_mlp(cfg, seed=42)
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)

    def test_shapes(self):
        cfg = EmbeddingConfig(input_dim=3, num_layers=1, hidden_units=4, embed_dim=2)
        params = init_mlp(cfg)
        assert params.weights[0].shape == (4, 3)
        assert params.weights[1].shape == (2, 4)
        assert params.biases[0].shape == (4,)

    def test_different_seeds_differ(self):
        cfg = EmbeddingConfig(input_dim=3, num_layers=1, hidden_units=4, embed_dim=2)
        a = init_mlp(cfg, seed=1)
        b = init_mlp(cfg, seed=2)
        assert not np.array_equal(a.weights[0], b.weights[0])

    def test_bounds_and_zero_biases(self):
        cfg = EmbeddingConfig(input_dim=9, num_layers=1, hidden_units=50, embed_dim=2)
        params = init_mlp(cfg, seed=0)
        assert np.abs(params.weights[0]).max() <= np.sqrt(1.0 / 9)
        assert_allclose(params.biases[0], 0.0)


class TestEmbed:
    def test_zero_parameters_give_zero_embedding(self):
        sizes = (3, 4, 2)
        params = MlpParams(sizes, (np.zeros((4, 3)), np.zeros((2, 4))),
                           (np.zeros(4), np.zeros(2)))
        assert_allclose(embed(params, np.array([1.0, -2.0, 3.0])), 0.0)

    def test_single_linear_layer_is_matrix_product(self):
        W = np.array([[1.0, 2.0], [0.0, -1.0]])
        params = MlpParams((2, 2), (W,), (np.zeros(2),))
        x = np.array([3.0, 4.0])
        assert_allclose(embed(params, x), W @ x)

    def test_batch_matches_single(self):
        cfg = EmbeddingConfig(input_dim=3, num_layers=2, hidden_units=5, embed_dim=2)
        params = init_mlp(cfg, seed=0)
        X = np.random.default_rng(0).normal(size=(6, 3))
        batch = embed_batch(params, X)
        singles = np.vstack([embed(params, x) for x in X])
        assert_allclose(batch, singles)

    def test_shape_mismatch(self):
        cfg = EmbeddingConfig(input_dim=3, num_layers=1, hidden_units=4, embed_dim=2)
        params = init_mlp(cfg)
        with pytest.raises(ShapeMismatch):
            embed(params, np.zeros(5))


class TestKernel:
    def test_identical_embeddings(self):
        e = np.array([0.3, -0.7])
        assert kernel(e, e) == 1.0

    def test_unit_distance(self):
        # exp(-1) for two embeddings one unit apart
        assert kernel(np.zeros(2), np.array([1.0, 0.0])) == pytest.approx(
            0.36787944117144233, abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            a, b = rng.normal(size=2 * 3).reshape(2, 3)
            assert kernel(a, b) == pytest.approx(kernel(b, a), abs=1e-15)

    def test_range(self):
        rng = np.random.default_rng(9)
        E = rng.normal(size=(20, 4))
        K = kernel_matrix(E)
        assert ((K > 0) & (K <= 1.0)).all()
        assert_allclose(np.diag(K), 1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeMismatch):
            kernel(np.zeros(2), np.zeros(3))


class TestBackward:
    def check_gradient(self, params, X, loss_fn, rtol=1e-6):
        """Compare the analytic parameter gradient of loss_fn(E) against
        central finite differences through the whole network."""
        E, cache = forward_cached(params, X)
        _, dE = loss_fn(E)
        dw, db = backward(params, cache, dE)
        analytic = flatten_grads(dw, db)

        flat = flatten_params(params)
        fd = np.zeros_like(flat)
        h = 1e-6
        for k in range(flat.size):
            up, down = flat.copy(), flat.copy()
            up[k] += h
            down[k] -= h
            lu, _ = loss_fn(embed_batch(unflatten_params(params, up), X))
            ld, _ = loss_fn(embed_batch(unflatten_params(params, down), X))
            fd[k] = (lu - ld) / (2 * h)
        denom = max(np.linalg.norm(fd), 1e-12)
        assert np.linalg.norm(analytic - fd) / denom < rtol * 100

    def test_quadratic_loss_gradient(self):
        cfg = EmbeddingConfig(input_dim=3, num_layers=2, hidden_units=5,
                              embed_dim=2, activation="tanh")
        params = init_mlp(cfg, seed=3)
        X = np.random.default_rng(3).normal(size=(7, 3))

        def loss_fn(E):
            return 0.5 * float((E ** 2).sum()), E

        self.check_gradient(params, X, loss_fn)

    def test_kernel_loss_gradient(self):
        cfg = EmbeddingConfig(input_dim=2, num_layers=1, hidden_units=6,
                              embed_dim=3, activation="tanh")
        params = init_mlp(cfg, seed=5)
        rng = np.random.default_rng(5)
        X = rng.normal(size=(5, 2))
        C = rng.normal(size=(5, 5))

        def loss_fn(E):
            K = kernel_matrix(E)
            dK = C.copy()
            np.fill_diagonal(dK, 0.0)
            Kd = K.copy()
            np.fill_diagonal(Kd, 0.0)
            return float((C * Kd).sum()), kernel_matrix_backward(E, K, dK)

        self.check_gradient(params, X, loss_fn)

    def test_relu_gradient(self):
        cfg = EmbeddingConfig(input_dim=3, num_layers=2, hidden_units=4,
                              embed_dim=2, activation="relu")
        params = init_mlp(cfg, seed=8)
        X = np.random.default_rng(8).normal(size=(6, 3))

        def loss_fn(E):
            return float(E.sum()), np.ones_like(E)

        self.check_gradient(params, X, loss_fn)


class TestFlattening:
    def test_round_trip(self):
        cfg = EmbeddingConfig(input_dim=3, num_layers=2, hidden_units=4, embed_dim=2)
        params = init_mlp(cfg, seed=1)
        rebuilt = unflatten_params(params, flatten_params(params))
        for a, b in zip(params.weights, rebuilt.weights):
            assert np.array_equal(a, b)

    def test_pairwise_distances_match_direct(self):
        rng = np.random.default_rng(2)
        E = rng.normal(size=(8, 3))
        D2 = pairwise_sq_dists(E)
        for i in range(8):
            for j in range(8):
                diff = E[i] - E[j]
                assert D2[i, j] == pytest.approx(diff @ diff, abs=1e-10)
