"""MLP forward/backward/optimizer: shape contracts, oracles, checkpoints."""

import numpy as np
import pytest

from mprl.errors import InvalidConfig, InvalidDimension, InvalidState
from mprl.labels import ground_truth_label
from mprl.losses import LossConfig, combined_loss
from mprl.net import (
    Activation,
    ModelParams,
    backward,
    forward,
    init_optimizer,
    init_params,
    load_params,
    save_params,
    sgd_step,
)


def params_equal(a: ModelParams, b: ModelParams) -> bool:
    return (
        a.activation == b.activation
        and all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
        and all(np.array_equal(x, y) for x, y in zip(a.biases, b.biases))
    )


class TestInitParams:
    def test_same_seed_bitwise_identical(self):
        a = init_params((4, 8, 3), seed=42)
        b = init_params((4, 8, 3), seed=42)
        assert params_equal(a, b)

    def test_different_seed_differs(self):
        a = init_params((4, 8, 3), seed=1)
        b = init_params((4, 8, 3), seed=2)
        assert not params_equal(a, b)

    def test_zero_scale_leaves_bias_path_only(self):
        params = init_params((3, 5, 2), seed=0, scale=0.0)
        assert all(np.all(w == 0.0) for w in params.weights)
        logits, _, _ = forward(params, np.array([1.0, -2.0, 3.0]))
        np.testing.assert_array_equal(logits, np.zeros(2))

    def test_shape_contract(self):
        params = init_params((2, 8, 4, 3), seed=7)
        logits, _, emb = forward(params, np.array([0.5, -0.5]))
        assert logits.shape == (3,)
        assert emb.shape == (4,)
        assert params.layer_sizes == (2, 8, 4, 3)
        assert params.embedding_dim == 4

    def test_bad_sizes_rejected(self):
        with pytest.raises(InvalidDimension):
            init_params((4,), seed=0)
        with pytest.raises(InvalidDimension):
            init_params((4, 0, 2), seed=0)


class TestForward:
    def test_zero_net_relu_gives_zero_logits(self):
        params = init_params((3, 4, 2), seed=0, scale=0.0)
        logits, _, _ = forward(params, np.zeros(3))
        np.testing.assert_array_equal(logits, np.zeros(2))

    def test_no_dropout_means_train_equals_eval(self):
        params = init_params((3, 6, 2), seed=5)
        x = np.array([0.1, 0.2, -0.3])
        train_logits, _, _ = forward(params, x, dropout_rate=0.0, train_mode=True)
        eval_logits, _, _ = forward(params, x, train_mode=False)
        np.testing.assert_array_equal(train_logits, eval_logits)

    def test_single_linear_layer_matches_matmul_oracle(self):
        params = init_params((2, 3), seed=9, scale=1.0)
        x = np.array([1.0, 2.0])
        logits, _, emb = forward(params, x)
        expected = x @ params.weights[0] + params.biases[0]
        np.testing.assert_allclose(logits, expected, atol=1e-15)
        np.testing.assert_array_equal(emb, x)  # no hidden layer: embedding is the input

    def test_batch_and_single_agree(self):
        # batched and single-row matmuls may take different BLAS kernels,
        # so agreement is to the ulp, not bitwise
        params = init_params((4, 5, 3), seed=3)
        batch = np.random.default_rng(0).normal(size=(6, 4))
        batch_logits, _, batch_emb = forward(params, batch)
        for i in range(6):
            one_logits, _, one_emb = forward(params, batch[i])
            np.testing.assert_allclose(one_logits, batch_logits[i], rtol=1e-14, atol=1e-14)
            np.testing.assert_allclose(one_emb, batch_emb[i], rtol=1e-14, atol=1e-14)

    def test_dropout_deterministic_given_seed(self):
        params = init_params((3, 8, 2), seed=1)
        x = np.random.default_rng(4).normal(size=(5, 3))
        a, _, _ = forward(params, x, dropout_rate=0.5, dropout_seed=77, train_mode=True)
        b, _, _ = forward(params, x, dropout_rate=0.5, dropout_seed=77, train_mode=True)
        c, _, _ = forward(params, x, dropout_rate=0.5, dropout_seed=78, train_mode=True)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_dropout_inverted_scaling_preserves_expectation(self):
        params = init_params((2, 400, 1), seed=2)
        x = np.array([0.7, -0.4])
        eval_logits, _, _ = forward(params, x)
        acc = np.zeros(1)
        n = 300
        for s in range(n):
            logits, _, _ = forward(params, x, dropout_rate=0.4, dropout_seed=s, train_mode=True)
            acc += logits
        np.testing.assert_allclose(acc / n, eval_logits, rtol=0.05, atol=0.02)

    def test_dropout_needs_seed_in_train_mode(self):
        params = init_params((2, 4, 2), seed=0)
        with pytest.raises(InvalidConfig):
            forward(params, np.zeros(2), dropout_rate=0.5, train_mode=True)

    def test_dim_mismatch(self):
        params = init_params((3, 4, 2), seed=0)
        with pytest.raises(InvalidDimension):
            forward(params, np.zeros(5))

    def test_embedding_dim_constant_over_inputs(self):
        params = init_params((3, 7, 4, 2), seed=0)
        rng = np.random.default_rng(1)
        for _ in range(10):
            _, _, emb = forward(params, rng.normal(size=3))
            assert emb.shape == (4,)


class TestBackward:
    def test_zero_grad_logits_gives_zero_param_grads(self):
        params = init_params((3, 5, 2), seed=0)
        x = np.random.default_rng(2).normal(size=(4, 3))
        logits, cache, _ = forward(params, x)
        grads = backward(params, cache, np.zeros_like(logits))
        assert all(np.all(g == 0) for g in grads.weights)
        assert all(np.all(g == 0) for g in grads.biases)

    def test_linear_regression_closed_form(self):
        # single linear layer with squared-error head: dW = x^T (xW + b - y)
        params = init_params((3, 2), seed=8)
        rng = np.random.default_rng(5)
        x = rng.normal(size=(6, 3))
        y = rng.normal(size=(6, 2))
        logits, cache, _ = forward(params, x)
        residual = logits - y
        grads = backward(params, cache, residual)
        np.testing.assert_allclose(grads.weights[0], x.T @ residual, atol=1e-12)
        np.testing.assert_allclose(grads.biases[0], residual.sum(axis=0), atol=1e-12)

    @pytest.mark.parametrize("activation", [Activation.RELU, Activation.TANH])
    def test_finite_difference_agreement(self, activation):
        # squared-error head through a 2-hidden-layer net, < 500 params
        params = init_params((4, 7, 5, 3), seed=11, activation=activation)
        assert params.n_params < 500
        rng = np.random.default_rng(13)
        x = rng.normal(size=(3, 4))
        target = rng.normal(size=(3, 3))

        def loss_of(p: ModelParams) -> float:
            out, _, _ = forward(p, x)
            return 0.5 * float(np.sum((out - target) ** 2))

        logits, cache, _ = forward(params, x)
        grads = backward(params, cache, logits - target)

        step = 1e-6
        for layer in range(len(params.weights)):
            for arrays, grad in ((params.weights, grads.weights),
                                 (params.biases, grads.biases)):
                a = arrays[layer]
                fd = np.empty_like(a)
                it = np.nditer(a, flags=["multi_index"])
                for _ in it:
                    idx = it.multi_index
                    orig = a[idx]
                    a[idx] = orig + step
                    fp = loss_of(params)
                    a[idx] = orig - step
                    fm = loss_of(params)
                    a[idx] = orig
                    fd[idx] = (fp - fm) / (2 * step)
                scale = max(np.abs(grad[layer]).max(), np.abs(fd).max(), 1e-12)
                assert np.abs(grad[layer] - fd).max() / scale < 1e-5

    def test_gradcheck_through_dropout_mask(self):
        # fixed mask: backward must agree with differences of the masked net
        params = init_params((3, 6, 2), seed=21)
        x = np.random.default_rng(3).normal(size=(2, 3))
        target = np.random.default_rng(4).normal(size=(2, 2))
        seed = 99

        def loss_of(p):
            out, _, _ = forward(p, x, dropout_rate=0.5, dropout_seed=seed, train_mode=True)
            return 0.5 * float(np.sum((out - target) ** 2))

        logits, cache, _ = forward(params, x, dropout_rate=0.5, dropout_seed=seed,
                                   train_mode=True)
        grads = backward(params, cache, logits - target)
        w = params.weights[0]
        step = 1e-6
        fd = np.empty_like(w)
        for i in range(w.shape[0]):
            for j in range(w.shape[1]):
                orig = w[i, j]
                w[i, j] = orig + step
                fp = loss_of(params)
                w[i, j] = orig - step
                fm = loss_of(params)
                w[i, j] = orig
                fd[i, j] = (fp - fm) / (2 * step)
        scale = max(np.abs(grads.weights[0]).max(), np.abs(fd).max(), 1e-12)
        assert np.abs(grads.weights[0] - fd).max() / scale < 1e-5

    def test_stale_cache_rejected(self):
        params = init_params((3, 4, 2), seed=0)
        x = np.zeros((2, 3))
        logits, cache, _ = forward(params, x)
        opt = init_optimizer(params, 0.1, 0.0)
        grads = backward(params, cache, np.ones_like(logits))
        updated = sgd_step(params, grads, opt)
        with pytest.raises(InvalidState):
            backward(updated, cache, np.ones_like(logits))


class TestEndToEndLossGradients:
    @pytest.mark.parametrize("scheme", ["ground_truth", "lsro", "mprl", "one_hot", "all_in_one"])
    def test_every_label_scheme_backprops_correctly(self, scheme):
        from mprl.labels import (
            TiePolicy,
            all_in_one_label,
            lsro_label,
            mprl_alpha,
            mprl_label,
            one_hot_pseudo_label,
            softmax,
        )

        k = 3
        width = k + 1 if scheme == "all_in_one" else k
        params = init_params((4, 6, width), seed=31)
        assert params.n_params < 500
        rng = np.random.default_rng(37)
        x = rng.normal(size=(2, 4))
        cfg = LossConfig(n_classes=k, gen_weight=0.7)

        probe = softmax(rng.normal(size=width))
        labels = {
            "ground_truth": (ground_truth_label(2, width), False),
            "lsro": (lsro_label(k), True),
            "mprl": (mprl_label(mprl_alpha(probe[:k] / probe[:k].sum() if width != k
                                           else probe, TiePolicy.AVERAGE_RANK), k), True),
            "one_hot": (one_hot_pseudo_label(probe), True),
            "all_in_one": (all_in_one_label(k), True),
        }
        label, is_gen = labels[scheme]

        def loss_of(p):
            out, _, _ = forward(p, x)
            items = [(out[i], label, is_gen) for i in range(out.shape[0])]
            return combined_loss(items, cfg).value

        logits, cache, _ = forward(params, x)
        items = [(logits[i], label, is_gen) for i in range(logits.shape[0])]
        grad_rows = combined_loss(items, cfg).grad_logits
        grads = backward(params, cache, grad_rows)

        step = 1e-6
        for layer in range(len(params.weights)):
            w = params.weights[layer]
            fd = np.empty_like(w)
            for i in range(w.shape[0]):
                for j in range(w.shape[1]):
                    orig = w[i, j]
                    w[i, j] = orig + step
                    fp = loss_of(params)
                    w[i, j] = orig - step
                    fm = loss_of(params)
                    w[i, j] = orig
                    fd[i, j] = (fp - fm) / (2 * step)
            scale = max(np.abs(grads.weights[layer]).max(), np.abs(fd).max(), 1e-12)
            assert np.abs(grads.weights[layer] - fd).max() / scale < 1e-5


class TestSgdStep:
    def test_zero_momentum_is_plain_sgd(self):
        params = init_params((2, 3), seed=0, scale=1.0)
        opt = init_optimizer(params, learning_rate=0.5, momentum=0.0)
        g = [np.ones_like(w) for w in params.weights]
        gb = [np.ones_like(b) for b in params.biases]
        from mprl.net import ParamGrads

        updated = sgd_step(params, ParamGrads(g, gb), opt)
        np.testing.assert_allclose(updated.weights[0], params.weights[0] - 0.5, atol=1e-15)

    def test_zero_gradient_keeps_params(self):
        params = init_params((2, 3), seed=0)
        opt = init_optimizer(params, 0.1, 0.9)
        from mprl.net import ParamGrads

        zero = ParamGrads([np.zeros_like(w) for w in params.weights],
                          [np.zeros_like(b) for b in params.biases])
        updated = params
        for _ in range(3):
            updated = sgd_step(updated, zero, opt)
        assert params_equal(updated, params)

    def test_two_steps_hand_unrolled(self):
        # constant gradient, momentum 0.9, lr 0.1: displacements -0.1g then
        # cumulative -0.29g
        params = init_params((2, 2), seed=0, scale=0.0)
        opt = init_optimizer(params, learning_rate=0.1, momentum=0.9)
        from mprl.net import ParamGrads

        g = np.full((2, 2), 2.0)
        grads = ParamGrads([g], [np.zeros(2)])
        w0 = params.weights[0].copy()
        step1 = sgd_step(params, grads, opt)
        np.testing.assert_allclose(step1.weights[0], w0 - 0.1 * g, atol=1e-15)
        step2 = sgd_step(step1, grads, opt)
        np.testing.assert_allclose(step2.weights[0], w0 - 0.29 * g, atol=1e-15)

    def test_shape_mismatch_rejected(self):
        params = init_params((2, 3), seed=0)
        opt = init_optimizer(params, 0.1, 0.9)
        from mprl.net import ParamGrads

        bad = ParamGrads([np.zeros((3, 2))], [np.zeros(3)])
        with pytest.raises(InvalidDimension):
            sgd_step(params, bad, opt)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        params = init_params((5, 9, 4, 3), seed=123, activation=Activation.TANH)
        path = tmp_path / "model.ckpt"
        save_params(params, path)
        loaded = load_params(path)
        assert loaded.activation is Activation.TANH
        assert loaded.layer_sizes == params.layer_sizes
        for a, b in zip(params.weights, loaded.weights):
            assert a.tobytes() == b.tobytes()
        for a, b in zip(params.biases, loaded.biases):
            assert a.tobytes() == b.tobytes()

    def test_save_load_save_identical_bytes(self, tmp_path):
        params = init_params((3, 4, 2), seed=5)
        p1 = tmp_path / "a.ckpt"
        p2 = tmp_path / "b.ckpt"
        save_params(params, p1)
        save_params(load_params(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTAMODEL")
        with pytest.raises(InvalidState):
            load_params(path)
