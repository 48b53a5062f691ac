import os
import tempfile

import numpy as np
import numpy.testing as npt
import pytest

from fdcheck import fd_grad, rel_error
from sketch2model.core import RandomStream, ShapeError
from sketch2model.regnet import (
    ConvRegressor,
    MlpRegressor,
    adam_step,
    affine_backward,
    affine_forward,
    bn_backward,
    bn_forward,
    conv_backward,
    conv_forward,
    conv_mx1_backward,
    conv_mx1_forward,
    create_adam,
    leaky_backward,
    leaky_forward,
    load_checkpoint,
    mlp_backward,
    mlp_forward,
    save_checkpoint,
    xavier_uniform,
)


def random_mlp(stream, input_dim=5, hidden=(6, 7, 8), output_dim=4):
    net = MlpRegressor.create(input_dim, output_dim, hidden=hidden, stream=stream)
    # shift bn parameters off their init values so their gradients are exercised
    for i in range(3):
        net.gammas[i] += 0.1 * stream.gaussian(net.gammas[i].size)
        net.betas[i] += 0.1 * stream.gaussian(net.betas[i].size)
    return net


class TestLayerGradients:
    def test_affine(self):
        stream = RandomStream(10)
        x = stream.gaussian(12).reshape(4, 3)
        w = stream.gaussian(6).reshape(3, 2)
        b = stream.gaussian(2)
        r = stream.gaussian(8).reshape(4, 2)

        def loss(w_, b_, x_):
            y, _ = affine_forward(x_, w_, b_)
            return float((y * r).sum())

        _, cache = affine_forward(x, w, b)
        dx, dw, db = affine_backward(r, cache)
        assert rel_error(dw, fd_grad(lambda p: loss(p, b, x), w)) < 1e-4
        assert rel_error(db, fd_grad(lambda p: loss(w, p, x), b)) < 1e-4
        assert rel_error(dx, fd_grad(lambda p: loss(w, b, p), x)) < 1e-4

    def test_batchnorm(self):
        stream = RandomStream(11)
        x = 2.0 + stream.gaussian(20).reshape(5, 4)
        gamma = 1.0 + 0.1 * stream.gaussian(4)
        beta = stream.gaussian(4)
        r = stream.gaussian(20).reshape(5, 4)

        def loss(x_, g_, b_):
            y, _ = bn_forward(x_, g_, b_, np.zeros(4), np.ones(4), "train")
            return float((y * r).sum())

        _, cache = bn_forward(x, gamma, beta, np.zeros(4), np.ones(4), "train")
        dx, dgamma, dbeta = bn_backward(r, cache)
        assert rel_error(dx, fd_grad(lambda p: loss(p, gamma, beta), x)) < 1e-4
        assert rel_error(dgamma, fd_grad(lambda p: loss(x, p, beta), gamma)) < 1e-4
        assert rel_error(dbeta, fd_grad(lambda p: loss(x, gamma, p), beta)) < 1e-4

    def test_leaky_relu(self):
        stream = RandomStream(12)
        x = stream.gaussian(30).reshape(6, 5)
        x[np.abs(x) < 1e-3] = 0.5  # keep clear of the kink
        r = stream.gaussian(30).reshape(6, 5)
        _, cache = leaky_forward(x, 0.01)
        dx = leaky_backward(r, cache)
        fd = fd_grad(lambda p: float((leaky_forward(p, 0.01)[0] * r).sum()), x)
        assert rel_error(dx, fd) < 1e-4

    def test_conv_mx1(self):
        stream = RandomStream(13)
        x = stream.gaussian(2 * 3 * 5 * 4).reshape(2, 3, 5, 4)
        k = stream.gaussian(2 * 3 * 3).reshape(2, 3, 3, 1)
        b = stream.gaussian(2)
        r = stream.gaussian(2 * 2 * 5 * 4).reshape(2, 2, 5, 4)

        def loss(x_, k_, b_):
            y, _ = conv_mx1_forward(x_, k_, b_)
            return float((y * r).sum())

        _, cache = conv_mx1_forward(x, k, b)
        dx, dk, db = conv_mx1_backward(r, cache)
        assert rel_error(dx, fd_grad(lambda p: loss(p, k, b), x)) < 1e-4
        assert rel_error(dk, fd_grad(lambda p: loss(x, p, b), k)) < 1e-4
        assert rel_error(db, fd_grad(lambda p: loss(x, k, p), b)) < 1e-4

    def test_conv_delta_kernel_is_identity(self):
        x = RandomStream(14).gaussian(1 * 1 * 7 * 3).reshape(1, 1, 7, 3)
        k = np.zeros((1, 1, 3, 1))
        k[0, 0, 1, 0] = 1.0  # centered tap
        y, _ = conv_mx1_forward(x, k, np.zeros(1))
        npt.assert_allclose(y, x, atol=1e-15)


class TestBatchNormBehavior:
    def test_normalized_batch_statistics(self):
        stream = RandomStream(20)
        x = 10.0 * stream.gaussian(200).reshape(50, 4) + 7.0
        _, cache = bn_forward(x, np.ones(4), np.zeros(4), np.zeros(4), np.ones(4), "train")
        xhat = cache["xhat"]
        assert np.max(np.abs(xhat.mean(axis=0))) < 1e-9
        npt.assert_allclose(xhat.var(axis=0), 1.0, atol=1e-6)

    def test_running_stats_updated(self):
        x = np.array([[0.0], [2.0]])
        rm, rv = np.zeros(1), np.ones(1)
        bn_forward(x, np.ones(1), np.zeros(1), rm, rv, "train")
        npt.assert_allclose(rm, [0.9 * 0.0 + 0.1 * 1.0])
        npt.assert_allclose(rv, [0.9 * 1.0 + 0.1 * 1.0])

    def test_eval_uses_running_stats_and_accepts_single_row(self):
        rm, rv = np.array([3.0]), np.array([4.0])
        y, _ = bn_forward(np.array([[5.0]]), np.ones(1), np.zeros(1), rm, rv, "eval", eps=0.0)
        npt.assert_allclose(y, [[(5.0 - 3.0) / 2.0]])

    def test_train_batch_of_one_rejected(self):
        with pytest.raises(ValueError, match="batch size"):
            bn_forward(np.ones((1, 2)), np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), "train")


class TestMlp:
    def test_zero_configuration_gives_zero_output(self):
        net = random_mlp(RandomStream(30))
        for arr in net.parameters():
            arr[...] = 0.0
        out, _ = mlp_forward(net, RandomStream(31).gaussian(10).reshape(2, 5), "train")
        npt.assert_array_equal(out, np.zeros((2, 4)))

    def test_identity_configuration_passthrough(self):
        # square identity layers, eps 0 so normalization is exact
        net = MlpRegressor.create(3, 3, hidden=(3, 3, 3), stream=RandomStream(32))
        net.eps = 0.0
        for i in range(4):
            net.weights[i] = np.eye(3)
            net.biases[i] = np.zeros(3)
        x = np.abs(RandomStream(33).gaussian(3)) + 0.1  # positive: leaky relu passes through
        out, _ = mlp_forward(net, x[None, :], "eval")
        npt.assert_allclose(out[0], x, atol=1e-12)

    def test_identity_configuration_default_eps(self):
        # with eps 1e-5 each of the 3 bn layers shrinks by about 5e-6
        net = MlpRegressor.create(3, 3, hidden=(3, 3, 3), stream=RandomStream(32))
        for i in range(4):
            net.weights[i] = np.eye(3)
            net.biases[i] = np.zeros(3)
        x = np.abs(RandomStream(34).gaussian(3)) + 0.1
        out, _ = mlp_forward(net, x[None, :], "eval")
        npt.assert_allclose(out[0], x, rtol=1e-4)

    def test_full_network_gradients(self):
        stream = RandomStream(35)
        for trial in range(3):
            net = random_mlp(stream.child(trial))
            x = stream.child(100 + trial).gaussian(15).reshape(3, 5)
            r = stream.child(200 + trial).gaussian(12).reshape(3, 4)
            out, caches = mlp_forward(net, x, "train")
            if min(np.min(np.abs(c[2]["x"])) for c in caches[:3]) < 1e-5:
                continue  # a preactivation sits on the leaky-relu kink
            grads, dx = mlp_backward(net, caches, r)
            params = net.parameters()

            def loss_at(idx, p):
                saved = params[idx].copy()
                params[idx][...] = p
                y, _ = mlp_forward(net, x, "train")
                params[idx][...] = saved
                return float((y * r).sum())

            for idx in range(len(params)):
                fd = fd_grad(lambda p, idx=idx: loss_at(idx, p), params[idx])
                if np.max(np.abs(grads[idx])) < 1e-8:
                    # biases feeding batch norm have exactly-zero gradients;
                    # the finite difference only shows its noise floor there
                    assert np.max(np.abs(fd)) < 1e-7, "parameter %d" % idx
                else:
                    assert rel_error(grads[idx], fd) < 1e-4, "parameter %d" % idx
            fd_x = fd_grad(lambda p: float((mlp_forward(net, p, "train")[0] * r).sum()), x)
            assert rel_error(dx, fd_x) < 1e-4

    def test_zero_upstream_zero_grads(self):
        net = random_mlp(RandomStream(36))
        x = RandomStream(37).gaussian(10).reshape(2, 5)
        _, caches = mlp_forward(net, x, "train")
        grads, dx = mlp_backward(net, caches, np.zeros((2, 4)))
        for g in grads:
            npt.assert_array_equal(g, np.zeros_like(g))
        npt.assert_array_equal(dx, np.zeros_like(x))

    def test_duplicated_rows_halved_upstream(self):
        net = random_mlp(RandomStream(38))
        x = RandomStream(39).gaussian(15).reshape(3, 5)
        r = RandomStream(40).gaussian(12).reshape(3, 4)
        _, caches1 = mlp_forward(net, x, "train")
        grads1, _ = mlp_backward(net, caches1, r)
        x2 = np.vstack([x, x])
        r2 = 0.5 * np.vstack([r, r])
        _, caches2 = mlp_forward(net, x2, "train")
        grads2, _ = mlp_backward(net, caches2, r2)
        for g1, g2 in zip(grads1, grads2):
            npt.assert_allclose(g1, g2, rtol=1e-12, atol=1e-12)

    def test_train_batch_of_one_rejected(self):
        net = random_mlp(RandomStream(41))
        with pytest.raises(ValueError, match="batch size"):
            mlp_forward(net, np.ones((1, 5)), "train")
        out, _ = mlp_forward(net, np.ones((1, 5)), "eval")
        assert out.shape == (1, 4)

    def test_backward_rejects_eval_cache(self):
        net = random_mlp(RandomStream(42))
        _, caches = mlp_forward(net, np.ones((2, 5)), "eval")
        with pytest.raises(ValueError, match="train-mode"):
            mlp_backward(net, caches, np.zeros((2, 4)))

    def test_input_dim_mismatch(self):
        net = random_mlp(RandomStream(43))
        with pytest.raises(ShapeError):
            mlp_forward(net, np.ones((2, 6)), "train")


class TestConvNet:
    def test_shape_preserved_through_six_layers(self):
        net = ConvRegressor.create(stream=RandomStream(50))
        x = RandomStream(51).gaussian(1 * 1 * 33 * 10).reshape(1, 1, 33, 10)
        out, _ = conv_forward(net, x, "eval")
        assert out.shape == (1, 1, 33, 10)

    def test_shape_contract_grid(self):
        net = ConvRegressor.create(stream=RandomStream(52))
        for rows in (17, 33):
            for classes in (2, 5):
                x = np.ones((2, 1, rows, classes))
                out, _ = conv_forward(net, x, "train")
                assert out.shape == (2, 1, rows, classes)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            ConvRegressor.create(stream=RandomStream(53), kernel_m=4)

    def test_no_mixing_across_class_axis(self):
        net = ConvRegressor.create(stream=RandomStream(54))
        for b in net.biases:
            b[...] = 0.0
        x = RandomStream(55).gaussian(1 * 1 * 9 * 6).reshape(1, 1, 9, 6)
        out_full, _ = conv_forward(net, x, "eval")
        xz = x.copy()
        xz[:, :, :, 2] = 0.0
        out_z, _ = conv_forward(net, xz, "eval")
        keep = [j for j in range(6) if j != 2]
        npt.assert_array_equal(out_full[:, :, :, keep], out_z[:, :, :, keep])

    def test_class_shift_shifts_gradient(self):
        net = ConvRegressor.create(stream=RandomStream(56))
        x = RandomStream(57).gaussian(2 * 1 * 5 * 4).reshape(2, 1, 5, 4)
        r = RandomStream(58).gaussian(2 * 1 * 5 * 4).reshape(2, 1, 5, 4)
        _, caches = conv_forward(net, x, "train")
        _, dx = conv_backward(net, caches, r)
        x_s = np.roll(x, 1, axis=3)
        r_s = np.roll(r, 1, axis=3)
        _, caches_s = conv_forward(net, x_s, "train")
        _, dx_s = conv_backward(net, caches_s, r_s)
        npt.assert_allclose(np.roll(dx, 1, axis=3), dx_s, rtol=1e-9, atol=1e-12)

    def test_full_network_gradients_sampled(self):
        stream = RandomStream(59)
        net = ConvRegressor.create(stream=stream.child(0))
        x = stream.child(1).gaussian(2 * 1 * 5 * 2).reshape(2, 1, 5, 2)
        r = stream.child(2).gaussian(2 * 1 * 5 * 2).reshape(2, 1, 5, 2)
        _, caches = conv_forward(net, x, "train")
        grads, dx = conv_backward(net, caches, r)
        params = net.parameters()
        picker = stream.child(3)

        def loss():
            y, _ = conv_forward(net, x, "train")
            return float((y * r).sum())

        h = 1e-6
        for idx, (p, g) in enumerate(zip(params, grads)):
            flat_p, flat_g = p.ravel(), g.ravel()
            coords = picker.subset(flat_p.size, min(6, flat_p.size))
            for c in coords:
                saved = flat_p[c]
                flat_p[c] = saved + h
                hi = loss()
                flat_p[c] = saved - h
                lo = loss()
                flat_p[c] = saved
                fd = (hi - lo) / (2 * h)
                if abs(fd - flat_g[c]) < 1e-7:
                    continue  # below the finite-difference noise floor
                denom = max(abs(fd), abs(flat_g[c]), 1e-6)
                assert abs(fd - flat_g[c]) / denom < 1e-3, "parameter %d coord %d" % (idx, c)
        fd_x = fd_grad(lambda p: float((conv_forward(net, p, "train")[0] * r).sum()), x)
        assert rel_error(dx, fd_x) < 1e-4

    def test_zero_upstream_zero_grads(self):
        net = ConvRegressor.create(stream=RandomStream(60))
        x = np.ones((2, 1, 4, 3))
        _, caches = conv_forward(net, x, "train")
        grads, dx = conv_backward(net, caches, np.zeros((2, 1, 4, 3)))
        for g in grads:
            npt.assert_array_equal(g, np.zeros_like(g))
        npt.assert_array_equal(dx, np.zeros_like(x))

    def test_train_batch_of_one_rejected(self):
        net = ConvRegressor.create(stream=RandomStream(61))
        with pytest.raises(ValueError, match="batch size"):
            conv_forward(net, np.ones((1, 1, 4, 3)), "train")
        out, _ = conv_forward(net, np.ones((1, 1, 4, 3)), "eval")
        assert out.shape == (1, 1, 4, 3)


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = [np.array([1.0, 2.0])]
        state = create_adam(p, learning_rate=0.1)
        adam_step(p, [np.zeros(2)], state)
        npt.assert_array_equal(p[0], [1.0, 2.0])
        assert state.t == 1

    def test_first_step_magnitude_is_lr(self):
        p = [np.array([5.0])]
        state = create_adam(p, learning_rate=1e-3)
        adam_step(p, [np.array([7.0])], state)
        assert abs(abs(5.0 - p[0][0]) - 1e-3) < 1e-6 * 1e-3

    def test_two_step_hand_trace(self):
        lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
        g = 3.0
        p = [np.array([1.0])]
        state = create_adam(p, learning_rate=lr)
        adam_step(p, [np.array([g])], state)
        adam_step(p, [np.array([g])], state)
        # hand trace
        m = v = 0.0
        x = 1.0
        for t in (1, 2):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1**t)
            vhat = v / (1 - b2**t)
            x -= lr * mhat / (np.sqrt(vhat) + eps)
        assert abs(p[0][0] - x) < 1e-12

    def test_shape_mismatch(self):
        p = [np.zeros(2)]
        state = create_adam(p)
        with pytest.raises(ShapeError):
            adam_step(p, [np.zeros(3)], state)


class TestInit:
    def test_xavier_bounds_and_determinism(self):
        s1 = RandomStream(70)
        s2 = RandomStream(70)
        w1 = xavier_uniform(30, 40, (30, 40), s1)
        w2 = xavier_uniform(30, 40, (30, 40), s2)
        npt.assert_array_equal(w1, w2)
        bound = np.sqrt(6.0 / 70.0)
        assert np.max(np.abs(w1)) <= bound
        assert abs(w1.mean()) < 0.01

    def test_created_biases_zero(self):
        net = MlpRegressor.create(4, 3, hidden=(5, 5, 5), stream=RandomStream(71))
        for b in net.biases:
            npt.assert_array_equal(b, np.zeros_like(b))


class TestCheckpoints:
    def test_mlp_round_trip(self):
        net = random_mlp(RandomStream(80))
        # march the running stats off their defaults
        mlp_forward(net, RandomStream(81).gaussian(40).reshape(8, 5), "train")
        with tempfile.TemporaryDirectory() as tmp:
            prefix = os.path.join(tmp, "ck")
            save_checkpoint(net, prefix)
            back = load_checkpoint(prefix)
        for a, b in zip(net.parameters(), back.parameters()):
            npt.assert_array_equal(a, b)
        for a, b in zip(net.run_mean + net.run_var, back.run_mean + back.run_var):
            npt.assert_array_equal(a, b)
        x = RandomStream(82).gaussian(5)[None, :]
        out1, _ = mlp_forward(net, x, "eval")
        out2, _ = mlp_forward(back, x, "eval")
        npt.assert_array_equal(out1, out2)

    def test_conv_round_trip(self):
        net = ConvRegressor.create(stream=RandomStream(83), kernel_m=5)
        conv_forward(net, RandomStream(84).gaussian(2 * 1 * 6 * 3).reshape(2, 1, 6, 3), "train")
        with tempfile.TemporaryDirectory() as tmp:
            prefix = os.path.join(tmp, "ck")
            save_checkpoint(net, prefix)
            back = load_checkpoint(prefix)
        assert back.kernel_m == 5
        for a, b in zip(net.parameters(), back.parameters()):
            npt.assert_array_equal(a, b)
        x = RandomStream(85).gaussian(1 * 1 * 6 * 3).reshape(1, 1, 6, 3)
        out1, _ = conv_forward(net, x, "eval")
        out2, _ = conv_forward(back, x, "eval")
        npt.assert_array_equal(out1, out2)

    def test_version_and_payload_checks(self):
        net = random_mlp(RandomStream(86))
        with tempfile.TemporaryDirectory() as tmp:
            prefix = os.path.join(tmp, "ck")
            save_checkpoint(net, prefix)
            with open(prefix + ".json", "r", encoding="utf-8") as fh:
                desc = fh.read()
            with open(prefix + ".json", "w", encoding="utf-8") as fh:
                fh.write(desc.replace('"format_version": 1', '"format_version": 9'))
            with pytest.raises(ValueError, match="version"):
                load_checkpoint(prefix)
            with open(prefix + ".json", "w", encoding="utf-8") as fh:
                fh.write(desc)
            with open(prefix + ".w64le", "ab") as fh:
                fh.write(b"\x00" * 8)
            with pytest.raises(ValueError, match="payload"):
                load_checkpoint(prefix)
