import os

import numpy as np
import pytest

from cloudgrasp import autodiff as ad
from conftest import finite_difference_check


rng = np.random.default_rng(7)


class TestForwardOps:
    def test_relu_values(self):
        out = ad.relu(ad.Tensor([-1.0, 0.0, 2.0]))
        assert np.array_equal(out.values, [0.0, 0.0, 2.0])

    def test_huber_zero_residual(self):
        x = ad.Tensor([1.0, -2.0, 3.0])
        assert ad.huber(x, x, delta=1.0).values == 0.0

    def test_huber_linear_tail(self):
        # residual 3 with delta 1: 1 * (3 - 0.5) = 2.5
        out = ad.huber(ad.Tensor([3.0]), ad.Tensor([0.0]), delta=1.0)
        assert np.isclose(out.values, 2.5)

    def test_huber_quadratic_core(self):
        out = ad.huber(ad.Tensor([0.5]), ad.Tensor([0.0]), delta=1.0)
        assert np.isclose(out.values, 0.125)

    def test_shape_error_names_shapes(self):
        with pytest.raises(ad.ShapeError) as e:
            ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((4, 2))))
        assert "(2, 3)" in str(e.value) and "(4, 2)" in str(e.value)

    def test_sigmoid_range(self):
        out = ad.sigmoid(ad.Tensor(rng.normal(size=50) * 10))
        assert np.all(out.values > 0) and np.all(out.values < 1)

    def test_batchnorm_modes(self):
        x = rng.normal(2.0, 3.0, size=(32, 4))
        st = ad.BatchNormState(4)
        gamma, beta = ad.Tensor(np.ones(4)), ad.Tensor(np.zeros(4))
        out = ad.batchnorm(ad.Tensor(x), gamma, beta, st, "train")
        assert np.abs(out.values.mean(axis=0)).max() < 1e-9
        # infer mode is pure: repeated calls do not mutate state
        mean_before = st.running_mean.copy()
        y1 = ad.batchnorm(ad.Tensor(x), gamma, beta, st, "infer").values
        y2 = ad.batchnorm(ad.Tensor(x), gamma, beta, st, "infer").values
        assert np.array_equal(y1, y2)
        assert np.array_equal(st.running_mean, mean_before)

    def test_batchnorm_bad_mode(self):
        with pytest.raises(ValueError):
            ad.batchnorm(ad.Tensor(np.ones((2, 2))), ad.Tensor(np.ones(2)),
                         ad.Tensor(np.zeros(2)), ad.BatchNormState(2), "test")


class TestBackward:
    def test_loss_must_be_scalar(self):
        with ad.Tape() as tape:
            out = ad.mul(ad.Tensor([1.0, 2.0]), ad.Tensor([3.0, 4.0]))
        with pytest.raises(ad.RankError):
            ad.backward(tape, out)

    def test_linear_loss_gradient_structure(self):
        # loss = sum(W @ x): grad(W) = x broadcast across rows
        x = ad.Tensor(np.array([[1.0], [2.0], [3.0]]))
        w = ad.Tensor(rng.normal(size=(4, 3)))
        with ad.Tape() as tape:
            loss = ad.sum_(ad.matmul(w, x))
        ad.backward(tape, loss)
        assert np.allclose(w.grad, np.tile([1.0, 2.0, 3.0], (4, 1)))

    def test_unused_parameter_gets_exact_zero(self):
        used = ad.Tensor(np.ones(3))
        unused = ad.Tensor(np.ones(3))
        with ad.Tape() as tape:
            loss = ad.sum_(ad.mul(used, used))
            _dead_end = ad.mul(unused, 2.0)
        ad.backward(tape, loss)
        assert np.array_equal(unused.grad, np.zeros(3))

    def test_gradient_accumulates_once_per_use(self):
        a = ad.Tensor(np.array([3.0]))
        with ad.Tape() as tape:
            loss = ad.sum_(ad.mul(a, a))  # a^2
        ad.backward(tape, loss)
        assert np.allclose(a.grad, [6.0])

    def test_repeated_backward_does_not_accumulate(self):
        a = ad.Tensor(np.array([3.0]))
        with ad.Tape() as tape:
            loss = ad.sum_(ad.mul(a, a))
        ad.backward(tape, loss)
        g1 = a.grad.copy()
        ad.backward(tape, loss)
        assert np.array_equal(a.grad, g1)


class TestGradientChecks:
    """Central finite differences (eps 1e-5, rel tol 1e-4) for every layer."""

    def test_dense_relu(self):
        x = ad.Tensor(rng.normal(size=(5, 3)))
        w = ad.Tensor(rng.normal(size=(3, 4)))
        b = ad.Tensor(rng.normal(size=(4,)))
        finite_difference_check(lambda: ad.mean(ad.relu(ad.dense(x, w, b))), [x, w, b])

    def test_conv2d(self):
        x = ad.Tensor(rng.normal(size=(2, 3, 7, 9)))
        k = ad.Tensor(rng.normal(size=(4, 3, 3, 3)))
        b = ad.Tensor(rng.normal(size=(4,)))
        finite_difference_check(
            lambda: ad.mean(ad.conv2d(x, k, b, stride=2, padding=1)), [x, k, b])

    def test_batchnorm_train(self):
        x = ad.Tensor(rng.normal(size=(8, 5)))
        gamma = ad.Tensor(rng.uniform(0.5, 1.5, size=5))
        beta = ad.Tensor(rng.normal(size=5))
        st = ad.BatchNormState(5)

        def build():
            out = ad.batchnorm(x, gamma, beta, st, "train")
            return ad.mean(ad.mul(out, out))

        finite_difference_check(build, [x, gamma, beta])

    def test_batchnorm_infer(self):
        st = ad.BatchNormState(5)
        st.running_mean = rng.normal(size=5)
        st.running_var = rng.uniform(0.5, 2.0, size=5)
        x = ad.Tensor(rng.normal(size=(6, 5)))
        gamma = ad.Tensor(rng.uniform(0.5, 1.5, size=5))
        beta = ad.Tensor(rng.normal(size=5))
        finite_difference_check(
            lambda: ad.mean(ad.batchnorm(x, gamma, beta, st, "infer")),
            [x, gamma, beta])

    def test_sigmoid_maxpool(self):
        x = ad.Tensor(rng.normal(size=(3, 6, 4)))
        finite_difference_check(
            lambda: ad.mean(ad.sigmoid(ad.maxpool_points(x, axis=1))), [x])

    def test_huber(self):
        x = ad.Tensor(rng.normal(size=(7,)) * 2)
        t = ad.Tensor(rng.normal(size=(7,)))
        finite_difference_check(lambda: ad.huber(x, t, delta=1.0), [x, t])

    def test_bce_with_logits(self):
        z = ad.Tensor(rng.normal(size=(9, 1)) * 3)
        y = ad.Tensor((rng.random((9, 1)) > 0.4).astype(float))
        finite_difference_check(lambda: ad.bce_with_logits(z, y), [z])

    def test_reductions_and_shaping(self):
        a = ad.Tensor(rng.normal(size=(5, 4)))

        def build():
            lo = ad.reduce_min(a, axis=0, keepdims=True)
            hi = ad.reduce_max(a, axis=1, keepdims=True)
            s = ad.add(ad.sum_(lo), ad.mean(hi))
            n = ad.narrow(ad.reshape(a, (2, 10)), 1, 3, 4)
            return ad.add(s, ad.mean(ad.sqrt(ad.add(ad.mul(n, n), 1e-6))))

        finite_difference_check(build, [a])

    def test_concat_div_clamp(self):
        a = ad.Tensor(rng.uniform(0.5, 2.0, size=(4, 2)))
        b = ad.Tensor(rng.uniform(0.5, 2.0, size=(4, 2)))

        def build():
            c = ad.concat([ad.div(a, b), ad.mul(a, b)], axis=1)
            return ad.mean(ad.clamp_min(c, 0.8))

        finite_difference_check(build, [a, b])

    def test_pairwise_dist(self):
        a = ad.Tensor(rng.normal(size=(6, 3)))
        b = ad.Tensor(rng.normal(size=(5, 3)))
        finite_difference_check(
            lambda: ad.mean(ad.reduce_min(ad.pairwise_dist(a, b), axis=1)), [a, b])


class TestAdam:
    def test_zero_gradient_keeps_parameters(self):
        ps = ad.ParamSet()
        w = ps.add("w", np.array([1.0, -2.0]))
        w.grad = np.zeros(2)
        ad.adam_step(ps, lr=0.1)
        assert np.array_equal(w.values, [1.0, -2.0])

    def test_first_step_magnitude_is_lr(self):
        ps = ad.ParamSet()
        w = ps.add("w", np.array([1.0, 1.0]))
        w.grad = np.array([0.3, -40.0])
        ad.adam_step(ps, lr=0.01)
        # bias-corrected first step: lr * g / (|g| + eps) ~ lr * sign(g)
        assert np.allclose(np.abs(w.values - 1.0), 0.01, atol=1e-6)

    def test_missing_gradient_raises(self):
        ps = ad.ParamSet()
        ps.add("w", np.ones(2))
        with pytest.raises(ad.UninitializedGradientError):
            ad.adam_step(ps, lr=0.1)

    def test_quadratic_bowl_monotone_descent(self):
        ps = ad.ParamSet()
        w = ps.add("w", np.array([3.0, -2.0, 1.5]))
        last = np.inf
        for _ in range(100):
            with ad.Tape() as tape:
                loss = ad.sum_(ad.mul(w, w))
            ad.backward(tape, loss)
            ad.adam_step(ps, lr=1e-2)
            val = float((w.values ** 2).sum())
            assert val < last
            last = val

    def test_determinism(self):
        def run():
            ps = ad.ParamSet()
            w = ps.add("w", np.linspace(-1, 1, 6))
            r = np.random.default_rng(0)
            for _ in range(20):
                with ad.Tape() as tape:
                    t = ad.Tensor(r.normal(size=6))
                    loss = ad.huber(w, t, delta=0.5)
                ad.backward(tape, loss)
                ad.adam_step(ps, lr=5e-3)
            return w.values.copy()

        assert np.array_equal(run(), run())


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        ps = ad.ParamSet()
        ps.add("layer1.w", rng.normal(size=(4, 3)))
        ps.add("layer1.b", rng.normal(size=(3,)))
        ps.add_buffer("bn.running_mean", rng.normal(size=3))
        path = str(tmp_path / "model.ckpt")
        ad.save_params(ps, path)
        loaded = ad.load_params(path)
        assert set(loaded) == {"layer1.w", "layer1.b", "bn.running_mean"}
        for k in ps.params:
            assert np.array_equal(loaded[k], ps.params[k].values)
        assert np.array_equal(loaded["bn.running_mean"], ps.buffers["bn.running_mean"])
        # re-saving the loaded values reproduces the file byte for byte
        ps2 = ad.ParamSet()
        for k in ("layer1.w", "layer1.b"):
            ps2.add(k, loaded[k])
        ps2.add_buffer("bn.running_mean", loaded["bn.running_mean"])
        path2 = str(tmp_path / "model2.ckpt")
        ad.save_params(ps2, path2)
        assert open(path, "rb").read() == open(path2, "rb").read()

    def test_bad_magic_rejected(self, tmp_path):
        path = str(tmp_path / "junk.ckpt")
        with open(path, "wb") as f:
            f.write(b"NOTACKPTxxxxxxx")
        with pytest.raises(ValueError):
            ad.load_params(path)
