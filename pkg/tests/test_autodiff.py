"""Gradient, optimizer and sampling checks for the tensor core."""

import numpy as np
import pytest

from conftest import (PRIMITIVE_CASES, finite_difference, max_rel_error,
                      primitive_gradcheck_error)
from hpvae import autodiff as ad
from hpvae.autodiff import Adam, NumericError, ShapeError, Tensor


class TestForward:
    def test_affine_tanh_matches_scalar_table(self):
        x = Tensor(np.array([[0.5, -0.5]]))
        w = Tensor(np.eye(2), trainable=True)
        b = Tensor(np.zeros(2), trainable=True)
        out = ad.tanh(ad.add(ad.matmul(x, w), b))
        np.testing.assert_allclose(out.data, [[0.46211715726000974, -0.46211715726000974]],
                                   rtol=1e-12)

    def test_zero_input_zero_bias_gives_zero_preactivation(self):
        x = Tensor(np.zeros((3, 4)))
        w = Tensor(np.random.default_rng(0).normal(size=(4, 5)))
        out = ad.add(ad.matmul(x, w), Tensor(np.zeros(5)))
        assert np.all(out.data == 0.0)

    def test_log_softmax_of_constant_vector(self):
        out = ad.log_softmax(Tensor(np.zeros((1, 3))))
        np.testing.assert_allclose(out.data, np.full((1, 3), -np.log(3.0)), rtol=1e-15)

    def test_log_softmax_normalizes_within_1e9(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            v = rng.uniform(-50, 50, size=(4, 7))
            total = np.exp(ad.log_softmax(Tensor(v)).data).sum(axis=-1)
            np.testing.assert_allclose(total, 1.0, atol=1e-9)

    def test_shape_mismatch_names_op(self):
        with pytest.raises(ShapeError, match="matmul"):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_non_finite_forward_raises(self):
        with pytest.raises(NumericError):
            ad.exp(Tensor(np.array([1e308])))

    def test_forward_is_deterministic(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(3, 4))
        w = rng.normal(size=(4, 2))
        a = ad.tanh(ad.matmul(Tensor(x), Tensor(w))).data
        b = ad.tanh(ad.matmul(Tensor(x), Tensor(w))).data
        assert np.array_equal(a, b)


class TestBackward:
    def test_linear_map_gradient(self):
        w = Tensor(np.zeros((3, 2)), trainable=True)
        x = Tensor(np.array([[1.0], [2.0]]))
        loss = ad.reduce_sum(ad.matmul(w, x))
        loss.backward()
        np.testing.assert_array_equal(w.grad, np.tile([[1.0, 2.0]], (3, 1)))

    def test_tanh_derivative_at_origin(self):
        w = Tensor(np.zeros(()), trainable=True)
        loss = ad.tanh(ad.mul(w, Tensor(np.ones(()))))
        loss.backward()
        assert w.grad == pytest.approx(1.0)

    def test_random_graph_matches_finite_differences(self):
        """Five scalar parameters through a mixed-op graph vs the FD oracle."""
        rng = np.random.default_rng(11)
        arrays = {f"p{i}": np.array(rng.uniform(0.2, 0.8)) for i in range(5)}

        def loss_fn(arrs):
            p = {k: Tensor(v, trainable=True) for k, v in arrs.items()}
            out = ad.tanh(ad.add(ad.mul(p["p0"], p["p1"]), p["p2"]))
            out = ad.add(ad.mul(out, ad.exp(p["p3"])), ad.log(p["p4"]))
            loss = ad.reduce_sum(out)
            loss_fn.params = p
            return loss

        loss = loss_fn(arrays)
        loss.backward()
        analytic = {k: t.grad.copy() for k, t in loss_fn.params.items()}
        numeric = finite_difference(lambda arrs: loss_fn(arrs).item(), arrays)
        assert max_rel_error(analytic, numeric) < 1e-4

    def test_backward_without_forward_is_usage_error(self):
        with pytest.raises(RuntimeError):
            Tensor(np.ones(()), trainable=True).backward()

    def test_backward_requires_scalar(self):
        out = ad.tanh(Tensor(np.ones(3), trainable=True))
        with pytest.raises(ValueError):
            out.backward()

    def test_gradients_accumulate_once_per_application(self):
        x = Tensor(np.array(2.0), trainable=True)
        loss = ad.reduce_sum(ad.add(ad.mul(x, x), x))  # x^2 + x
        loss.backward()
        assert x.grad == pytest.approx(5.0)
        loss.backward()  # grads reset per call, not accumulated across calls
        assert x.grad == pytest.approx(5.0)


class TestPrimitiveGradients:
    """Every primitive against central finite differences, 100 instances each."""

    @pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
    def test_primitive_matches_finite_differences(self, name):
        assert primitive_gradcheck_error(name, n_instances=100) < 1e-4


class TestDropoutMask:
    def test_rate_zero_is_identity(self):
        mask = ad.dropout_mask((4, 4), 0.0, np.random.default_rng(0))
        assert np.all(mask.data == 1.0)

    def test_kept_fraction_concentrates(self):
        mask = ad.dropout_mask((100_000,), 0.5, np.random.default_rng(42))
        kept = np.mean(mask.data > 0)
        assert abs(kept - 0.5) < 0.01
        np.testing.assert_allclose(mask.data[mask.data > 0], 2.0)

    def test_inference_mode_is_identity(self):
        mask = ad.dropout_mask((8,), 0.9, np.random.default_rng(0), training=False)
        assert np.all(mask.data == 1.0)

    def test_invalid_rate_rejected(self):
        with pytest.raises(ValueError):
            ad.dropout_mask((2,), 1.0, np.random.default_rng(0))
        with pytest.raises(ValueError):
            ad.dropout_mask((2,), -0.1, np.random.default_rng(0))


class TestGaussianSample:
    def test_tiny_sigma_returns_mu(self):
        mu = Tensor(np.array([1.0, -2.0]))
        out = ad.gaussian_sample(mu, Tensor(np.full(2, -10.0)), np.random.default_rng(0))
        np.testing.assert_allclose(out.data, mu.data, atol=1e-3)

    def test_sample_statistics(self):
        rng = np.random.default_rng(123)
        out = ad.gaussian_sample(Tensor(np.zeros(100_000)), Tensor(np.zeros(100_000)), rng)
        assert abs(out.data.mean()) < 0.02
        assert abs(out.data.var() - 1.0) < 0.05

    def test_seeded_reproducibility(self):
        mu, ls = Tensor(np.zeros(16)), Tensor(np.zeros(16))
        a = ad.gaussian_sample(mu, ls, np.random.default_rng(9)).data
        b = ad.gaussian_sample(mu, ls, np.random.default_rng(9)).data
        assert np.array_equal(a, b)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            ad.gaussian_sample(Tensor(np.zeros(3)), Tensor(np.zeros(4)),
                               np.random.default_rng(0))

    def test_gradient_flows_to_mu_and_log_sigma(self):
        mu = Tensor(np.zeros(4), trainable=True)
        ls = Tensor(np.zeros(4), trainable=True)
        out = ad.gaussian_sample(mu, ls, np.random.default_rng(1))
        ad.reduce_sum(out).backward()
        np.testing.assert_allclose(mu.grad, np.ones(4))
        assert np.any(ls.grad != 0.0)


class TestAdam:
    def _params(self):
        return {"w": Tensor(np.array([1.0, -1.0]), trainable=True)}

    def test_zero_gradient_is_fixed_point(self):
        params = self._params()
        before = params["w"].data.copy()
        opt = Adam(params, lr=0.1)
        for _ in range(5):
            opt.step({"w": np.zeros(2)})
        assert np.array_equal(params["w"].data, before)

    def test_first_step_magnitude_is_lr(self):
        params = self._params()
        before = params["w"].data.copy()
        Adam(params, lr=0.001).step({"w": np.ones(2)})
        delta = before - params["w"].data
        np.testing.assert_allclose(delta, 0.001, rtol=1e-6)

    def test_seeded_runs_are_bitwise_identical(self):
        results = []
        for _ in range(2):
            rng = np.random.default_rng(77)
            params = {"w": Tensor(rng.normal(size=(3, 3)), trainable=True)}
            opt = Adam(params, lr=0.01)
            for _ in range(10):
                opt.step({"w": rng.normal(size=(3, 3))})
            results.append(params["w"].data.copy())
        assert np.array_equal(results[0], results[1])

    def test_non_finite_gradient_aborts_update(self):
        params = self._params()
        before = params["w"].data.copy()
        opt = Adam(params)
        with pytest.raises(NumericError):
            opt.step({"w": np.array([np.nan, 0.0])})
        assert np.array_equal(params["w"].data, before)
        assert opt.step_count == 0

    def test_state_roundtrip(self):
        params = self._params()
        opt = Adam(params, lr=0.05)
        opt.step({"w": np.array([0.5, -0.5])})
        state = opt.state_dict()
        other = Adam(self._params(), lr=0.05)
        other.load_state_dict(state)
        assert other.step_count == 1
        np.testing.assert_array_equal(other.m["w"], opt.m["w"])
