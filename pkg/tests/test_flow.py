"""Flow-matching core: path/field identities, Euler exactness, CFM loss."""

import numpy as np
import pytest

from latentflow import finite_diff_grad
from latentflow.asr import LatentSequence
from latentflow.flow import (
    FlowConfig,
    LatentPair,
    cfm_loss,
    euler_integrate,
    ot_interpolate,
    refine,
    target_field,
)
from latentflow.tensor import Tensor


class TestOtPath:
    def test_t0_endpoint(self):
        rng = np.random.default_rng(0)
        x0, x1 = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
        np.testing.assert_array_equal(ot_interpolate(x0, x1, 0.0, 0.3), x0)

    def test_t1_endpoint_sigma0(self):
        rng = np.random.default_rng(1)
        x0, x1 = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
        np.testing.assert_allclose(ot_interpolate(x0, x1, 1.0, 0.0), x1, atol=1e-12)

    def test_hand_value(self):
        out = ot_interpolate(np.array([2.0]), np.array([5.0]), 0.5, 0.1)
        np.testing.assert_allclose(out, [3.6], atol=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ot_interpolate(np.zeros(2), np.zeros(3), 0.5)

    def test_t_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            ot_interpolate(np.zeros(2), np.zeros(2), 1.5)


class TestTargetField:
    def test_fixed_point_zero(self):
        x = np.random.default_rng(2).standard_normal((3, 2))
        np.testing.assert_array_equal(target_field(x, x, 0.0), np.zeros_like(x))

    def test_hand_value(self):
        out = target_field(np.array([2.0]), np.array([5.0]), 0.1)
        np.testing.assert_allclose(out, [3.2], atol=1e-12)

    def test_path_derivative_consistency(self):
        # finite-differencing the path in t recovers the constant field
        rng = np.random.default_rng(3)
        x0, x1 = rng.standard_normal(5), rng.standard_normal(5)
        for sigma in (0.0, 0.1):
            u = target_field(x0, x1, sigma)
            for t in (0.0, 0.3, 0.7):
                delta = 1e-4
                fd = (
                    ot_interpolate(x0, x1, t + delta, sigma)
                    - ot_interpolate(x0, x1, t, sigma)
                ) / delta
                np.testing.assert_allclose(fd, u, atol=1e-6)


class TestEuler:
    def test_zero_field_identity(self):
        x0 = np.random.default_rng(4).standard_normal((3, 2))
        for n in (1, 3, 10):
            out = euler_integrate(lambda x, c, t: np.zeros_like(x), x0, x0, FlowConfig(n_steps=n))
            np.testing.assert_array_equal(out, x0)

    def test_constant_field_exact_any_steps(self):
        rng = np.random.default_rng(5)
        x0 = rng.standard_normal((4, 3))
        c = rng.standard_normal((4, 3))
        for n in (1, 3, 10):
            out = euler_integrate(lambda x, cond, t: c, x0, x0, FlowConfig(n_steps=n))
            np.testing.assert_allclose(out, x0 + c, atol=1e-12)

    def test_linear_field_two_steps(self):
        out = euler_integrate(lambda x, c, t: x, np.array([1.0]), np.array([1.0]), FlowConfig(n_steps=2))
        np.testing.assert_allclose(out, [2.25], atol=1e-12)

    def test_non_finite_state_names_step(self):
        def blowup(x, c, t):
            return np.full_like(x, np.inf)

        with pytest.raises(ArithmeticError, match="step 0"):
            euler_integrate(blowup, np.zeros(2), np.zeros(2), FlowConfig(n_steps=3))

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError):
            FlowConfig(n_steps=0).validate()
        with pytest.raises(ValueError):
            FlowConfig(sigma_min=1.0).validate()


class _OracleModel:
    """Emits exactly the constant target velocity toward a fixed clean latent."""

    def __init__(self, z_clean, sigma_min=0.0):
        self.z_clean = z_clean
        self.sigma_min = sigma_min

    def forward(self, x_t, cond, t):
        return Tensor(target_field(cond, self.z_clean, self.sigma_min))

    def velocity(self, x, cond, t):
        return target_field(cond, self.z_clean, self.sigma_min)


class _ZeroModel:
    def forward(self, x_t, cond, t):
        return Tensor(np.zeros_like(x_t))

    def velocity(self, x, cond, t):
        return np.zeros_like(x)


class TestCfmLoss:
    def test_oracle_model_zero_loss(self):
        rng = np.random.default_rng(6)
        zc = rng.standard_normal((5, 4))
        zn = rng.standard_normal((5, 4))
        pairs = [LatentPair(zn, zc, "a")]
        loss = cfm_loss(_OracleModel(zc), pairs, np.random.default_rng(0), FlowConfig())
        np.testing.assert_allclose(loss.data, 0.0, atol=1e-12)

    def test_zero_model_constant_loss_in_t(self):
        pairs = [LatentPair(np.array([[0.0]]), np.array([[2.0]]), "a")]
        for t in (0.0, 0.25, 0.9):
            loss = cfm_loss(_ZeroModel(), pairs, None, FlowConfig(), t_values=[t])
            np.testing.assert_allclose(loss.data, 4.0, atol=1e-12)

    def test_batch_order_invariant(self):
        rng = np.random.default_rng(7)
        pairs = [
            LatentPair(rng.standard_normal((3, 2)), rng.standard_normal((3, 2)), str(i))
            for i in range(4)
        ]
        ts = [0.1, 0.5, 0.7, 0.9]
        a = cfm_loss(_ZeroModel(), pairs, None, FlowConfig(), t_values=ts)
        order = [2, 0, 3, 1]
        b = cfm_loss(
            _ZeroModel(), [pairs[i] for i in order], None, FlowConfig(), t_values=[ts[i] for i in order]
        )
        np.testing.assert_allclose(a.data, b.data, atol=1e-12)

    def test_unpaired_shapes_rejected(self):
        pairs = [LatentPair(np.zeros((2, 2)), np.zeros((3, 2)), "bad")]
        with pytest.raises(ValueError, match="unpaired"):
            cfm_loss(_ZeroModel(), pairs, np.random.default_rng(0), FlowConfig())

    def test_gradient_matches_finite_differences_linear_model(self):
        # 2-parameter linear field v = a*x_t + b, frozen t draws, 64-bit
        rng = np.random.default_rng(8)
        pairs = [
            LatentPair(rng.standard_normal((3, 2)), rng.standard_normal((3, 2)), str(i))
            for i in range(3)
        ]
        ts = [0.2, 0.5, 0.8]

        class Linear:
            def __init__(self):
                self.theta = Tensor(np.array([0.7, -0.3]), requires_grad=True)

            def forward(self, x_t, cond, t):
                a = self.theta.narrow(0, 0, 1)
                b = self.theta.narrow(0, 1, 1)
                return Tensor(x_t) * a + b

        m = Linear()
        cfm_loss(m, pairs, None, FlowConfig(), t_values=ts).backward()
        analytic = m.theta.grad.copy()

        def f(values):
            saved = m.theta.data
            m.theta.data = values
            try:
                return float(cfm_loss(m, pairs, None, FlowConfig(), t_values=ts).data)
            finally:
                m.theta.data = saved

        numeric = finite_diff_grad(f, m.theta.data, h=1e-6)
        rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-3)
        assert rel.max() <= 1e-5


class TestRefine:
    def test_zero_model_noop(self):
        z = LatentSequence(np.random.default_rng(9).standard_normal((6, 4)), "noisy")
        out = refine(z, _ZeroModel(), FlowConfig(n_steps=3))
        np.testing.assert_array_equal(out.data, z.data)
        assert out.source == "refined"

    def test_oracle_model_reaches_clean(self):
        rng = np.random.default_rng(10)
        zc = rng.standard_normal((5, 3))
        zn = rng.standard_normal((5, 3))
        for n in (1, 3, 10):
            out = refine(LatentSequence(zn, "noisy"), _OracleModel(zc), FlowConfig(n_steps=n))
            np.testing.assert_allclose(out.data, zc, atol=1e-12)

    def test_oracle_with_sigma_min_lands_shifted(self):
        rng = np.random.default_rng(11)
        zc = rng.standard_normal((4, 2))
        zn = rng.standard_normal((4, 2))
        sigma = 0.2
        out = refine(
            LatentSequence(zn, "noisy"), _OracleModel(zc, sigma), FlowConfig(sigma_min=sigma)
        )
        np.testing.assert_allclose(out.data, zc + sigma * zn, atol=1e-12)

    def test_input_not_mutated(self):
        data = np.random.default_rng(12).standard_normal((4, 2))
        z = LatentSequence(data.copy(), "noisy")
        refine(z, _OracleModel(np.zeros((4, 2))), FlowConfig())
        np.testing.assert_array_equal(z.data, data)
