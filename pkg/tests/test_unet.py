"""Vector-field U-Net: shape contract, zero-init identity, gradients."""

import numpy as np
import pytest

from latentflow import Adam, finite_diff_grad
from latentflow.asr import LatentSequence
from latentflow.flow import FlowConfig, LatentPair, cfm_loss, refine
from latentflow.tensor import no_grad
from latentflow.unet import RefinerConfig, VectorFieldModel, sinusoidal_time_embedding

DESK = RefinerConfig.desk(latent_dim=8)


def desk_model(seed=0):
    return VectorFieldModel(DESK, seed=seed)


class TestTimeEmbedding:
    def test_t0_sin_zero_cos_one(self):
        e = sinusoidal_time_embedding(0.0, 16)
        np.testing.assert_array_equal(e[:8], 0.0)
        np.testing.assert_array_equal(e[8:], 1.0)

    def test_distinct_on_grid(self):
        embs = [sinusoidal_time_embedding(t, 16).tobytes() for t in (0.0, 0.5, 1.0)]
        assert len(set(embs)) == 3

    def test_lipschitz_continuity(self):
        # ||e(t) - e(t + 1e-4)|| <= 1e-2 given the chosen frequency range
        for dim in (16, 32, 128):
            for t in (0.0, 0.33, 0.9):
                d = sinusoidal_time_embedding(t + 1e-4, dim) - sinusoidal_time_embedding(t, dim)
                assert np.linalg.norm(d) <= 1e-2

    def test_odd_dim_rejected(self):
        with pytest.raises(ValueError):
            sinusoidal_time_embedding(0.5, 7)


class TestConfig:
    def test_paper_defaults(self):
        cfg = RefinerConfig()
        assert cfg.depth == 4 and len(cfg.channel_mults) == 4

    def test_mult_count_must_match_depth(self):
        with pytest.raises(ValueError):
            RefinerConfig(depth=3, channel_mults=(1, 2)).validate()

    def test_odd_time_dim_rejected(self):
        with pytest.raises(ValueError):
            RefinerConfig(depth=1, channel_mults=(1,), time_dim=5).validate()


class TestForward:
    @pytest.mark.parametrize("T", [5, 8, 17, 1])
    def test_shape_preserved(self, T):
        m = desk_model()
        rng = np.random.default_rng(T)
        x = rng.standard_normal((T, 8))
        c = rng.standard_normal((T, 8))
        with no_grad():
            out = m.forward(x, c, 0.5)
        assert out.shape == (T, 8)

    def test_deterministic(self):
        m = desk_model()
        rng = np.random.default_rng(1)
        x, c = rng.standard_normal((7, 8)), rng.standard_normal((7, 8))
        with no_grad():
            a = m.forward(x, c, 0.25).data
            b = m.forward(x, c, 0.25).data
        assert np.array_equal(a, b)

    def test_shape_mismatch_rejected(self):
        m = desk_model()
        with pytest.raises(ValueError):
            m.forward(np.zeros((4, 8)), np.zeros((5, 8)), 0.5)

    def test_t_out_of_range_rejected(self):
        m = desk_model()
        with pytest.raises(ValueError):
            m.forward(np.zeros((4, 8)), np.zeros((4, 8)), 1.5)

    def test_same_seed_identical_params(self):
        a, b = desk_model(seed=4), desk_model(seed=4)
        for k in a.params:
            assert np.array_equal(a.params[k].data, b.params[k].data)


class TestZeroInit:
    def test_fresh_model_outputs_zero(self):
        m = desk_model()
        rng = np.random.default_rng(2)
        x, c = rng.standard_normal((6, 8)), rng.standard_normal((6, 8))
        with no_grad():
            np.testing.assert_array_equal(m.forward(x, c, 0.3).data, 0.0)

    def test_refine_is_identity_before_training(self):
        m = desk_model()
        z = LatentSequence(np.random.default_rng(3).standard_normal((9, 8)), "noisy")
        out = refine(z, m, FlowConfig(n_steps=3))
        np.testing.assert_array_equal(out.data, z.data)


def _random_pairs(rng, n, T, d):
    return [
        LatentPair(rng.standard_normal((T, d)), rng.standard_normal((T, d)), str(i))
        for i in range(n)
    ]


def _train_one_step(m, pairs, ts):
    loss = cfm_loss(m, pairs, None, FlowConfig(), t_values=ts)
    loss.backward()
    grads = [p.grad.copy() for p in m.parameters()]
    Adam(m.parameters(), lr=1e-2).step(grads)


class TestGradientFlow:
    def test_every_parameter_gets_gradient_after_one_step(self):
        # the zero output head blocks upstream gradients only until its own
        # first update; afterwards no branch is dead
        m = desk_model(seed=5)
        rng = np.random.default_rng(6)
        pairs = _random_pairs(rng, 2, 8, 8)
        _train_one_step(m, pairs, [0.2, 0.7])
        loss = cfm_loss(m, pairs, None, FlowConfig(), t_values=[0.4, 0.6])
        loss.backward()
        dead = [k for k, p in m.params.items() if np.max(np.abs(p.grad)) == 0.0]
        assert dead == []

    def test_time_conditioning_not_degenerate(self):
        m = desk_model(seed=7)
        rng = np.random.default_rng(8)
        pairs = _random_pairs(rng, 2, 8, 8)
        _train_one_step(m, pairs, [0.1, 0.9])
        x, c = pairs[0].source, pairs[0].source
        with no_grad():
            v0 = m.forward(x, c, 0.0).data
            v1 = m.forward(x, c, 1.0).data
        assert np.linalg.norm(v0 - v1) > 0.0


class TestPadding:
    def test_multiple_length_needs_no_padding_and_extra_padding_is_inert(self):
        # interior rows are unaffected by forcing one extra padding block;
        # trailing rows inside the kernels' receptive field are excluded
        m = desk_model(seed=9)
        rng = np.random.default_rng(10)
        pairs = _random_pairs(rng, 2, 16, 8)
        _train_one_step(m, pairs, [0.3, 0.6])  # nonzero output head
        T = 64
        x, c = rng.standard_normal((T, 8)), rng.standard_normal((T, 8))
        with no_grad():
            direct = m.forward(x, c, 0.5).data
            padded = m.forward(x, c, 0.5, pad_to=T + 2 ** DESK.depth * 4).data
        assert padded.shape == (T, 8)
        margin = 40  # conservative receptive-field bound at depth 2
        np.testing.assert_allclose(direct[: T - margin], padded[: T - margin], atol=1e-5)


@pytest.mark.parametrize("seed", range(4))
def test_unet_composed_loss_gradient_matches_finite_differences(seed):
    # micro config in float64 so every coordinate can be checked
    cfg = RefinerConfig(depth=1, base_channels=4, channel_mults=(1,), time_dim=4, latent_dim=2)
    m = VectorFieldModel(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(40 + seed)
    # nonzero output head so gradients reach every branch
    m.params["out.conv.w"].data[:] = 0.1 * rng.standard_normal(m.params["out.conv.w"].data.shape)
    pairs = _random_pairs(rng, 2, 5, 2)
    ts = [0.25, 0.75]

    def loss():
        return cfm_loss(m, pairs, None, FlowConfig(), t_values=ts)

    loss().backward()
    for name, p in m.params.items():
        analytic = p.grad.copy()

        def f(values, p=p):
            saved = p.data
            p.data = values
            try:
                return float(loss().data)
            finally:
                p.data = saved

        # h=2e-6: at 1e-5 the O(h^2) truncation through the normalization
        # stack already exceeds the 1e-5 relative tolerance
        numeric = finite_diff_grad(f, p.data, h=2e-6)
        rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-3)
        assert rel.max() <= 1e-5, f"{name}: rel err {rel.max():.2e}"
