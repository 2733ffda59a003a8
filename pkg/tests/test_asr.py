"""Encoder/classifier contracts: shapes, determinism, hand cases."""

import numpy as np
import pytest

from latentflow.asr import CtcAsrModel, EncoderConfig, LatentSequence, sinusoidal_positions
from latentflow.tensor import no_grad

CFG = EncoderConfig.desk(vocab_size=5, feature_dim=12)


def model():
    return CtcAsrModel(CFG, seed=3)


class TestEncoderConfig:
    def test_defaults_are_paper_scale(self):
        cfg = EncoderConfig()
        assert (cfg.layers, cfg.heads, cfg.hidden_dim, cfg.ffn_dim) == (12, 4, 256, 2048)

    def test_blank_is_last_class(self):
        assert CFG.blank_id == 5
        assert CFG.num_classes == 6

    def test_indivisible_heads_rejected(self):
        with pytest.raises(ValueError):
            EncoderConfig(heads=3, hidden_dim=32).validate()


class TestEncode:
    def test_output_shape(self):
        m = model()
        for T in (1, 4, 9):
            x = np.random.default_rng(T).standard_normal((T, 12))
            with no_grad():
                assert m.encode(x).shape == (T, CFG.hidden_dim)

    def test_zero_length_rejected(self):
        with pytest.raises(ValueError):
            model().encode(np.zeros((0, 12)))

    def test_feature_dim_mismatch_rejected(self):
        with pytest.raises(ValueError):
            model().encode(np.zeros((4, 13)))

    def test_bit_identical_across_calls(self):
        m = model()
        x = np.random.default_rng(0).standard_normal((6, 12)).astype(np.float32)
        with no_grad():
            a = m.encode(x).data
            b = m.encode(x).data
        assert np.array_equal(a, b)

    def test_same_seed_same_params(self):
        a, b = CtcAsrModel(CFG, seed=9), CtcAsrModel(CFG, seed=9)
        for k in a.params:
            assert np.array_equal(a.params[k].data, b.params[k].data)


class TestClassify:
    def test_rows_exp_sum_to_one(self):
        m = model()
        x = np.random.default_rng(1).standard_normal((5, 12))
        with no_grad():
            post = np.exp(m.classify(m.encode(x)).data)
        np.testing.assert_allclose(post.sum(axis=1), 1.0, atol=1e-6)

    def test_zero_head_uniform(self):
        m = model()
        m.params["head.w"].data[:] = 0.0
        m.params["head.b"].data[:] = 0.0
        with no_grad():
            out = m.classify(np.random.default_rng(2).standard_normal((3, CFG.hidden_dim)))
        np.testing.assert_allclose(out.data, np.log(1.0 / CFG.num_classes), atol=1e-6)

    def test_hand_set_single_unit_head(self):
        cfg = EncoderConfig.desk(vocab_size=1, feature_dim=2)
        m = CtcAsrModel(cfg, seed=0)
        m.params["head.w"].data[:] = 0.0
        m.params["head.w"].data[0, 0] = 1.0
        m.params["head.b"].data[:] = 0.0
        latent = np.zeros((1, cfg.hidden_dim), dtype=np.float32)
        latent[0, 0] = 3.0
        with no_grad():
            out = m.classify(latent).data
        z = np.log(np.exp(3.0) + 1.0)
        np.testing.assert_allclose(out[0], [3.0 - z, -z], atol=1e-6)

    def test_latent_dim_mismatch_rejected(self):
        with pytest.raises(ValueError):
            model().classify(np.zeros((3, CFG.hidden_dim + 1)))


class TestLatentSequence:
    def test_provenance_tags(self):
        for tag in ("clean", "noisy", "enhanced", "refined"):
            LatentSequence(np.zeros((2, 3)), tag)
        with pytest.raises(ValueError):
            LatentSequence(np.zeros((2, 3)), "mystery")

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            LatentSequence(np.array([[np.nan]]), "clean")


def test_positional_encoding_rows_distinct():
    table = sinusoidal_positions(16, 8)
    assert table.shape == (16, 8)
    assert len({row.tobytes() for row in table}) == 16
