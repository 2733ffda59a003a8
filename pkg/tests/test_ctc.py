"""CTC loss vs. brute-force path enumeration, gradient checks, decoding, WER."""

import math

import numpy as np
import pytest

from latentflow import finite_diff_grad, log_softmax, tensor
from latentflow.ctc import ctc_log_prob, ctc_loss, greedy_decode, min_frames_required
from latentflow.metrics import edit_distance, wer
from latentflow.oracles import collapse_path, ctc_log_prob_bruteforce


def random_logpost(rng, T, classes):
    logits = rng.standard_normal((T, classes)) * 2.0
    logits -= np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return logits


class TestCtcLogProb:
    def test_single_frame_single_label(self):
        rng = np.random.default_rng(0)
        lp = random_logpost(rng, 1, 3)
        out = ctc_log_prob(tensor(lp), [1])
        np.testing.assert_allclose(out.data, lp[0][1], atol=1e-12)

    def test_empty_target_all_blank(self):
        rng = np.random.default_rng(1)
        lp = random_logpost(rng, 4, 3)
        out = ctc_log_prob(tensor(lp), [])
        np.testing.assert_allclose(out.data, lp[:, 2].sum(), atol=1e-12)

    def test_uniform_two_frame_anchor(self):
        # V=1, uniform p=0.5 per class per frame, target [a]:
        # matching paths (a,a),(a,-),(-,a) give P = 3/4
        lp = np.log(np.full((2, 2), 0.5))
        out = ctc_log_prob(tensor(lp), [0])
        np.testing.assert_allclose(out.data, math.log(0.75), atol=1e-12)
        np.testing.assert_allclose(ctc_loss(tensor(lp), [0]).data, 0.287682, atol=1e-6)

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            lp = random_logpost(rng, 5, 4)
            y = list(rng.integers(0, 3, size=rng.integers(0, 3)))
            if min_frames_required(y) > 5:
                continue
            assert ctc_loss(tensor(lp), y).data >= 0.0

    def test_target_too_long_raises(self):
        lp = random_logpost(np.random.default_rng(3), 2, 3)
        with pytest.raises(ValueError, match="at least"):
            ctc_log_prob(tensor(lp), [0, 0])  # repeat needs 3 frames

    def test_invalid_symbol_raises(self):
        lp = random_logpost(np.random.default_rng(4), 3, 3)
        with pytest.raises(ValueError, match="symbol"):
            ctc_log_prob(tensor(lp), [2])  # 2 is the blank here

    def test_min_frames_counts_repeats(self):
        assert min_frames_required([]) == 0
        assert min_frames_required([1, 1]) == 3
        assert min_frames_required([1, 2, 2, 2]) == 6


@pytest.mark.parametrize("T", [1, 2, 3, 4])
@pytest.mark.parametrize("V", [1, 2, 3])
@pytest.mark.parametrize("target_len", [0, 1, 2])
def test_matches_bruteforce_enumeration(T, V, target_len):
    rng = np.random.default_rng(T * 100 + V * 10 + target_len)
    for _ in range(3):
        target = list(rng.integers(0, V, size=target_len))
        lp = random_logpost(rng, T, V + 1)
        if min_frames_required(target) > T:
            with pytest.raises(ValueError):
                ctc_log_prob(tensor(lp), target)
            continue
        got = ctc_log_prob(tensor(lp), target).data
        want = ctc_log_prob_bruteforce(lp, target)
        np.testing.assert_allclose(got, want, atol=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(500 + seed)
    T = int(rng.integers(2, 7))
    V = int(rng.integers(1, 4))
    target = list(rng.integers(0, V, size=rng.integers(1, 3)))
    while min_frames_required(target) > T:
        target = target[:-1]
    logits = tensor(rng.standard_normal((T, V + 1)), requires_grad=True)
    ctc_loss(log_softmax(logits, axis=-1), target).backward()
    analytic = logits.grad.copy()

    def f(values):
        saved = logits.data
        logits.data = values
        try:
            return float(ctc_loss(log_softmax(logits, axis=-1), target).data)
        finally:
            logits.data = saved

    numeric = finite_diff_grad(f, logits.data, h=1e-5)
    denom = np.maximum(np.abs(numeric), 1e-3)
    assert (np.abs(analytic - numeric) / denom).max() <= 1e-5


def test_occupancy_rows_sum_to_one():
    # gradient of log P w.r.t. log-posteriors sums to 1 at every frame
    rng = np.random.default_rng(42)
    lp = tensor(random_logpost(rng, 6, 4), requires_grad=True)
    ctc_log_prob(lp, [0, 2, 1]).backward()
    np.testing.assert_allclose(lp.grad.sum(axis=1), 1.0, atol=1e-9)


class TestGreedyDecode:
    def one_hot(self, path, classes):
        eye = np.full((len(path), classes), -10.0)
        for t, k in enumerate(path):
            eye[t, k] = 0.0
        return eye

    def test_all_blank_empty(self):
        out = greedy_decode(self.one_hot([2, 2, 2], 3))
        assert out == []

    def test_repeat_collapse(self):
        assert greedy_decode(self.one_hot([0, 0, 2], 3)) == [0]

    def test_blank_separates_repeats(self):
        assert greedy_decode(self.one_hot([0, 2, 0], 3)) == [0, 0]

    def test_tie_breaks_to_lowest_index(self):
        lp = np.zeros((1, 3))
        assert greedy_decode(lp) == [0]

    def test_collapse_roundtrip_property(self):
        # decoding a one-hot rendering of any valid path of Y returns Y
        rng = np.random.default_rng(7)
        for _ in range(20):
            y = list(rng.integers(0, 3, size=rng.integers(1, 4)))
            path = []
            for i, s in enumerate(y):
                if i > 0 and y[i - 1] == s:
                    path.append(3)
                path.extend([s] * int(rng.integers(1, 3)))
                if rng.random() < 0.5:
                    path.append(3)
            assert greedy_decode(self.one_hot(path, 4)) == y
            assert list(collapse_path(path, 3)) == y


class TestWer:
    def test_identical_zero(self):
        assert wer([1, 2, 3], [1, 2, 3]) == 0.0

    def test_half(self):
        assert wer([0, 1], [1]) == 0.5

    def test_kitten_sitting(self):
        ref = [ord(c) for c in "kitten"]
        hyp = [ord(c) for c in "sitting"]
        assert edit_distance(ref, hyp) == 3
        assert wer(ref, hyp) == 0.5

    def test_empty_reference_rejected(self):
        with pytest.raises(ValueError):
            wer([], [1])

    def test_insertions_can_exceed_one(self):
        assert wer([1], [1, 2, 3]) == 2.0
