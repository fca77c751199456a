#!python
# -*- Python -*-

import logging
import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from dcim_avsr import tensor as T
from dcim_avsr.ctc import (collapse, ctc_brute_force, ctc_loss, ctc_loss_and_grad, ctc_loss_batch, edit_distance,
                           greedy_decode, inter_ctc_combine, min_frames, wer)
from dcim_avsr.errors import ConfigError, TokenError, UndefinedRateError
from dcim_avsr.gradcheck import check_gradients
from dcim_avsr.verify import ctc_oracle_grid


logger = logging.getLogger(__name__)


def _logp(rng, t, v):
    z = rng.standard_normal((t, v))
    return z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))


def _two_pass_collapse(path):
    merged = [k for i, k in enumerate(path) if i == 0 or k != path[i - 1]]
    return [int(k) for k in merged if k != 0]


class TestLoss(unittest.TestCase):
    def test_single_frame(self):
        logp = _logp(np.random.default_rng(0), 1, 4)
        loss, _ = ctc_loss_and_grad(logp, [2])
        assert abs(loss - (-logp[0, 2])) <= 1e-12

    def test_empty_labels(self):
        logp = _logp(np.random.default_rng(1), 5, 4)
        loss, _ = ctc_loss_and_grad(logp, [])
        assert abs(loss + logp[:, 0].sum()) <= 1e-12

    def test_infeasible(self):
        logp = _logp(np.random.default_rng(2), 2, 4)
        loss, grad = ctc_loss_and_grad(logp, [1, 1])
        assert loss == np.inf
        assert not np.any(grad)
        assert min_frames([1, 1]) == 3
        assert min_frames([1, 2, 3]) == 3

    def test_bad_token(self):
        logp = _logp(np.random.default_rng(3), 4, 4)
        for labels in ([0], [4], [-1]):
            with self.assertRaises(TokenError):
                ctc_loss_and_grad(logp, labels)

    def test_oracle_grid(self):
        checked, worst, failures = ctc_oracle_grid(n_seeds=10)
        assert checked == 6 * 4 * 3 * 10
        assert not failures, failures[:3]
        assert worst <= 1e-9

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 5), st.integers(2, 4), st.lists(st.integers(1, 3), max_size=3), st.integers(0, 2 ** 31 - 1))
    def test_matches_enumeration(self, t, v, labels, seed):
        labels = [min(k, v - 1) for k in labels]
        logp = _logp(np.random.default_rng(seed), t, v)
        dp, _ = ctc_loss_and_grad(logp, labels)
        ref = ctc_brute_force(logp, labels)
        if np.isinf(ref):
            assert np.isinf(dp)
        else:
            assert abs(dp - ref) <= 1e-9
            assert dp >= 0.0

    def test_gradient_of_logits(self):
        rng = np.random.default_rng(4)
        logits = T.Tensor(rng.standard_normal((3, 3)), requires_grad=True)
        report = check_gradients(lambda: ctc_loss(T.log_softmax(logits), [2]), [logits], rtol=1e-5)
        assert report.passed, str(report)
        with T.Tape() as tape:
            loss = ctc_loss(T.log_softmax(logits), [2])
        grads = tape.backward(loss)
        assert np.max(np.abs(grads[logits].sum(axis=1))) <= 1e-12

    def test_batch_mean(self):
        rng = np.random.default_rng(5)
        logp = np.stack([_logp(rng, 6, 4), _logp(rng, 6, 4)])
        logp[1, 4:] = 0.0
        out = ctc_loss_batch(T.Tensor(logp), [6, 4], [[1, 2], [3]])
        expected = (ctc_loss_and_grad(logp[0], [1, 2])[0] + ctc_loss_and_grad(logp[1, :4], [3])[0]) / 2
        assert abs(out.item() - expected) <= 1e-12


class TestInterCTC(unittest.TestCase):
    def test_combine(self):
        assert inter_ctc_combine(1.0, [2.0, 4.0], 0.0) == 1.0
        assert inter_ctc_combine(1.0, [], 0.0) == 1.0
        assert inter_ctc_combine(1.0, [2.5], 1.0) == 2.5
        assert abs(inter_ctc_combine(1.0, [2.0, 4.0], 0.3) - 1.6) <= 1e-12

    def test_errors(self):
        with self.assertRaises(ConfigError):
            inter_ctc_combine(1.0, [], 0.3)
        with self.assertRaises(ConfigError):
            inter_ctc_combine(1.0, [1.0], 1.5)

    def test_tensors(self):
        final = T.Tensor(1.0, requires_grad=True)
        tap = T.Tensor(3.0, requires_grad=True)
        with T.Tape() as tape:
            loss = inter_ctc_combine(final, [tap], 0.25)
        grads = tape.backward(loss)
        assert abs(loss.item() - 1.5) <= 1e-12
        assert grads[final] == 0.75 and grads[tap] == 0.25


class TestDecode(unittest.TestCase):
    def test_all_blank(self):
        assert greedy_decode(np.log(np.array([[0.9, 0.1], [0.8, 0.2]]))) == []

    def test_collapse_rule(self):
        a = 2
        path = [a, a, 0, a]
        logp = np.full((4, 3), -5.0)
        logp[np.arange(4), path] = -0.1
        assert greedy_decode(logp) == [a, a]
        assert collapse(path) == [a, a]

    def test_ties_go_low(self):
        assert greedy_decode(np.zeros((1, 3))) == []
        assert greedy_decode(np.array([[-1.0, -0.5, -0.5]])) == [1]

    def test_length(self):
        logp = np.full((4, 3), -5.0)
        logp[:, 1] = 0.0
        logp[2:, 2] = 1.0
        assert greedy_decode(logp) == [1, 2]
        assert greedy_decode(logp, 2) == [1]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 12), st.integers(2, 6), st.integers(0, 2 ** 31 - 1))
    def test_random_against_two_pass(self, t, v, seed):
        logp = _logp(np.random.default_rng(seed), t, v)
        assert greedy_decode(logp) == _two_pass_collapse(list(np.argmax(logp, axis=1)))
        # any strictly increasing map per row keeps the argmax
        assert greedy_decode(np.exp(logp) * 3.0 + 1.0) == greedy_decode(logp)


class TestWER(unittest.TestCase):
    def test_edit_distance(self):
        assert edit_distance([1, 2, 3], [1, 2, 3]) == 0
        assert edit_distance(list('kitten'), list('sitting')) == 3
        assert edit_distance([], [1, 2]) == 2

    def test_wer(self):
        ref = list(range(1, 11))
        hyp = list(ref)
        hyp[4] = 99
        assert abs(wer([ref], [hyp]) - 0.1) <= 1e-12
        assert wer([[1, 2], [3]], [[1, 2], [3]]) == 0.0

    def test_empty_reference(self):
        with self.assertRaises(UndefinedRateError):
            wer([[]], [[1]])
        with self.assertRaises(ValueError):
            wer([[1]], [])


if __name__ == '__main__':
    logging.basicConfig(level=logging.DEBUG)
    unittest.main()
