import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mslab.errors import ContractError
from mslab.meta import RunRecord
from mslab.metrics import cer, curve_stats, edit_distance, evaluate_model
from mslab.model import ModelConfig, init_params
from mslab.tasks import CipherLanguageTask, SYMBOL_OFFSET, sample_task, TaskSampler


def dp_edit_distance(a, b):
    """Full O(len(a)*len(b)) dynamic-programming oracle."""
    la, lb = len(a), len(b)
    d = np.zeros((la + 1, lb + 1), dtype=int)
    d[:, 0] = np.arange(la + 1)
    d[0, :] = np.arange(lb + 1)
    for i in range(1, la + 1):
        for j in range(1, lb + 1):
            d[i, j] = min(
                d[i - 1, j] + 1,
                d[i, j - 1] + 1,
                d[i - 1, j - 1] + (0 if a[i - 1] == b[j - 1] else 1),
            )
    return int(d[la, lb])


def records(losses):
    return [RunRecord(t, x, [x], [1.0]) for t, x in enumerate(losses)]


class TestCer:
    def test_identical(self):
        assert cer("abc", "abc") == 0.0

    def test_empty_hypothesis(self):
        assert cer("ab", "") == 1.0

    def test_single_substitution(self):
        assert cer("abc", "axc") == pytest.approx(1 / 3)

    def test_may_exceed_one(self):
        assert cer("a", "xyz") > 1.0

    def test_empty_reference_rejected(self):
        with pytest.raises(ContractError):
            cer("", "abc")

    def test_int_sequences(self):
        assert cer([5, 6, 7], [5, 9, 7]) == pytest.approx(1 / 3)

    def test_matches_dp_oracle_on_random_pairs(self):
        rng = np.random.default_rng(17)
        for _ in range(1000):
            a = rng.integers(0, 8, rng.integers(1, 14)).tolist()
            b = rng.integers(0, 8, rng.integers(0, 14)).tolist()
            assert edit_distance(a, b) == dp_edit_distance(a, b)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 5), min_size=1, max_size=10),
           st.lists(st.integers(0, 5), max_size=10),
           st.lists(st.integers(0, 5), max_size=10))
    def test_triangle_consistency(self, r, m, h):
        assert cer(r, h) <= (edit_distance(r, m) + edit_distance(m, h)) / len(r)


class TestCurveStats:
    def test_constant_curve(self):
        st_ = curve_stats(records([2.0] * 10), window=3, threshold=2.5)
        assert st_.mean_abs_successive_diff == 0.0
        assert st_.windowed_std == 0.0
        assert st_.max_spike == 0.0
        assert st_.auc == 2.0
        assert st_.iters_to_threshold == 0

    def test_hand_evaluated_sawtooth(self):
        st_ = curve_stats(records([1.0, 3.0, 1.0, 3.0]), window=2)
        assert st_.mean_abs_successive_diff == 2.0
        assert st_.max_spike == 2.0
        assert st_.windowed_std == 1.0  # every pair has std 1

    def test_strictly_decreasing_has_no_spike(self):
        st_ = curve_stats(records([5.0, 4.0, 2.5, 1.0]), window=2)
        assert st_.max_spike == 0.0

    def test_threshold_never_reached(self):
        st_ = curve_stats(records([5.0, 5.0, 5.0]), window=2, threshold=1.0)
        assert st_.iters_to_threshold is None

    def test_trailing_window_mean_threshold(self):
        # losses drop at t=3; window-2 trailing mean crosses 2.0 at t=4
        st_ = curve_stats(records([5.0, 5.0, 5.0, 1.0, 1.0]), window=2, threshold=2.0)
        assert st_.iters_to_threshold == 4

    def test_scaling_property(self):
        rng = np.random.default_rng(5)
        losses = rng.uniform(0.5, 4.0, 40).tolist()
        base = curve_stats(records(losses), window=5)
        for c in (0.5, 2.0, 7.25):
            scaled = curve_stats(records([c * x for x in losses]), window=5)
            assert scaled.mean_abs_successive_diff == pytest.approx(
                c * base.mean_abs_successive_diff, rel=1e-12)
            assert scaled.windowed_std == pytest.approx(c * base.windowed_std, rel=1e-12)
            assert scaled.max_spike == pytest.approx(c * base.max_spike, rel=1e-12)
            assert scaled.auc == pytest.approx(c * base.auc, rel=1e-12)

    def test_contract_errors(self):
        with pytest.raises(ContractError):
            curve_stats(records([1.0]), window=2)
        with pytest.raises(ContractError):
            curve_stats(records([1.0, 2.0]), window=1)


class TestEvaluateModel:
    def make_task(self):
        sampler = TaskSampler("cipher", master_seed=21, k_support=2, k_target=4,
                              alphabet_size=8, len_min=3, len_max=6, noise_rate=0.0)
        return sample_task(sampler, 0)

    def test_perfect_decoder_scores_zero(self):
        task = self.make_task()
        cfg = ModelConfig(src_vocab=task.vocab_size, tgt_vocab=task.vocab_size,
                          max_len=8)
        params = init_params(cfg, 0)

        def oracle_decode(cfg_, params_, src, max_steps):
            out = []
            for row in np.asarray(src):
                sym = row[row != 0] - SYMBOL_OFFSET
                out.append((task.cipher[sym] + SYMBOL_OFFSET).tolist())
            return out

        score = evaluate_model(cfg, params, task, n_eval_episodes=2,
                               decode=oracle_decode, k_per_episode=4)
        assert score == 0.0

    def test_untrained_model_near_total_error(self):
        sampler = TaskSampler("cipher", master_seed=3, k_support=2, k_target=4,
                              alphabet_size=20, len_min=5, len_max=10,
                              noise_rate=0.0)
        task = sample_task(sampler, 0)
        cfg = ModelConfig(src_vocab=task.vocab_size, tgt_vocab=task.vocab_size,
                          max_len=12)
        params = init_params(cfg, 1)
        score = evaluate_model(cfg, params, task, n_eval_episodes=3, decode="greedy",
                               k_per_episode=4)
        assert score >= 0.8

    def test_beam_one_equals_greedy(self):
        task = self.make_task()
        cfg = ModelConfig(src_vocab=task.vocab_size, tgt_vocab=task.vocab_size,
                          max_len=8)
        params = init_params(cfg, 2)
        g = evaluate_model(cfg, params, task, n_eval_episodes=2, decode="greedy",
                           k_per_episode=3)
        b = evaluate_model(cfg, params, task, n_eval_episodes=2, decode=("beam", 1),
                           k_per_episode=3)
        assert g == b

    def test_n_episodes_validated(self):
        task = self.make_task()
        cfg = ModelConfig(src_vocab=task.vocab_size, tgt_vocab=task.vocab_size,
                          max_len=8)
        with pytest.raises(ContractError):
            evaluate_model(cfg, init_params(cfg, 0), task, 0)

    def test_bad_decode_spec(self):
        task = self.make_task()
        cfg = ModelConfig(src_vocab=task.vocab_size, tgt_vocab=task.vocab_size,
                          max_len=8)
        with pytest.raises(ContractError):
            evaluate_model(cfg, init_params(cfg, 0), task, 1, decode="viterbi")
