import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cads.conformal import (
    Measure,
    alternative_uncertainty,
    aps_score,
    aps_scores,
    calibrate,
    empirical_coverage,
    prediction_set,
)
from cads.core import ValidationError


def probs_strategy(max_classes=8):
    return (
        st.lists(st.floats(0.001, 1.0), min_size=2, max_size=max_classes)
        .map(lambda v: np.array(v) / np.sum(v))
    )


class TestApsScore:
    def test_top_ranked_class_is_own_probability(self):
        assert aps_score(np.array([0.7, 0.2, 0.1]), 0) == pytest.approx(0.7)

    def test_last_ranked_class_is_full_mass(self):
        assert aps_score(np.array([0.7, 0.2, 0.1]), 2) == pytest.approx(1.0)

    def test_sorted_prefix(self):
        # 0.5 + 0.3, summed by hand over the descending prefix
        assert aps_score(np.array([0.5, 0.3, 0.2]), 1) == pytest.approx(0.8)

    def test_tie_breaking_by_class_index(self):
        # equal probabilities rank by ascending class index
        probs = np.array([0.25, 0.25, 0.25, 0.25])
        assert aps_score(probs, 0) == pytest.approx(0.25)
        assert aps_score(probs, 3) == pytest.approx(1.0)

    def test_batch_matches_scalar_bitwise(self):
        rng = np.random.default_rng(0)
        rows = rng.dirichlet(np.ones(6), size=64)
        labels = rng.integers(0, 6, size=64)
        batch = aps_scores(rows, labels)
        for i in range(64):
            assert batch[i] == aps_score(rows[i], int(labels[i]))

    @given(probs_strategy(), st.integers(0, 7))
    @settings(max_examples=100, deadline=None)
    def test_score_in_unit_interval(self, probs, label_seed):
        label = label_seed % probs.shape[0]
        s = aps_score(probs, label)
        assert 0.0 < s <= 1.0 + 1e-12


class TestCalibrate:
    def test_small_n_gives_max(self):
        # level = min(ceil(10 * 0.9) / 9, 1) = 1 -> the maximum score
        scores = np.array([0.2, 0.9, 0.5, 0.1, 0.4, 0.3, 0.8, 0.6, 0.7])
        cal = calibrate(scores, zeta=0.1)
        assert cal.q_hat == 0.9

    def test_ninety_ninth_indexing(self):
        # n=99, scores k/100: the 90th smallest is 0.90
        scores = np.array([k / 100 for k in range(1, 100)])
        cal = calibrate(scores, zeta=0.1)
        assert cal.q_hat == pytest.approx(0.90)
        # brute-force oracle: sort and index directly
        level = min(math.ceil((99 + 1) * 0.9) / 99, 1.0)
        k = math.ceil(level * 99)
        assert cal.q_hat == sorted(scores)[k - 1]

    def test_single_score(self):
        cal = calibrate(np.array([0.42]), zeta=0.5)
        assert cal.q_hat == pytest.approx(0.42)
        assert cal.n_calibration == 1

    def test_rejects_empty_and_bad_zeta(self):
        with pytest.raises(ValidationError):
            calibrate(np.array([]), zeta=0.1)
        with pytest.raises(ValidationError):
            calibrate(np.array([0.5]), zeta=0.0)

    def test_round_trip_dict(self):
        cal = calibrate(np.linspace(0.1, 0.9, 17), zeta=0.2, expert_id=3)
        doc = cal.to_dict()
        assert set(doc) == {"expert", "zeta", "q_hat", "n"}
        from cads.conformal import ConformalCalibration

        assert ConformalCalibration.from_dict(doc) == cal


class TestPredictionSet:
    def test_single_class_crosses(self):
        ps = prediction_set(np.array([0.95, 0.03, 0.02]), 0.9)
        assert ps.members == (0,)

    def test_two_class_prefix(self):
        ps = prediction_set(np.array([0.5, 0.4, 0.1]), 0.85)
        assert ps.members == (0, 1)

    def test_full_mass_required(self):
        ps = prediction_set(np.full(4, 0.25), 1.0)
        assert ps.size == 4

    def test_zero_quantile_keeps_argmax(self):
        ps = prediction_set(np.array([0.2, 0.5, 0.3]), 0.0)
        assert ps.members == (1,)

    @given(probs_strategy(), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    @settings(max_examples=150, deadline=None)
    def test_monotone_in_quantile(self, probs, qa, qb):
        lo, hi = min(qa, qb), max(qa, qb)
        small = prediction_set(probs, lo)
        large = prediction_set(probs, hi)
        assert small.size >= 1
        assert set(small.members) <= set(large.members)

    @given(probs_strategy(), st.floats(0.0, 1.0))
    @settings(max_examples=150, deadline=None)
    def test_members_are_descending_prefix(self, probs, q):
        ps = prediction_set(probs, q)
        order = np.argsort(-probs, kind="stable")
        assert ps.members == tuple(int(c) for c in order[: ps.size])


class TestAlternativeUncertainty:
    def test_one_hot_is_certain(self):
        one_hot = np.array([0.0, 1.0, 0.0])
        for measure in (Measure.MAX_SOFTMAX, Measure.ENTROPY, Measure.MARGIN):
            assert alternative_uncertainty(one_hot, measure) == pytest.approx(0.0)

    def test_uniform_entropy_is_one(self):
        for c in (2, 4, 10):
            u = alternative_uncertainty(np.full(c, 1.0 / c), Measure.ENTROPY)
            assert u == pytest.approx(1.0, abs=1e-12)

    def test_margin_by_hand(self):
        assert alternative_uncertainty(np.array([0.6, 0.4]), Measure.MARGIN) == pytest.approx(0.8)

    def test_max_softmax(self):
        assert alternative_uncertainty(np.array([0.7, 0.2, 0.1]), Measure.MAX_SOFTMAX) == pytest.approx(0.3)

    @given(probs_strategy())
    @settings(max_examples=100, deadline=None)
    def test_all_measures_in_unit_interval(self, probs):
        for measure in (Measure.MAX_SOFTMAX, Measure.ENTROPY, Measure.MARGIN):
            u = alternative_uncertainty(probs, measure)
            assert -1e-12 <= u <= 1.0 + 1e-12


class TestCoverage:
    def test_calibrated_model_covers(self):
        # exchangeable draws: rows from a Dirichlet, labels from each row
        rng = np.random.default_rng(11)
        n_cal, n_eval, c = 1000, 1000, 6
        rows = rng.dirichlet(np.full(c, 0.5), size=n_cal + n_eval)
        labels = np.array([rng.choice(c, p=row) for row in rows])
        scores = aps_scores(rows[:n_cal], labels[:n_cal])
        for zeta in (0.1, 0.2):
            cal = calibrate(scores, zeta=zeta)
            cov = empirical_coverage(rows[n_cal:], labels[n_cal:], cal)
            slack = 3.0 * math.sqrt(zeta * (1 - zeta) / n_eval)
            assert cov >= (1 - zeta) - slack

    def test_coverage_matches_per_sample_sets(self):
        rng = np.random.default_rng(12)
        rows = rng.dirichlet(np.ones(5), size=300)
        labels = np.array([rng.choice(5, p=row) for row in rows])
        cal = calibrate(aps_scores(rows[:150], labels[:150]), zeta=0.15)
        direct = np.mean(
            [labels[i] in prediction_set(rows[i], cal).members for i in range(150, 300)]
        )
        assert empirical_coverage(rows[150:], labels[150:], cal) == pytest.approx(direct)
