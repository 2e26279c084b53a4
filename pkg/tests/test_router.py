import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cads import CascadeEngine, PolicyConfig, split_dataset
from cads.conformal import ConformalCalibration, PredictionSet
from cads.core import Tier, ValidationError
from cads.profiling import (
    ClassDifficulty,
    build_class_difficulty,
    build_complementarity,
    build_profiles,
)
from cads.router import (
    Category,
    ExitReason,
    categorize,
    ensemble,
    exit_threshold,
    run_cascade,
    select_next_expert,
)
from cads.synth import SyntheticExpertSpec, SyntheticPoolSpec, generate_pool

from reference_cascade import OracleCascade, OraclePolicy


class TestPolicyConfig:
    def test_defaults_valid(self):
        cfg = PolicyConfig()
        assert cfg.alpha_singleton >= cfg.alpha_binary >= cfg.alpha_difficult
        assert cfg.epsilon == 0.01

    def test_rejects_unordered_thresholds(self):
        with pytest.raises(ValidationError, match="singleton"):
            PolicyConfig(alpha_singleton=0.7, alpha_binary=0.8, alpha_difficult=0.9)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValidationError):
            PolicyConfig(zeta=0.0)
        with pytest.raises(ValidationError):
            PolicyConfig(gamma=0.5)
        with pytest.raises(ValidationError):
            PolicyConfig(min_experts=0)

    def test_flat_json_round_trip(self):
        cfg = PolicyConfig(zeta=0.2, w=0.3, gamma=3.0, start_expert=1)
        doc = cfg.to_dict()
        assert all(not isinstance(v, (dict, list)) for v in doc.values())
        assert PolicyConfig.from_dict(doc) == cfg


class TestCategorize:
    def test_paper_default_buckets(self):
        cfg = PolicyConfig()
        assert categorize(1, cfg) == (Category.SINGLETON, 0.9)
        assert categorize(2, cfg) == (Category.BINARY, 0.8)
        assert categorize(7, cfg) == (Category.DIFFICULT, 0.7)

    def test_rejects_empty_set(self):
        with pytest.raises(ValidationError):
            categorize(0, PolicyConfig())


def make_profiles(accs, costs, acc_class=None, n_classes=2):
    """Small helper: profiles with prescribed statistics."""
    from cads.profiling import ExpertProfile

    profiles = []
    for k, (a, g) in enumerate(zip(accs, costs)):
        pca = np.full(n_classes, a) if acc_class is None else np.asarray(acc_class[k], dtype=np.float64)
        profiles.append(
            ExpertProfile(
                expert_id=k,
                cost_gflops=g,
                accuracy=a,
                per_class_accuracy=pca,
                per_class_support=np.ones(n_classes, dtype=np.int64),
                efficiency=a / g,
            )
        )
    return profiles


def empty_table(k, c):
    from cads.profiling import ComplementarityTable

    return ComplementarityTable(
        global_comp=np.zeros((k, k)),
        global_support=np.zeros(k, dtype=np.int64),
        pairwise_comp=np.zeros((c, c, k, k)),
        pairwise_support=np.zeros((c, c, k), dtype=np.int64),
    )


class TestSelectNextExpert:
    def _table_with_global(self, comp_rows, c=2):
        from cads.profiling import ComplementarityTable

        comp = np.asarray(comp_rows, dtype=np.float64)
        k = comp.shape[0]
        return ComplementarityTable(
            global_comp=comp,
            global_support=np.ones(k, dtype=np.int64),
            pairwise_comp=np.zeros((c, c, k, k)),
            pairwise_support=np.zeros((c, c, k), dtype=np.int64),
        )

    def test_pure_efficiency_when_w_zero(self):
        profiles = make_profiles([0.5, 0.9, 0.6], [1.0, 1.0, 0.5])
        table = self._table_with_global(np.ones((3, 3)) * 0.9)
        cfg = PolicyConfig(w=0.0)
        pick = select_next_expert(0, PredictionSet((0,)), [1, 2], table, profiles, cfg)
        assert pick == 2  # efficiency 1.2 beats 0.9

    def test_pure_complementarity_when_w_one(self):
        profiles = make_profiles([0.5, 0.5, 0.5], [1.0, 1.0, 1.0])
        table = self._table_with_global([[0.0, 0.9, 0.4], [0, 0, 0], [0, 0, 0]])
        cfg = PolicyConfig(w=1.0)
        pick = select_next_expert(0, PredictionSet((0,)), [1, 2], table, profiles, cfg)
        assert pick == 1

    def test_hand_scored_mixture(self):
        # candidates (comp, eff_norm) = (0.8, 0.2) and (0.4, 0.7) at w = 0.5
        # scores 0.50 vs 0.55 -> the second candidate
        profiles = make_profiles([0.2, 0.2, 0.7], [1.0, 1.0, 1.0])
        table = self._table_with_global([[0.0, 0.8, 0.4], [0, 0, 0], [0, 0, 0]])
        cfg = PolicyConfig(w=0.5)
        pick = select_next_expert(0, PredictionSet((0,)), [1, 2], table, profiles, cfg)
        assert pick == 2

    def test_tie_breaks_to_lower_id(self):
        profiles = make_profiles([0.5, 0.5, 0.5], [1.0, 1.0, 1.0])
        table = self._table_with_global(np.zeros((3, 3)))
        cfg = PolicyConfig(w=0.5)
        pick = select_next_expert(0, PredictionSet((0,)), [2, 1], table, profiles, cfg)
        assert pick == 1

    def test_binary_set_uses_pairwise_when_supported(self):
        from cads.profiling import ComplementarityTable

        k, c = 3, 3
        pairwise = np.zeros((c, c, k, k))
        support = np.zeros((c, c, k), dtype=np.int64)
        # ordered pair (0, 1) from expert 0 is well supported and favors expert 2
        support[0, 1, 0] = 10
        pairwise[0, 1, 0, 1] = 0.1
        pairwise[0, 1, 0, 2] = 0.9
        table = ComplementarityTable(
            global_comp=np.array([[0.0, 0.9, 0.1], [0, 0, 0], [0, 0, 0]]),
            global_support=np.ones(k, dtype=np.int64),
            pairwise_comp=pairwise,
            pairwise_support=support,
        )
        profiles = make_profiles([0.5, 0.5, 0.5], [1.0, 1.0, 1.0], n_classes=3)
        cfg = PolicyConfig(w=1.0)
        # binary set {0, 1}: pairwise wins over the global row
        pick = select_next_expert(0, PredictionSet((0, 1)), [1, 2], table, profiles, cfg)
        assert pick == 2
        # unsupported binary set {1, 2} falls back to the global row
        pick = select_next_expert(0, PredictionSet((1, 2)), [1, 2], table, profiles, cfg)
        assert pick == 1


class TestEnsemble:
    def test_single_expert_identity(self):
        profiles = make_profiles([0.77], [1.0])
        probs = np.array([0.3, 0.7])
        for gamma, beta in ((1.0, 1.0), (3.0, 2.0), (7.5, 0.6)):
            cfg = PolicyConfig(gamma=gamma, beta=beta)
            p_ens, c_star, _ = ensemble([0], [probs], profiles, cfg)
            np.testing.assert_allclose(p_ens, probs, rtol=0, atol=1e-12)
            assert c_star == 1

    def test_identical_vectors_identity(self):
        profiles = make_profiles([0.9, 0.5], [1.0, 2.0])
        probs = np.array([0.25, 0.45, 0.30])
        cfg = PolicyConfig(gamma=2.0, beta=3.0)
        p_ens, _, _ = ensemble([0, 1], [probs, probs], profiles, cfg)
        np.testing.assert_allclose(p_ens, probs, rtol=0, atol=1e-12)

    def test_two_expert_hand_oracle(self):
        # step-by-step scalar evaluation of the weighting chain
        acc = [0.9, 0.6]
        acc_class = [[0.5, 0.5], [1.0, 1.0]]
        profiles = make_profiles(acc, [1.0, 1.0], acc_class=acc_class)
        p1 = np.array([0.8, 0.2])
        p2 = np.array([0.4, 0.6])
        cfg = PolicyConfig(gamma=1.0, beta=1.0)
        p_ens, c_star, weights = ensemble([0, 1], [p1, p2], profiles, cfg)

        wg = [0.9, 0.6]
        vote = [wg[0] * 0.8 + wg[1] * 0.4, wg[0] * 0.2 + wg[1] * 0.6]
        assert c_star == 0 and vote[0] > vote[1]
        lw = [(0.5 + 0.01) ** 1.0, (1.0 + 0.01) ** 1.0]
        lsum = lw[0] + lw[1]
        wk = [0.6 * wg[j] + 0.4 * (lw[j] / lsum) for j in range(2)]
        den = wk[0] + wk[1]
        expected = np.array(
            [
                (wk[0] * 0.8 + wk[1] * 0.4) / den,
                (wk[0] * 0.2 + wk[1] * 0.6) / den,
            ]
        )
        np.testing.assert_allclose(p_ens, expected, rtol=0, atol=1e-12)
        np.testing.assert_allclose(weights, wk, rtol=0, atol=1e-12)

    def test_output_is_distribution(self):
        rng = np.random.default_rng(3)
        profiles = make_profiles([0.8, 0.6, 0.7], [1, 2, 3], n_classes=5)
        rows = [rng.dirichlet(np.ones(5)) for _ in range(3)]
        cfg = PolicyConfig(gamma=4.0, beta=2.5)
        p_ens, _, _ = ensemble([0, 1, 2], rows, profiles, cfg)
        assert np.all(p_ens >= 0)
        assert np.sum(p_ens) == pytest.approx(1.0, abs=1e-9)

    def test_valid_distribution_at_every_prefix(self):
        # aggregation stays a distribution after each consultation step
        rng = np.random.default_rng(9)
        profiles = make_profiles([0.9, 0.7, 0.6, 0.85], [1, 2, 3, 4], n_classes=6)
        rows = [rng.dirichlet(np.ones(6)) for _ in range(4)]
        cfg = PolicyConfig(gamma=3.0, beta=1.2)
        for depth in range(1, 5):
            p_ens, _, _ = ensemble(list(range(depth)), rows[:depth], profiles, cfg)
            assert np.all(p_ens >= 0)
            assert np.sum(p_ens) == pytest.approx(1.0, abs=1e-9)


class TestExitThreshold:
    def test_neutral_case(self):
        cfg = PolicyConfig()
        assert exit_threshold(0.9, 1, 0.0, 0.5, cfg) == pytest.approx(0.9)

    def test_boost_capped_by_delta_max(self):
        cfg = PolicyConfig(delta=0.03, delta_max=0.05)
        # three agreeing experts: boost = min(0.06, 0.05)
        assert exit_threshold(0.8, 3, 1.0, 0.5, cfg) == pytest.approx(0.75)

    def test_cap_binds(self):
        cfg = PolicyConfig()
        assert exit_threshold(0.97, 1, 0.0, 1.0, cfg) == pytest.approx(0.98)

    def test_agreement_is_strict(self):
        cfg = PolicyConfig(delta=0.05, delta_max=0.2)
        # exactly 80% agreement gets no boost
        assert exit_threshold(0.9, 5, 4 / 5, 0.5, cfg) == pytest.approx(0.9)
        assert exit_threshold(0.9, 5, 5 / 6, 0.5, cfg) == pytest.approx(0.9 - 0.2)

    def test_difficulty_shift_both_ways(self):
        cfg = PolicyConfig()
        assert exit_threshold(0.8, 1, 0.0, 0.0, cfg) == pytest.approx(0.75)
        assert exit_threshold(0.8, 1, 0.0, 1.0, cfg) == pytest.approx(0.85)

    @given(
        st.floats(0.5, 0.98),
        st.integers(1, 12),
        st.floats(0.0, 1.0),
        st.floats(0.0, 1.0),
        st.floats(0.0, 0.1),
        st.floats(0.0, 0.2),
    )
    @settings(max_examples=200, deadline=None)
    def test_cap_never_exceeded(self, alpha, n, agreement, d, delta, delta_max):
        cfg = PolicyConfig(delta=delta, delta_max=delta_max)
        assert exit_threshold(alpha, n, agreement, d, cfg) <= 0.98


def tiny_cascade_inputs(k=3, c=4, scout_one_hot=False, seed=0):
    """Hand-buildable inputs for run_cascade unit tests."""
    rng = np.random.default_rng(seed)
    rows = rng.dirichlet(np.ones(c), size=(k, 40))
    labels = rng.integers(0, c, 40)
    if scout_one_hot:
        rows[0] = 0.0
        rows[0, np.arange(40), labels] = 1.0
    profiles = build_profiles(list(rows), labels, [0.1, 1.0, 2.0], np.arange(40))
    table = build_complementarity(list(rows), labels, np.arange(40))
    difficulty = build_class_difficulty(profiles)
    cals = [
        ConformalCalibration(expert_id=j, zeta=0.1, q_hat=0.95, n_calibration=40)
        for j in range(k)
    ]
    return rows, labels, profiles, table, difficulty, cals


class TestRunCascade:
    def test_one_hot_scout_exits_immediately(self):
        rows, labels, profiles, table, difficulty, cals = tiny_cascade_inputs(scout_one_hot=True)
        cfg = PolicyConfig(min_experts=1, start_expert=0)
        neutral = ClassDifficulty(difficulty=np.full(4, 0.5))
        trace = run_cascade(0, rows[:, 0, :], cals, profiles, table, neutral, cfg)
        assert trace.consulted == (0,)
        assert trace.exit_reason is ExitReason.CONFIDENCE_EXIT
        assert trace.category_history[0] is Category.SINGLETON
        assert trace.cost_gflops == pytest.approx(0.1)
        assert trace.predicted_class == labels[0]

    def test_exhaustion_path(self):
        rows, labels, profiles, table, difficulty, cals = tiny_cascade_inputs(seed=5)
        # unreachable threshold: every expert gets consulted
        cfg = PolicyConfig(
            alpha_singleton=0.98, alpha_binary=0.98, alpha_difficult=0.98,
            min_experts=3, start_expert=0,
        )
        hard = ClassDifficulty(difficulty=np.ones(4))
        trace = run_cascade(7, rows[:, 7, :], cals, profiles, table, hard, cfg)
        assert len(trace.consulted) == 3
        assert sorted(trace.consulted) == [0, 1, 2]
        assert trace.cost_gflops == pytest.approx(3.1)
        assert trace.predicted_class == int(np.argmax(trace.final_distribution))

    def test_consulted_has_no_duplicates_and_starts_at_scout(self):
        rows, labels, profiles, table, difficulty, cals = tiny_cascade_inputs(seed=8)
        cfg = PolicyConfig(min_experts=2, start_expert=0)
        for i in range(20):
            trace = run_cascade(i, rows[:, i, :], cals, profiles, table, difficulty, cfg)
            assert trace.consulted[0] == 0
            assert len(set(trace.consulted)) == len(trace.consulted)

    def test_lazy_consultation(self):
        rows, labels, profiles, table, difficulty, cals = tiny_cascade_inputs(scout_one_hot=True)
        reads = []

        def fetch(k):
            reads.append(k)
            return rows[k, 3, :]

        cfg = PolicyConfig(min_experts=1, start_expert=0)
        neutral = ClassDifficulty(difficulty=np.full(4, 0.5))
        trace = run_cascade(3, fetch, cals, profiles, table, neutral, cfg)
        assert tuple(reads) == trace.consulted
        assert reads == [0]  # confident scout: nothing else is read

    def test_deterministic(self):
        rows, labels, profiles, table, difficulty, cals = tiny_cascade_inputs(seed=11)
        cfg = PolicyConfig(min_experts=1, start_expert=0, w=0.7)
        t1 = run_cascade(5, rows[:, 5, :], cals, profiles, table, difficulty, cfg)
        t2 = run_cascade(5, rows[:, 5, :], cals, profiles, table, difficulty, cfg)
        assert t1.consulted == t2.consulted
        assert np.array_equal(t1.final_distribution, t2.final_distribution)


def build_oracle_fixture(k=3, c=4, n=50, seed=1234):
    """The oracle-equivalence fixture: plain arrays plus an engine."""
    experts = (
        SyntheticExpertSpec("scout", Tier.SCOUT, 0.05, 0.55, params_millions=0.5),
        SyntheticExpertSpec("mid", Tier.SPECIALIST, 0.6, 0.7, params_millions=5.0),
        SyntheticExpertSpec("big", Tier.ORACLE, 2.0, 0.85, params_millions=20.0),
    )
    spec = SyntheticPoolSpec(
        n_classes=c,
        n_samples=n,
        easy_fraction=0.4,
        noise_temperature=1.2,
        seed=seed,
        experts=experts,
        dataset_name="oracle-fixture",
    )
    pool = generate_pool(spec)
    split = split_dataset(n, seed=9)
    engine = CascadeEngine.build(pool, split)
    return pool, split, engine


ORACLE_POLICY = dict(
    zeta=0.15,
    alpha_singleton=0.9,
    alpha_binary=0.8,
    alpha_difficult=0.7,
    w=0.6,
    gamma=2.0,
    beta=1.5,
    delta=0.04,
    delta_max=0.06,
    min_experts=1,
    start_expert=0,
)


class TestOracleEquivalence:
    def test_reference_matches_straight_line_oracle(self):
        pool, split, engine = build_oracle_fixture()
        probs_nested = [m.rows.tolist() for m in pool.matrices]
        labels = pool.labels.labels.tolist()
        oracle = OracleCascade(
            probs_nested,
            labels,
            [e.cost_gflops for e in pool.manifest.experts],
            split.calibration_ids.tolist(),
            OraclePolicy(**ORACLE_POLICY),
        )
        config = PolicyConfig(**ORACLE_POLICY)
        cals = engine.calibrations(config.zeta)
        for k in range(pool.n_experts):
            assert cals[k].q_hat == oracle.q_hat[k]
        for i in range(pool.n_samples):
            expected = oracle.run(i)
            trace = run_cascade(
                i,
                engine.probs[:, i, :],
                cals,
                engine.profiles,
                engine.table,
                engine.difficulty,
                config,
                costs=engine.costs,
            )
            assert list(trace.consulted) == expected["consulted"], i
            assert trace.exit_reason.label == expected["exit_reason"], i
            assert [c.name.lower() for c in trace.category_history] == expected["categories"], i
            assert trace.predicted_class == expected["predicted"], i
            assert trace.cost_gflops == expected["cost"], i
            assert np.array_equal(
                trace.final_distribution, np.array(expected["distribution"])
            ), i

    def test_oracle_with_pairwise_support(self):
        """Larger fixture so the pairwise branch actually fires."""
        pool, split, engine = build_oracle_fixture(c=3, n=400, seed=77)
        probs_nested = [m.rows.tolist() for m in pool.matrices]
        labels = pool.labels.labels.tolist()
        policy = dict(ORACLE_POLICY, zeta=0.25, w=0.9, min_experts=2)
        oracle = OracleCascade(
            probs_nested,
            labels,
            [e.cost_gflops for e in pool.manifest.experts],
            split.calibration_ids.tolist(),
            OraclePolicy(**policy),
        )
        assert any(
            v >= 5 for (c1, c2, a), v in oracle.pair_support.items() if c1 != c2
        ), "fixture should exercise supported pairwise cells"
        config = PolicyConfig(**policy)
        cals = engine.calibrations(config.zeta)
        binary_seen = 0
        for i in range(pool.n_samples):
            expected = oracle.run(i)
            trace = run_cascade(
                i,
                engine.probs[:, i, :],
                cals,
                engine.profiles,
                engine.table,
                engine.difficulty,
                config,
                costs=engine.costs,
            )
            binary_seen += "binary" in expected["categories"]
            assert list(trace.consulted) == expected["consulted"], i
            assert trace.exit_reason.label == expected["exit_reason"], i
            assert trace.predicted_class == expected["predicted"], i
            assert np.array_equal(
                trace.final_distribution, np.array(expected["distribution"])
            ), i
        assert binary_seen > 0
