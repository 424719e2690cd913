import copy
import math

import numpy as np
import pytest

from src.config import AppConfig, EvalConfig
from src.embeddings import EmbeddingSet
from src.evaluation import (
    FREQUENCY_THRESHOLDS,
    Evaluator,
    QueryResult,
    build_pool,
    keeps_location,
    embedding_scores,
    mrr,
    rank_by_scores,
    rank_candidate_pool,
    rank_of,
    run_eval,
    select_windows,
    simulate_ngtsm,
    summarize,
    sweep,
    tfidf_baseline,
)
from src.pipeline import iter_steps
from src.units import Modality, UnitId

R = lambda i: UnitId(Modality.REGION, i)  # noqa: E731

# H(11) / 11
RANDOM_MRR = 0.27454


def _eval_config(**evaluation) -> AppConfig:
    config = AppConfig()
    config.training.k = 8
    config.training.epochs = 2
    config.training.neg_k = 3
    config.training.seed = 5
    config.evaluation.M = 10
    config.evaluation.windows = 3
    config.evaluation.g = 1.0
    for key, value in evaluation.items():
        setattr(config.evaluation, key, value)
    return config


class TestSimulateNgtsm:
    def test_keeps_about_g_of_the_locations(self, small_stream):
        records, _, _ = small_stream
        out, truth = simulate_ngtsm(records, 0.3, seed=1)
        n_geo = sum(r.is_gtsm for r in records)
        kept = sum(r.is_gtsm for r in out)
        assert abs(kept - 0.3 * n_geo) <= 4 * math.sqrt(n_geo * 0.3 * 0.7)
        assert len(truth) == n_geo
        assert all(truth[r.arrival_index] == r.region for r in records if r.is_gtsm)

    def test_prefix_is_simulated_like_the_full_stream(self, small_stream):
        records, _, _ = small_stream
        half = len(records) // 2
        full, _ = simulate_ngtsm(records, 0.5, seed=4)
        prefix, _ = simulate_ngtsm(records[:half], 0.5, seed=4)
        assert prefix == full[:half]
        assert [keeps_location(r.arrival_index, 0.5, 4) for r in records[:20]] == [
            r.is_gtsm for r in full[:20]
        ]

    def test_extremes_and_determinism(self, small_stream):
        records, _, _ = small_stream
        assert simulate_ngtsm(records, 1.0, 1)[0] == list(records)
        assert not any(r.is_gtsm for r in simulate_ngtsm(records, 0.0, 1)[0])
        assert simulate_ngtsm(records, 0.5, 9)[0] == simulate_ngtsm(records, 0.5, 9)[0]
        assert simulate_ngtsm(records, 0.5, 9)[0] != simulate_ngtsm(records, 0.5, 10)[0]

    def test_invalid_fraction(self):
        with pytest.raises(ValueError):
            simulate_ngtsm([], 1.5, 0)


class TestRanking:
    def test_ties_go_to_lower_id(self):
        pool = [R(5), R(2), R(9)]
        ranked = rank_by_scores(pool, [0.5, 0.5, 0.9])
        assert [u.index for u, _ in ranked] == [9, 2, 5]
        assert rank_of(R(5), pool, [0.5, 0.5, 0.9]) == 3

    def test_truth_must_be_in_pool(self):
        with pytest.raises(ValueError):
            rank_of(R(1), [R(2)], [0.0])

    def test_mrr(self):
        results = [QueryResult("region", R(0), rank) for rank in (1, 2, 4)]
        assert mrr(results) == pytest.approx((1 + 0.5 + 0.25) / 3)
        with pytest.raises(ValueError):
            mrr([])
        with pytest.raises(ValueError):
            QueryResult("region", R(0), 0)

    def test_random_scores_give_harmonic_expectation(self):
        gen = np.random.default_rng(17)
        pool = [R(i) for i in range(11)]
        ranks = [rank_of(pool[int(gen.integers(11))], pool, gen.normal(size=11)) for _ in range(20_000)]
        assert np.mean([1.0 / r for r in ranks]) == pytest.approx(RANDOM_MRR, abs=0.01)

    def test_embedding_scores_prefer_aligned_candidate(self):
        arrays = {
            Modality.REGION: np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]),
            Modality.HOUR: np.array([[1.0, 0.1]]),
            Modality.KEYWORD: np.array([[0.9, 0.0]]),
            Modality.USER: np.array([[1.0, -0.1]]),
        }
        tables = EmbeddingSet.from_arrays(arrays, dtype=np.float64)
        observed = [UnitId(Modality.HOUR, 0), UnitId(Modality.KEYWORD, 0), UnitId(Modality.USER, 0)]
        ranked = rank_candidate_pool(observed, [R(2), R(1), R(0), R(7)], tables)
        assert ranked[0][0] == R(0)
        assert ranked[-1][0] == R(2)
        # a unit without a row scores like a zero vector
        assert embedding_scores(observed, [R(7)], tables)[0] == 0.0


def test_build_pool_draws_distinct_negatives(rng):
    pool = build_pool(R(3), range(50), 10, rng)
    assert pool[0] == R(3)
    assert len(pool) == 11
    assert len(set(pool)) == 11
    small = build_pool(R(3), [1, 3, 4], 10, rng)
    assert sorted(u.index for u in small) == [1, 3, 4]


def test_build_pool_leaves_out_observed_units(rng):
    for _ in range(20):
        pool = build_pool(R(3), range(12), 10, rng, exclude={5, 7})
        assert pool[0] == R(3)
        assert sorted(u.index for u in pool) == [0, 1, 2, 3, 4, 6, 8, 9, 10, 11]


def test_select_windows():
    steps = list(range(100, 140))
    explicit = select_windows(steps, EvalConfig(windows_at=["120", 135, 999]))
    assert explicit == [120, 135]
    drawn = select_windows(steps, EvalConfig(windows=5, seed=1))
    assert len(drawn) == 5
    assert all(120 <= s < 140 for s in drawn)
    assert drawn == select_windows(steps, EvalConfig(windows=5, seed=1))


def test_summarize_layout():
    results = [
        QueryResult("region", R(0), 1, window=4, truth_frequency=5),
        QueryResult("region", R(1), 2, window=5, truth_frequency=500),
        QueryResult("keyword", UnitId(Modality.KEYWORD, 0), 4, window=5),
    ]
    report = summarize(results)
    assert report["mrr"]["region"] == pytest.approx(0.75)
    assert report["mrr"]["keyword"] == pytest.approx(0.25)
    assert [w["step"] for w in report["windows"]] == [4, 5]
    assert len(report["frequency_buckets"]) == len(FREQUENCY_THRESHOLDS) == 7
    assert report["frequency_buckets"][0] == {"threshold": 10.0, "region_mrr": 1.0, "queries": 1}
    assert report["frequency_buckets"][-1]["queries"] == 2


class TestEvaluator:
    def test_report_and_shared_pools(self, small_stream):
        records, vocab, grid = small_stream
        report = run_eval(records, vocab, grid, _eval_config(baselines=["tfidf"]))
        assert len(report["windows"]) == 3
        ours, theirs = report["ustar"], report["baselines"]["tfidf"]
        assert ours["queries"] == theirs["queries"]
        assert ours["queries"]["keyword"] > 0
        for section in (ours, theirs):
            for task in ("region", "keyword"):
                assert 0.0 < section["mrr"][task] <= 1.0
        assert report["training"]["steps"] > 0

    def test_deterministic(self, small_stream):
        records, vocab, grid = small_stream
        config = _eval_config()
        assert run_eval(records, vocab, grid, config) == run_eval(records, vocab, grid, config)

    def test_stops_after_last_window(self, small_stream):
        records, vocab, grid = small_stream
        steps = [s for s, _ in iter_steps(records, 3600)]
        window = steps[len(steps) // 2]
        evaluator = Evaluator(_eval_config(windows_at=[window]), vocab, grid)
        evaluator.run(records)
        assert evaluator.trainer.stats["steps"] == sum(1 for s in steps if s <= window)

    def test_later_records_cannot_change_a_window(self, small_stream):
        records, vocab, grid = small_stream
        steps = [s for s, _ in iter_steps(records, 3600)]
        window = steps[len(steps) // 2]
        prefix = [r for r in records if int(r.timestamp // 3600) <= window]
        config = _eval_config(windows_at=[window])
        assert run_eval(prefix, vocab, grid, config)["ustar"] == run_eval(records, vocab, grid, config)["ustar"]

    def test_later_records_cannot_change_a_window_with_missing_locations(self, small_stream):
        records, vocab, grid = small_stream
        steps = [s for s, _ in iter_steps(records, 3600)]
        window = steps[len(steps) // 2]
        prefix = [r for r in records if int(r.timestamp // 3600) <= window]
        config = _eval_config(g=0.5, windows_at=[window], baselines=["tfidf"])
        truncated = run_eval(prefix, vocab, grid, copy.deepcopy(config))
        full = run_eval(records, vocab, grid, copy.deepcopy(config))
        assert truncated["ustar"]["queries"]["region"] > 0
        assert truncated == full

    def test_keyword_pools_leave_out_the_record_s_other_keywords(self, small_stream, monkeypatch):
        records, vocab, grid = small_stream
        calls = []

        def recording(truth, candidates, M, rng, exclude=()):
            pool = build_pool(truth, candidates, M, rng, exclude)
            calls.append((truth, set(exclude), pool))
            return pool

        monkeypatch.setattr("src.evaluation.build_pool", recording)
        run_eval(records, vocab, grid, _eval_config())
        keyword_calls = [c for c in calls if c[0].modality == Modality.KEYWORD]
        assert any(exclude for _, exclude, _ in keyword_calls)
        for truth, exclude, pool in keyword_calls:
            assert truth.index not in exclude
            assert not exclude & {u.index for u in pool}
        assert all(not exclude for truth, exclude, _ in calls if truth.modality == Modality.REGION)

    def test_baseline_alone(self, small_stream):
        records, vocab, grid = small_stream
        report = tfidf_baseline(records, vocab, grid, _eval_config(), with_users=True)
        assert report["queries"]["region"] > 0

    def test_sweep(self, small_stream):
        records, vocab, grid = small_stream
        config = _eval_config(windows=2)
        curve = sweep(records, vocab, grid, config, "tau", ["0.5", "2"])
        assert [point["value"] for point in curve] == [0.5, 2.0]
        assert all(0.0 < point["region_mrr"] <= 1.0 for point in curve)
        # the caller's config is left untouched
        assert config.training.tau == 1.0

    @pytest.mark.parametrize("mode", ["semi", "base"])
    def test_variants_run(self, small_stream, mode):
        records, vocab, grid = small_stream
        config = _eval_config(g=0.5, windows=2)
        config.training.mode = mode
        report = run_eval(records, vocab, grid, copy.deepcopy(config))
        assert report["mode"] == mode
        assert report["ustar"]["queries"]["region"] > 0
