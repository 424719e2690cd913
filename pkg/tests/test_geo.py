import math

import numpy as np
import pytest

from src.embeddings import EmbeddingSet
from src.errors import GeoError
from src.geo import (
    AliasTable,
    GeoInferencer,
    RegionDistribution,
    build_alias,
    infer,
    region_distribution,
    similarity_weight,
    user_similarity,
)
from src.sampler import Buffer
from src.units import Modality


@pytest.fixture
def user_tables():
    """k = 2; users 0 and 1 point the same way, user 2 is orthogonal."""
    arrays = {
        Modality.REGION: np.ones((9, 2)),
        Modality.HOUR: np.ones((24, 2)),
        Modality.KEYWORD: np.ones((3, 2)),
        Modality.USER: np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 1.0]]),
    }
    return EmbeddingSet.from_arrays(arrays, dtype=np.float64)


@pytest.fixture
def buffer(make_record, rng):
    buf = Buffer(rng=rng)
    buf.merge([
        make_record(region=2, user=1, index=0),
        make_record(region=5, user=2, index=1),
        make_record(region=2, user=2, index=2),
        make_record(region=7, user=1, index=3),
        make_record(region=None, user=1, index=4),
    ])
    return buf


class TestSimilarityWeight:
    def test_kernel(self):
        assert similarity_weight(0.0, 0.1) == 1.0
        assert similarity_weight(0.1, 0.1) == pytest.approx(math.exp(-0.5))
        assert similarity_weight(0.11, 0.1) == 0.0

    def test_vectorised(self):
        w = similarity_weight(np.array([0.0, 0.05, 0.2]), 0.1)
        np.testing.assert_allclose(w, [1.0, math.exp(-0.125), 0.0])

    def test_user_similarity(self, user_tables):
        assert user_similarity(0, 1, user_tables, 0.1) == pytest.approx(1.0)
        assert user_similarity(0, 2, user_tables, 0.1) == 0.0


class TestRegionDistribution:
    def test_max_over_similar_geotagged_users(self, user_tables, buffer, make_record):
        dist = region_distribution(make_record(region=None, user=0, index=9), buffer, user_tables, 0.1)
        assert dist.normalized() == pytest.approx({2: 0.5, 7: 0.5})
        assert 5 not in dist.weights

    def test_weights_in_unit_interval(self, user_tables, buffer, make_record):
        dist = region_distribution(make_record(region=None, user=2, index=9), buffer, user_tables, 0.5)
        assert all(0.0 < w <= 1.0 for w in dist.weights.values())
        assert sum(dist.normalized().values()) == pytest.approx(1.0)

    def test_rejects_geotagged_record(self, user_tables, buffer, make_record):
        with pytest.raises(GeoError):
            region_distribution(make_record(region=3), buffer, user_tables, 0.1)

    def test_empty_buffer(self, user_tables, make_record, rng):
        dist = region_distribution(make_record(region=None), Buffer(rng=rng), user_tables, 0.1)
        assert dist.is_empty()
        with pytest.raises(GeoError):
            build_alias(dist)


class TestAliasTable:
    def test_reconstruction(self):
        gen = np.random.default_rng(21)
        for _ in range(20):
            n = int(gen.integers(1, 1001))
            p = gen.random(n) ** 3
            p /= p.sum()
            table = AliasTable(np.arange(n), p)
            np.testing.assert_allclose(table.reconstruct(), p, atol=1e-9)

    def test_empirical_frequencies(self):
        gen = np.random.default_rng(3)
        for n in (2, 7, 40):
            p = gen.random(n)
            p /= p.sum()
            outcomes = np.arange(100, 100 + n)
            table = AliasTable(outcomes, p)
            draws = np.array([table.sample(gen) for _ in range(100_000)])
            freq = np.bincount(draws - 100, minlength=n) / len(draws)
            assert np.max(np.abs(freq - p)) < 0.015

    def test_point_mass(self, rng):
        table = build_alias(RegionDistribution({42: 0.3}))
        assert {table.sample(rng) for _ in range(50)} == {42}

    def test_empty(self):
        with pytest.raises(GeoError):
            AliasTable(np.array([]), np.array([]))


class TestGeoInferencer:
    def test_infers_region_of_similar_user(self, user_tables, buffer, make_record, rng):
        geo = GeoInferencer(c_u=0.1)
        region = geo.infer(make_record(region=None, user=0, index=9), buffer, user_tables, rng)
        assert region in (2, 7)
        assert geo.stats.inferred == 1

    def test_no_similar_user(self, user_tables, make_record, rng):
        buf = Buffer(rng=rng)
        buf.merge([make_record(region=5, user=2, index=0)])
        assert infer(make_record(region=None, user=0, index=1), buf, user_tables, 0.1, rng) is None

    def test_per_step_cache(self, user_tables, buffer, make_record, rng):
        geo = GeoInferencer(c_u=0.1, cache="per-step")
        record = make_record(region=None, user=0, index=9)
        geo.infer(record, buffer, user_tables, rng)
        geo.infer(record, buffer, user_tables, rng)
        assert geo.stats.cache_hits == 1
        geo.clear()
        geo.infer(record, buffer, user_tables, rng)
        assert geo.stats.cache_hits == 1

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            GeoInferencer(c_u=0.0)
        with pytest.raises(ValueError):
            GeoInferencer(cache="forever")


def test_shrinking_threshold_never_grows_support(user_tables, buffer, make_record):
    record = make_record(region=None, user=0, index=9)
    user_tables.rows(Modality.USER)[2] = [1.0, 0.6]
    previous = None
    for c_u in (0.5, 0.2, 0.1, 0.05):
        weights = region_distribution(record, buffer, user_tables, c_u).weights
        if previous is not None:
            assert set(weights) <= set(previous)
            assert all(weights[r] <= previous[r] for r in weights)
        previous = weights


def test_recovers_planted_home_regions(make_record):
    """40 users, two per home region, user vectors clustered by home."""
    gen = np.random.default_rng(31)
    k, n_regions = 16, 20
    directions = gen.normal(size=(n_regions, k))
    homes = np.arange(40) // 2
    users = directions[homes] + 0.01 * gen.normal(size=(40, k))
    tables = EmbeddingSet.from_arrays({
        Modality.REGION: np.zeros((n_regions, k)),
        Modality.HOUR: np.zeros((24, k)),
        Modality.KEYWORD: np.zeros((1, k)),
        Modality.USER: users,
    }, dtype=np.float64)
    buf = Buffer(rng=gen)
    buf.merge([make_record(region=int(homes[u]), user=u, index=u) for u in range(40)])

    geo = GeoInferencer(c_u=0.1)
    hits = sum(
        geo.infer(make_record(region=None, user=u, index=100 + u), buf, tables, gen) == homes[u]
        for u in range(40)
    )
    assert hits / 40 >= 5 / n_regions
