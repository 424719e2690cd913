import pytest

from src.discretize import hour_of, locate
from src.errors import ConfigError
from src.ingest import RawRecord, StreamReader
from src.synth import SynthConfig, cluster_hours, generate, plant_event, write_stream, write_truth


def _small(**overrides) -> SynthConfig:
    params = dict(n_clusters=3, users_per_cluster=4, keywords_per_cluster=4, regions_per_cluster=2,
                  records=400, days=3, seed=5)
    params.update(overrides)
    return SynthConfig(**params)


@pytest.mark.parametrize("overrides", [
    {"noise_rate": 0.5},
    {"n_clusters": 25},
    {"records": 0},
    {"g": 1.5},
    {"keywords_per_user": 5},
])
def test_invalid_config(overrides):
    with pytest.raises(ConfigError):
        generate(_small(**overrides))


def test_too_many_regions_for_the_grid():
    with pytest.raises(ConfigError):
        generate(_small(bbox=[0.0, 0.01, 0.0, 0.01], cell_m=500.0, regions_per_cluster=4))


def test_cluster_hours_partition_the_day():
    assert cluster_hours(0, 5) == [0, 1, 2, 3, 4]
    for n in (1, 3, 5, 24):
        owned = [h for c in range(n) for h in cluster_hours(c, n)]
        assert sorted(owned) == list(range(24))


def test_deterministic_and_ordered():
    raws, truth = generate(_small())
    again, _ = generate(_small())
    assert raws == again
    assert len(raws) == 400 == len(truth.record_cluster)
    assert all(a.timestamp <= b.timestamp for a, b in zip(raws, raws[1:]))
    assert generate(_small(seed=6))[0] != raws


def test_clean_records_follow_their_cluster():
    cfg = _small()
    raws, truth = generate(cfg)
    grid = cfg.grid
    for raw, c, noise in zip(raws, truth.record_cluster, truth.record_noise):
        if noise:
            continue
        cluster = truth.clusters[c]
        assert raw.user in cluster.users
        assert hour_of(raw.timestamp) in cluster.hours
        assert set(raw.keywords) <= set(cluster.keywords)
        assert locate(raw.lat, raw.lon, grid) == truth.homes[raw.user]
        assert truth.homes[raw.user] in cluster.regions


def test_users_keep_to_their_topics():
    raws, truth = generate(_small(keywords_per_user=2))
    assert set(truth.topics) == set(truth.homes)
    for cluster in truth.clusters:
        for user in cluster.users:
            assert len(truth.topics[user]) == 2
            assert set(truth.topics[user]) <= set(cluster.keywords)
    for raw, noise in zip(raws, truth.record_noise):
        if not noise:
            assert set(raw.keywords) <= set(truth.topics[raw.user])
    assert generate(_small())[1].topics == {}


def test_partial_geotagging():
    raws, _ = generate(_small(g=0.5))
    geotagged = sum(r.geotagged for r in raws)
    assert 0 < geotagged < len(raws)
    assert not any(r.geotagged for r in generate(_small(g=0.0))[0])


def test_plant_event(tiny_grid):
    raws = [RawRecord(timestamp=3600 * step + 10, user="a", lat=0.001, lon=0.001, text="tram") for step in range(1, 7)]
    raws += [
        RawRecord(timestamp=3600 * 3 + 20, user="b", lat=0.009, lon=0.009, text="tram"),
        RawRecord(timestamp=3600 * 3 + 30, user="c", text="tram"),
    ]
    raws.sort(key=lambda r: r.timestamp)
    out = plant_event(raws, region=0, start=2, length=2, event_keywords=["quake"], grid=tiny_grid)
    assert len(out) == len(raws)
    changed = [r for r in out if r.keywords == ("quake",)]
    # steps are counted from the first record (hour 1), so hours 3 and 4
    assert sorted(int(r.timestamp // 3600) for r in changed) == [3, 4]
    assert all(r.user == "a" for r in changed)
    assert plant_event([], 0, 0, 1, ["x"], tiny_grid) == []


def test_written_stream_reads_back(tmp_path):
    cfg = _small(g=0.7, records=60)
    raws, truth = generate(cfg)
    path = tmp_path / "out" / "stream.jsonl"
    write_stream(raws, str(path))
    reader = StreamReader(str(path))
    assert [raw for _, raw in reader] == raws
    assert reader.stats.parsed == 60
    assert reader.stats.out_of_order == 0

    truth_path = tmp_path / "truth.json"
    write_truth(truth, cfg, str(truth_path), extra={"event": None})
    assert truth_path.read_text().endswith("\n")
    assert '"homes"' in truth_path.read_text()
