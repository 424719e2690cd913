"""
Synthetic record streams with planted cluster structure.
Each cluster owns a set of regions, keywords, hours of the day and users, so
every downstream check has a known ground truth.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .discretize import GridSpec, locate, make_grid, region_bounds, step_of
from .errors import ConfigError
from .ingest import RawRecord, raw_to_json
from .utils import write_json

logger = logging.getLogger("ustar")

# 2017-01-16 00:00:00 UTC
DEFAULT_START = 1_484_524_800


@dataclass
class SynthConfig:
    n_clusters: int = 5
    users_per_cluster: int = 20
    keywords_per_cluster: int = 10
    regions_per_cluster: int = 4
    records: int = 50_000
    noise_rate: float = 0.1
    days: int = 30
    start_ts: int = DEFAULT_START
    bbox: list = field(default_factory=lambda: [-37.90, -37.80, 144.90, 145.02])
    cell_m: float = 300.0
    seed: int = 7
    # fraction of records written with coordinates
    g: float = 1.0
    # each user posts from their own subset of this many cluster keywords (0: all of them)
    keywords_per_user: int = 0

    def validate(self) -> None:
        for name in ("n_clusters", "users_per_cluster", "keywords_per_cluster",
                     "regions_per_cluster", "records", "days"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1 (got {getattr(self, name)})")
        if self.n_clusters > 24:
            raise ConfigError("at most 24 clusters (each needs its own hours of the day)")
        if not 0.0 <= self.noise_rate < 0.5:
            raise ConfigError(f"noise_rate must lie in [0, 0.5) (got {self.noise_rate})")
        if not 0.0 <= self.g <= 1.0:
            raise ConfigError(f"g must lie in [0, 1] (got {self.g})")
        if not 0 <= self.keywords_per_user <= self.keywords_per_cluster:
            raise ConfigError(
                f"keywords_per_user must lie in [0, keywords_per_cluster] (got {self.keywords_per_user})"
            )

    @property
    def grid(self) -> GridSpec:
        return make_grid(self.bbox, self.cell_m)


@dataclass
class Cluster:
    regions: list[int]
    keywords: list[str]
    hours: list[int]
    users: list[str]


@dataclass
class SynthTruth:
    clusters: list[Cluster]
    homes: dict[str, int]
    topics: dict[str, list[str]] = field(default_factory=dict)
    record_cluster: list[int] = field(default_factory=list)
    record_noise: list[bool] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "clusters": [asdict(c) for c in self.clusters],
            "homes": self.homes,
            "topics": self.topics,
            "records": [
                {"index": i, "cluster": c, "noise": n}
                for i, (c, n) in enumerate(zip(self.record_cluster, self.record_noise))
            ],
        }


def cluster_hours(cluster: int, n_clusters: int) -> list[int]:
    """Hours of the day owned by a cluster: contiguous blocks of the 24-hour clock."""
    return [h for h in range(24) if h * n_clusters // 24 == cluster]


def _build_clusters(cfg: SynthConfig, grid: GridSpec, rng: np.random.Generator) -> list[Cluster]:
    block = grid.n_regions // cfg.n_clusters
    if block < cfg.regions_per_cluster:
        raise ConfigError(
            f"grid has {grid.n_regions} regions, too few for {cfg.n_clusters} clusters "
            f"of {cfg.regions_per_cluster} regions"
        )
    clusters = []
    for c in range(cfg.n_clusters):
        regions = sorted(int(r) for r in rng.choice(np.arange(c * block, (c + 1) * block),
                                                     size=cfg.regions_per_cluster, replace=False))
        clusters.append(Cluster(
            regions=regions,
            keywords=[f"kw{c}x{j}" for j in range(cfg.keywords_per_cluster)],
            hours=cluster_hours(c, cfg.n_clusters),
            users=[f"u{c}x{j}" for j in range(cfg.users_per_cluster)],
        ))
    return clusters


def _point_in(region: int, grid: GridSpec, rng: np.random.Generator) -> tuple[float, float]:
    lat_lo, lat_hi, lon_lo, lon_hi = region_bounds(region, grid)
    fy, fx = rng.uniform(0.05, 0.95, size=2)
    return (round(lat_lo + fy * (lat_hi - lat_lo), 6), round(lon_lo + fx * (lon_hi - lon_lo), 6))


def generate(cfg: SynthConfig) -> tuple[list[RawRecord], SynthTruth]:
    """Chronologically ordered records plus their ground truth."""
    cfg.validate()
    grid = cfg.grid
    rng = np.random.default_rng(cfg.seed)
    clusters = _build_clusters(cfg, grid, rng)

    homes = {}
    for cluster in clusters:
        for user in cluster.users:
            homes[user] = int(rng.choice(cluster.regions))
    topics = {}
    if cfg.keywords_per_user:
        for cluster in clusters:
            for user in cluster.users:
                picked = rng.choice(len(cluster.keywords), size=cfg.keywords_per_user, replace=False)
                topics[user] = [cluster.keywords[i] for i in sorted(picked)]
    all_users = [u for c in clusters for u in c.users]
    all_keywords = [w for c in clusters for w in c.keywords]

    rows = []
    for _ in range(cfg.records):
        c = int(rng.integers(cfg.n_clusters))
        noise = bool(rng.random() < cfg.noise_rate)
        n_kw = int(rng.integers(1, 4))
        day = int(rng.integers(cfg.days))
        if noise:
            user = all_users[int(rng.integers(len(all_users)))]
            region = int(rng.integers(grid.n_regions))
            pool = all_keywords
            hour = int(rng.integers(24))
        else:
            cluster = clusters[c]
            user = cluster.users[int(rng.integers(len(cluster.users)))]
            region = homes[user]
            pool = topics.get(user, cluster.keywords)
            hour = cluster.hours[int(rng.integers(len(cluster.hours)))]
        keywords = tuple(pool[i] for i in sorted(rng.choice(len(pool), size=min(n_kw, len(pool)), replace=False)))
        ts = cfg.start_ts + day * 86400 + hour * 3600 + int(rng.integers(3600))
        lat, lon = _point_in(region, grid, rng)
        geotagged = bool(rng.random() < cfg.g)
        rows.append((ts, user, lat, lon, keywords, geotagged, c, noise))

    rows.sort(key=lambda row: row[0])
    raws = []
    truth = SynthTruth(clusters=clusters, homes=homes, topics=topics)
    for ts, user, lat, lon, keywords, geotagged, c, noise in rows:
        raws.append(RawRecord(
            timestamp=ts,
            user=user,
            lat=lat if geotagged else None,
            lon=lon if geotagged else None,
            keywords=keywords,
        ))
        truth.record_cluster.append(c)
        truth.record_noise.append(noise)
    logger.info(f"  🧬 Generated {len(raws)} records in {cfg.n_clusters} clusters over {grid.n_regions} regions")
    return raws, truth


def plant_event(
    raws: Sequence[RawRecord],
    region: int,
    start: int,
    length: int,
    event_keywords: Sequence[str],
    grid: GridSpec,
    step_seconds: int = 3600,
) -> list[RawRecord]:
    """
    Records located in `region` during steps [start, start + length) (counted from
    the first record's step) carry event_keywords instead of their own.
    """
    if not raws:
        return []
    origin = math.floor(raws[0].timestamp / step_seconds) * step_seconds
    out = []
    for raw in raws:
        step = step_of(raw.timestamp, origin, step_seconds)
        if raw.geotagged and start <= step < start + length and locate(raw.lat, raw.lon, grid) == region:
            raw = RawRecord(raw.timestamp, raw.user, raw.lat, raw.lon, keywords=tuple(event_keywords))
        out.append(raw)
    return out


def write_stream(raws: Sequence[RawRecord], path: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for raw in raws:
            f.write(raw_to_json(raw) + "\n")


def write_truth(truth: SynthTruth, cfg: SynthConfig, path: str, extra: Optional[dict] = None) -> None:
    payload = truth.to_dict()
    payload["config"] = asdict(cfg)
    if extra:
        payload.update(extra)
    write_json(path, payload)
