"""
Weak geolocation inference for non-geotagged records.
A region distribution is built from user-embedding similarity to the buffered
geotagged records, then sampled in O(1) through a Vose alias table.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .embeddings import EmbeddingSet, cosine, cosine_rows
from .errors import GeoError
from .ingest import Record
from .sampler import Buffer
from .units import Modality

logger = logging.getLogger("ustar")


def similarity_weight(distance, c_u: float):
    """exp(-d^2 / (2 c_u^2)) for d <= c_u, else 0. Works on scalars and arrays."""
    d = np.asarray(distance, dtype=np.float64)
    w = np.where(d <= c_u, np.exp(-(d ** 2) / (2.0 * c_u ** 2)), 0.0)
    return float(w) if w.ndim == 0 else w


def user_similarity(u_a: int, u_b: int, tables: EmbeddingSet, c_u: float) -> float:
    users = tables.rows(Modality.USER)
    distance = 1.0 - cosine(users[u_a], users[u_b])
    return similarity_weight(distance, c_u)


@dataclass
class RegionDistribution:
    """Unnormalized region weights (each in [0, 1]); zero weights are never stored."""
    weights: dict[int, float] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return float(sum(self.weights.values()))

    def is_empty(self) -> bool:
        return not self.weights

    def normalized(self) -> dict[int, float]:
        total = self.total
        return {region: w / total for region, w in sorted(self.weights.items())}

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(regions, probabilities) sorted by region id."""
        norm = self.normalized()
        return (
            np.fromiter(norm.keys(), dtype=np.int64, count=len(norm)),
            np.fromiter(norm.values(), dtype=np.float64, count=len(norm)),
        )


def region_distribution(record: Record, buffer: Buffer, tables: EmbeddingSet, c_u: float) -> RegionDistribution:
    """Per region, the max similarity between record's user and the users of geotagged buffered records."""
    if record.is_gtsm:
        raise GeoError("region_distribution expects a non-geotagged record")
    regions, users = buffer.gtsm_arrays()
    if len(regions) == 0:
        return RegionDistribution()

    user_rows = tables.rows(Modality.USER)
    unique_users, inverse = np.unique(users, return_inverse=True)
    sims = cosine_rows(user_rows[unique_users], user_rows[record.user])
    weights = similarity_weight(1.0 - sims, c_u)[inverse]

    unique_regions, region_idx = np.unique(regions, return_inverse=True)
    best = np.zeros(len(unique_regions), dtype=np.float64)
    np.maximum.at(best, region_idx, weights)
    keep = best > 0
    return RegionDistribution(dict(zip(unique_regions[keep].tolist(), best[keep].tolist())))


class AliasTable:
    """Vose alias sampler over outcomes 0..n-1 (mapped back to region ids)."""

    def __init__(self, outcomes: np.ndarray, probabilities: np.ndarray):
        probabilities = np.asarray(probabilities, dtype=np.float64)
        n = len(probabilities)
        if n == 0:
            raise GeoError("cannot build an alias table from an empty distribution")
        if np.any(probabilities < 0) or not np.isfinite(probabilities).all():
            raise ValueError("probabilities must be finite and non-negative")
        self.outcomes = np.asarray(outcomes)
        self.n = n
        self.prob = np.ones(n, dtype=np.float64)
        self.alias = np.arange(n, dtype=np.int64)

        scaled = probabilities * (n / probabilities.sum())
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s = small.pop()
            g = large.pop()
            self.prob[s] = scaled[s]
            self.alias[s] = g
            scaled[g] = (scaled[g] + scaled[s]) - 1.0
            if scaled[g] < 1.0:
                small.append(g)
            else:
                large.append(g)
        # leftovers are 1 up to rounding
        for i in large + small:
            self.prob[i] = 1.0
            self.alias[i] = i

    @classmethod
    def from_distribution(cls, dist: RegionDistribution) -> "AliasTable":
        if dist.is_empty():
            raise GeoError("empty region distribution")
        regions, probs = dist.arrays()
        return cls(regions, probs)

    def reconstruct(self) -> np.ndarray:
        """Outcome probabilities implied by (prob, alias)."""
        p = self.prob / self.n
        np.add.at(p, self.alias, (1.0 - self.prob) / self.n)
        return p

    def sample(self, rng: np.random.Generator):
        i = int(rng.integers(self.n))
        if rng.random() >= self.prob[i]:
            i = int(self.alias[i])
        return self.outcomes[i].item()


def build_alias(dist: RegionDistribution) -> AliasTable:
    return AliasTable.from_distribution(dist)


@dataclass
class GeoStats:
    inferred: int = 0
    empty: int = 0
    cache_hits: int = 0


class GeoInferencer:
    """
    Samples a weak region for non-geotagged records.
    With cache="per-step" the alias table of a record is reused until clear() is called.
    """

    def __init__(self, c_u: float = 0.1, cache: str = "none"):
        if not c_u > 0:
            raise ValueError(f"c_u must be positive, got {c_u}")
        if cache not in ("none", "per-step"):
            raise ValueError(f"cache must be 'none' or 'per-step', got {cache!r}")
        self.c_u = c_u
        self.cache = cache
        self.stats = GeoStats()
        self._tables: dict[int, Optional[AliasTable]] = {}

    def clear(self) -> None:
        self._tables.clear()

    def _alias_for(self, record: Record, buffer: Buffer, tables: EmbeddingSet) -> Optional[AliasTable]:
        if self.cache == "per-step" and record.arrival_index in self._tables:
            self.stats.cache_hits += 1
            return self._tables[record.arrival_index]
        dist = region_distribution(record, buffer, tables, self.c_u)
        alias = None if dist.is_empty() else AliasTable.from_distribution(dist)
        if self.cache == "per-step":
            self._tables[record.arrival_index] = alias
        return alias

    def infer(self, record: Record, buffer: Buffer, tables: EmbeddingSet, rng: np.random.Generator) -> Optional[int]:
        """A sampled region id, or None when no geotagged neighbour is similar enough."""
        alias = self._alias_for(record, buffer, tables)
        if alias is None:
            self.stats.empty += 1
            return None
        self.stats.inferred += 1
        return alias.sample(rng)


def infer(
    record: Record,
    buffer: Buffer,
    tables: EmbeddingSet,
    c_u: float,
    rng: np.random.Generator,
) -> Optional[int]:
    return GeoInferencer(c_u).infer(record, buffer, tables, rng)
