"""
Stream buffer with informativeness-weighted downsampling.
Each sweep keeps a buffered record with probability exp(-tau * z), where z is
the record's intra-agreement under the current embeddings.
"""

import logging
import math
from typing import Callable, Iterable, Optional

import numpy as np
from scipy.special import expit

from .embeddings import EmbeddingSet
from .errors import SamplerError
from .ingest import Record

logger = logging.getLogger("ustar")

SAMPLING_STRATEGIES = ("informative", "decay")

# pair terms involving the missing location of a non-geotagged record
VIRTUAL_PAIR_TERM = 1.0


def pairwise_agreement(vectors: np.ndarray, virtual_units: int = 0) -> float:
    """
    Mean sigmoid(v_i . v_j) over unordered unit pairs; every pair touching one
    of the `virtual_units` contributes VIRTUAL_PAIR_TERM.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    n_real = len(vectors)
    n_total = n_real + virtual_units
    if n_total < 2:
        raise SamplerError(f"intra-agreement needs at least 2 units, got {n_total}")
    n_pairs = n_total * (n_total - 1) // 2
    total = 0.0
    if n_real >= 2:
        gram = vectors @ vectors.T
        upper = np.triu_indices(n_real, k=1)
        total += float(expit(gram[upper]).sum())
    virtual_pairs = n_pairs - n_real * (n_real - 1) // 2
    total += VIRTUAL_PAIR_TERM * virtual_pairs
    return total / n_pairs


def intra_agreement(record: Record, tables: EmbeddingSet) -> float:
    """z_r of a record over its units {region?, hour, user} + keywords."""
    vectors = np.stack([tables.vector(u) for u in record.units()])
    return pairwise_agreement(vectors, virtual_units=0 if record.is_gtsm else 1)


class Buffer:
    """The retained record set, swept once per arriving batch."""

    def __init__(
        self,
        tau: float = 1.0,
        rng: Optional[np.random.Generator] = None,
        sampling: str = "informative",
        cache_z: bool = False,
    ):
        if not tau > 0:
            raise ValueError(f"tau must be positive, got {tau}")
        if sampling not in SAMPLING_STRATEGIES:
            raise ValueError(f"sampling must be one of {SAMPLING_STRATEGIES}, got {sampling!r}")
        self.tau = tau
        self.rng = rng if rng is not None else np.random.default_rng()
        self.sampling = sampling
        self.cache_z = cache_z
        self.records: list[Record] = []
        self._z: list[Optional[float]] = []
        self._gtsm_cache: Optional[tuple[np.ndarray, np.ndarray]] = None

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def retention_probability(self, z: float) -> float:
        if self.sampling == "decay":
            return math.exp(-self.tau)
        return math.exp(-self.tau * z)

    def downsample(
        self,
        tables: Optional[EmbeddingSet] = None,
        agreement: Optional[Callable[[Record], float]] = None,
    ) -> int:
        """One Bernoulli retention trial per buffered record. Returns the number removed."""
        n = len(self.records)
        if n == 0:
            return 0
        if self.sampling == "decay":
            probs = np.full(n, math.exp(-self.tau))
        else:
            agreement = agreement or (lambda r: intra_agreement(r, tables))
            z = np.empty(n, dtype=np.float64)
            for i, record in enumerate(self.records):
                cached = self._z[i]
                if cached is None:
                    cached = agreement(record)
                    if self.cache_z:
                        self._z[i] = cached
                z[i] = cached
            probs = np.exp(-self.tau * z)

        keep = self.rng.random(n) < probs
        self.records = [r for r, k in zip(self.records, keep) if k]
        self._z = [z for z, k in zip(self._z, keep) if k]
        self._gtsm_cache = None
        removed = n - len(self.records)
        logger.debug(f"Buffer sweep: kept {len(self.records)}/{n}")
        return removed

    def merge(self, r_delta: Iterable[Record], tables: Optional[EmbeddingSet] = None) -> None:
        """Append the new batch in arrival order."""
        for record in r_delta:
            self.records.append(record)
            z = None
            if self.cache_z and self.sampling == "informative" and tables is not None:
                z = intra_agreement(record, tables)
            self._z.append(z)
        self._gtsm_cache = None

    def sample_uniform(self, rng: Optional[np.random.Generator] = None) -> Record:
        if not self.records:
            raise SamplerError("cannot sample from an empty buffer")
        rng = rng if rng is not None else self.rng
        return self.records[int(rng.integers(len(self.records)))]

    def gtsm_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(regions, users) of the geotagged buffered records, cached until the buffer changes."""
        if self._gtsm_cache is None:
            gtsm = [r for r in self.records if r.is_gtsm]
            self._gtsm_cache = (
                np.fromiter((r.region for r in gtsm), dtype=np.int64, count=len(gtsm)),
                np.fromiter((r.user for r in gtsm), dtype=np.int64, count=len(gtsm)),
            )
        return self._gtsm_cache


def steady_state_size(batch_size: int, tau: float = 1.0, z: float = 1.0) -> float:
    """Expected buffer size once sweeps balance arrivals: n / (1 - exp(-tau z))."""
    return batch_size / (1.0 - math.exp(-tau * z))
