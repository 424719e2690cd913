"""
TF-IDF co-occurrence baseline.
Rows of the unit co-occurrence matrix are treated as documents and columns as
words; a candidate scores the mean tf-idf weight it has with the observed units.
"""

import logging
from collections import Counter
from itertools import permutations
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from sklearn.feature_extraction.text import TfidfTransformer

from .ingest import Record
from .units import Modality, UnitId

logger = logging.getLogger("ustar")

BASELINES = {
    "tfidf": False,       # TF-IDF-No-User
    "tfidf-user": True,   # TF-IDF-User
}


class CooccurrenceBaseline:
    """Incremental pairwise co-occurrence counts among region, hour, keyword (+ user) units."""

    def __init__(self, with_users: bool = False):
        self.with_users = with_users
        self.modalities = {Modality.REGION, Modality.HOUR, Modality.KEYWORD}
        if with_users:
            self.modalities.add(Modality.USER)
        self.index: dict[UnitId, int] = {}
        self.counts: Counter = Counter()
        self._tfidf: Optional[sparse.csr_matrix] = None

    @property
    def name(self) -> str:
        return "tfidf-user" if self.with_users else "tfidf"

    def _id(self, unit: UnitId) -> int:
        if unit not in self.index:
            self.index[unit] = len(self.index)
        return self.index[unit]

    def add(self, record: Record, region: Optional[int] = None) -> None:
        ids = [self._id(u) for u in record.units(region) if u.modality in self.modalities]
        for a, b in permutations(ids, 2):
            self.counts[(a, b)] += 1
        self._tfidf = None

    def count_matrix(self) -> sparse.csr_matrix:
        n = len(self.index)
        if not self.counts:
            return sparse.csr_matrix((n, n), dtype=np.float64)
        keys = np.array(list(self.counts.keys()), dtype=np.int64)
        values = np.fromiter(self.counts.values(), dtype=np.float64, count=len(self.counts))
        return sparse.coo_matrix((values, (keys[:, 0], keys[:, 1])), shape=(n, n)).tocsr()

    def tfidf_matrix(self) -> sparse.csr_matrix:
        """Raw counts times idf = ln(n_rows / df) + 1, no row normalization."""
        if self._tfidf is None:
            counts = self.count_matrix()
            if counts.shape[0] == 0:
                self._tfidf = counts
            else:
                transformer = TfidfTransformer(norm=None, smooth_idf=False)
                self._tfidf = sparse.csr_matrix(transformer.fit_transform(counts))
        return self._tfidf

    def score(self, candidate: UnitId, observed: Sequence[UnitId]) -> float:
        return float(self.score_pool(observed, [candidate])[0])

    def score_pool(self, observed: Sequence[UnitId], pool: Sequence[UnitId]) -> np.ndarray:
        """Mean tf-idf weight of each candidate against the observed units; unknown pairs count 0."""
        observed = [u for u in observed if u.modality in self.modalities]
        scores = np.zeros(len(pool), dtype=np.float64)
        if not observed:
            return scores
        matrix = self.tfidf_matrix()
        cols = [self.index.get(u) for u in observed]
        for i, candidate in enumerate(pool):
            row = self.index.get(candidate)
            if row is None:
                continue
            scores[i] = sum(matrix[row, c] for c in cols if c is not None) / len(observed)
        return scores


def make_baseline(name: str) -> CooccurrenceBaseline:
    if name not in BASELINES:
        raise ValueError(f"unknown baseline {name!r} (choose from {', '.join(BASELINES)})")
    return CooccurrenceBaseline(with_users=BASELINES[name])
