"""
Corpus analytics: the two homophily studies and the region drift statistic.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import sparse
from scipy import stats
from sklearn.feature_extraction.text import TfidfTransformer
from sklearn.metrics.pairwise import cosine_similarity

from .embeddings import Snapshot
from .errors import GridError, ValidationError
from .ingest import RawRecord, Record
from .units import Modality

logger = logging.getLogger("ustar")

EARTH_RADIUS_M = 6_371_008.8


def welch_t_one_tailed(sample_a, sample_b, direction: str = "greater") -> tuple[float, float]:
    """
    Welch's t statistic of mean(a) - mean(b) with Welch–Satterthwaite df.
    direction="greater" tests H1: mean(a) > mean(b); "less" tests H1: mean(a) < mean(b).
    """
    if direction not in ("greater", "less"):
        raise ValueError(f"direction must be 'greater' or 'less', got {direction!r}")
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least 2 observations")

    va = a.var(ddof=1) / len(a)
    vb = b.var(ddof=1) / len(b)
    diff = a.mean() - b.mean()
    pooled = va + vb
    if pooled == 0.0:
        if diff == 0.0:
            return 0.0, 0.5
        t_stat = math.copysign(math.inf, diff)
        favours = (diff > 0) == (direction == "greater")
        return t_stat, 0.0 if favours else 1.0

    t_stat = diff / math.sqrt(pooled)
    df = pooled ** 2 / (va ** 2 / (len(a) - 1) + vb ** 2 / (len(b) - 1))
    if direction == "greater":
        p = stats.t.sf(t_stat, df)
    else:
        p = stats.t.cdf(t_stat, df)
    return float(t_stat), float(p)


@dataclass
class HomophilyReport:
    study: str
    mean_neighbours: float
    mean_non_neighbours: float
    t: float
    p: float
    samples: int
    params: dict = field(default_factory=dict)

    def rejects(self, alpha: float = 0.01) -> bool:
        return self.p < alpha

    def to_dict(self) -> dict:
        return asdict(self)


def _user_matrices(records: Sequence[Record], users: np.ndarray) -> tuple[sparse.csr_matrix, sparse.csr_matrix]:
    """users × keyword and users × region count matrices (visits from geotagged records only)."""
    row_of = {int(u): i for i, u in enumerate(users)}
    kw_rows, kw_cols, rg_rows, rg_cols = [], [], [], []
    for record in records:
        row = row_of.get(record.user)
        if row is None:
            continue
        kw_rows.extend([row] * len(record.keywords))
        kw_cols.extend(record.keywords)
        if record.region is not None:
            rg_rows.append(row)
            rg_cols.append(record.region)

    def build(rows, cols):
        n_cols = (max(cols) + 1) if cols else 1
        data = np.ones(len(rows), dtype=np.float64)
        return sparse.coo_matrix((data, (rows, cols)), shape=(len(users), n_cols)).tocsr()

    return build(kw_rows, kw_cols), build(rg_rows, rg_cols)


def study_content_vs_visits(
    records: Sequence[Record],
    n: int = 10,
    users: int = 5000,
    seed: int = 42,
    min_tweets: int = 5,
) -> HomophilyReport:
    """
    Do users with similar content visit similar regions?
    For each sampled user, compare the mean visit similarity with its n most
    content-similar users against n random other users (one-tailed Welch test).
    """
    counts: dict[int, int] = {}
    for record in records:
        counts[record.user] = counts.get(record.user, 0) + 1
    eligible = np.array(sorted(u for u, c in counts.items() if c >= min_tweets), dtype=np.int64)
    if len(eligible) < 3:
        raise ValidationError(f"only {len(eligible)} users with at least {min_tweets} records")
    n_eff = min(n, (len(eligible) - 1) // 2)
    if n_eff < n:
        logger.warning(f"  ⚠️ {len(eligible)} eligible users, using n={n_eff} neighbours instead of {n}")

    rng = np.random.default_rng(seed)
    if len(eligible) < users:
        logger.warning(f"  ⚠️ Only {len(eligible)} eligible users (asked for {users}), using all of them")
        sampled = np.arange(len(eligible))
    else:
        sampled = np.sort(rng.choice(len(eligible), size=users, replace=False))

    content_counts, visit_counts = _user_matrices(records, eligible)
    content = TfidfTransformer().fit_transform(content_counts)
    visits = TfidfTransformer().fit_transform(visit_counts)

    content_sim = cosine_similarity(content[sampled], content)
    visit_sim = cosine_similarity(visits[sampled], visits)

    p_nb = np.empty(len(sampled))
    p_nnb = np.empty(len(sampled))
    everyone = np.arange(len(eligible))
    for row, u in enumerate(sampled):
        sims = content_sim[row].copy()
        sims[u] = -np.inf
        # stable sort on -sim: ties go to the lower user id
        order = np.argsort(-sims, kind="stable")
        neighbours = order[:n_eff]
        excluded = np.zeros(len(eligible), dtype=bool)
        excluded[neighbours] = True
        excluded[u] = True
        others = everyone[~excluded]
        non_neighbours = rng.choice(others, size=n_eff, replace=False)
        p_nb[row] = visit_sim[row, neighbours].mean()
        p_nnb[row] = visit_sim[row, non_neighbours].mean()

    t_stat, p = welch_t_one_tailed(p_nb, p_nnb, direction="greater")
    report = HomophilyReport(
        study="content_vs_visits",
        mean_neighbours=float(p_nb.mean()),
        mean_non_neighbours=float(p_nnb.mean()),
        t=t_stat,
        p=p,
        samples=len(sampled),
        params={"n": n_eff, "users": len(sampled), "min_tweets": min_tweets, "seed": seed},
    )
    logger.info(
        f"  🧪 content vs visits: P_nb={report.mean_neighbours:.4f}, "
        f"P_nnb={report.mean_non_neighbours:.4f}, p={report.p:.3g}"
    )
    return report


def haversine_m(lat1, lon1, lat2, lon2) -> np.ndarray:
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(x, dtype=np.float64)) for x in (lat1, lon1, lat2, lon2))
    a = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def study_time_vs_space(
    raws: Sequence[RawRecord],
    h_seconds: int = 3600,
    pairs: int = 100_000,
    seed: int = 42,
    meters: bool = False,
) -> HomophilyReport:
    """
    Are records from the same time bin closer in space than records from different bins?
    Distances are Euclidean in degrees, or haversine meters with meters=True.
    """
    points = sorted(
        (math.floor(r.timestamp / h_seconds), r.lat, r.lon) for r in raws if r.geotagged
    )
    if len(points) < 2:
        raise ValidationError("need at least 2 geotagged records")
    bins = np.array([p[0] for p in points], dtype=np.int64)
    lat = np.array([p[1] for p in points], dtype=np.float64)
    lon = np.array([p[2] for p in points], dtype=np.float64)
    n = len(points)

    _, start, size = np.unique(bins, return_index=True, return_counts=True)
    bin_start = np.repeat(start, size)
    bin_size = np.repeat(size, size)

    rng = np.random.default_rng(seed)

    # same bin: anchor in a bin with >= 2 records, partner elsewhere in that bin
    shared = np.flatnonzero(bin_size >= 2)
    if len(shared) == 0:
        raise ValidationError(f"no time bin of {h_seconds}s holds two geotagged records")
    i = rng.choice(shared, size=pairs)
    k = rng.integers(0, bin_size[i] - 1)
    j = bin_start[i] + k
    j = j + (j >= i)

    # different bins: partner drawn from the records outside the anchor's bin
    spread = np.flatnonzero(bin_size < n)
    if len(spread) == 0:
        raise ValidationError("all geotagged records fall in a single time bin")
    i2 = rng.choice(spread, size=pairs)
    k2 = rng.integers(0, n - bin_size[i2])
    j2 = np.where(k2 < bin_start[i2], k2, k2 + bin_size[i2])

    if meters:
        d_nb = haversine_m(lat[i], lon[i], lat[j], lon[j])
        d_nnb = haversine_m(lat[i2], lon[i2], lat[j2], lon[j2])
    else:
        d_nb = np.hypot(lat[i] - lat[j], lon[i] - lon[j])
        d_nnb = np.hypot(lat[i2] - lat[j2], lon[i2] - lon[j2])

    t_stat, p = welch_t_one_tailed(d_nb, d_nnb, direction="less")
    report = HomophilyReport(
        study="time_vs_space",
        mean_neighbours=float(d_nb.mean()),
        mean_non_neighbours=float(d_nnb.mean()),
        t=t_stat,
        p=p,
        samples=int(pairs),
        params={"h_seconds": h_seconds, "pairs": pairs, "seed": seed, "meters": meters},
    )
    logger.info(
        f"  🧪 time vs space: D_nb={report.mean_neighbours:.4f}, "
        f"D_nnb={report.mean_non_neighbours:.4f}, p={report.p:.3g}"
    )
    return report


@dataclass
class DriftSeries:
    region: int
    window: int
    steps: list[int] = field(default_factory=list)
    epochs: list[int] = field(default_factory=list)
    deltas: list[float] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"step": self.steps, "delta": self.deltas})

    def to_csv(self, path: str) -> None:
        self.to_frame().to_csv(path, index=False)


def region_history(snapshots: Sequence[Snapshot], region: int) -> np.ndarray:
    """(n_snapshots, k) float64 matrix of one region's vector over time."""
    rows = []
    for snap in snapshots:
        table = snap.tables.rows(Modality.REGION)
        if not 0 <= region < len(table):
            raise GridError(f"region {region} outside [0, {len(table)}) in snapshot {snap.epoch}")
        rows.append(table[region].astype(np.float64))
    return np.vstack(rows)


def drift_series(snapshots: Sequence[Snapshot], region: int, window: int) -> DriftSeries:
    """
    Delta_t = ||v_t - mean(v_{t-W}, ..., v_{t-1})|| for every t with W earlier snapshots.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if len(snapshots) < window + 1:
        raise ValidationError(f"need at least {window + 1} snapshots, got {len(snapshots)}")
    history = region_history(snapshots, region)
    series = DriftSeries(region=region, window=window)
    for t in range(window, len(history)):
        mean_prev = history[t - window:t].mean(axis=0)
        series.steps.append(t)
        series.epochs.append(int(snapshots[t].epoch))
        series.deltas.append(float(np.linalg.norm(history[t] - mean_prev)))
    return series
