"""
Retrieval evaluation.
Region and keyword retrieval over candidate pools (truth + M negatives),
scored by mean reciprocal rank, for the embedding model and the TF-IDF baselines.
"""

import copy
import logging
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Collection, Optional, Sequence

import numpy as np

from .baselines import CooccurrenceBaseline, make_baseline
from .config import AppConfig, EvalConfig
from .discretize import GridSpec
from .embeddings import EmbeddingSet, cosine_rows
from .ingest import Record, Vocabulary
from .pipeline import OnlineTrainer, iter_steps
from .units import Modality, UnitId
from .utils import parse_duration

logger = logging.getLogger("ustar")

TASKS = ("region", "keyword")
# "appears fewer than th times" thresholds: 10^1, 10^1.5, ..., 10^4
FREQUENCY_THRESHOLDS = tuple(10 ** (1.0 + 0.5 * i) for i in range(7))

Scorer = Callable[[Sequence[UnitId], Sequence[UnitId]], np.ndarray]


@dataclass(frozen=True)
class QueryResult:
    task: str
    truth: UnitId
    rank: int
    window: int = 0
    truth_frequency: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")

    @property
    def reciprocal(self) -> float:
        return 1.0 / self.rank


def keeps_location(arrival_index: int, g: float, seed: int) -> bool:
    """Keyed Bernoulli(g) draw: depends on nothing but (seed, arrival_index)."""
    if g >= 1.0:
        return True
    if g <= 0.0:
        return False
    return bool(np.random.default_rng([seed, arrival_index]).random() < g)


def simulate_ngtsm(records: Sequence[Record], g: float, seed: int) -> tuple[list[Record], dict[int, int]]:
    """
    Keep the location of each geotagged record with probability g.
    Returns the new stream and the true region of every originally geotagged record.
    A record's outcome never depends on the records around it, so a stream prefix
    is simulated exactly as it is inside the full stream.
    """
    if not 0.0 <= g <= 1.0:
        raise ValueError(f"g must lie in [0, 1], got {g}")
    truth = {r.arrival_index: r.region for r in records if r.is_gtsm}
    out = [
        r if (not r.is_gtsm or keeps_location(r.arrival_index, g, seed)) else r.without_region()
        for r in records
    ]
    return out, truth


def rank_by_scores(pool: Sequence[UnitId], scores: Sequence[float]) -> list[tuple[UnitId, float]]:
    """Descending score, ties broken by ascending unit id."""
    return sorted(zip(pool, (float(s) for s in scores)), key=lambda item: (-item[1], item[0].index))


def rank_of(truth: UnitId, pool: Sequence[UnitId], scores: Sequence[float]) -> int:
    for rank, (unit, _) in enumerate(rank_by_scores(pool, scores), 1):
        if unit == truth:
            return rank
    raise ValueError(f"{truth} is not in the candidate pool")


def _rows_or_zero(tables: EmbeddingSet, units: Sequence[UnitId]) -> np.ndarray:
    out = np.zeros((len(units), tables.k), dtype=np.float64)
    for i, unit in enumerate(units):
        rows = tables.rows(unit.modality)
        if unit.index < len(rows):
            out[i] = rows[unit.index]
    return out


def embedding_scores(observed: Sequence[UnitId], pool: Sequence[UnitId], tables: EmbeddingSet) -> np.ndarray:
    """Mean cosine of each candidate to the observed units (units without a row count as zero vectors)."""
    if not observed:
        return np.zeros(len(pool))
    candidates = _rows_or_zero(tables, pool)
    total = np.zeros(len(pool))
    for v in _rows_or_zero(tables, observed):
        total += cosine_rows(candidates, v)
    return total / len(observed)


def rank_candidate_pool(
    observed: Sequence[UnitId], pool: Sequence[UnitId], tables: EmbeddingSet
) -> list[tuple[UnitId, float]]:
    return rank_by_scores(pool, embedding_scores(observed, pool, tables))


def mrr(results: Sequence[QueryResult]) -> float:
    if not results:
        raise ValueError("MRR of an empty result list")
    return float(np.mean([r.reciprocal for r in results]))


def build_pool(
    truth: UnitId,
    candidates: Sequence[int],
    M: int,
    rng: np.random.Generator,
    exclude: Collection[int] = (),
) -> list[UnitId]:
    """
    The truth plus up to M distinct negatives drawn uniformly from candidates.
    Units in `exclude` (the query's own observed units) are never negatives.
    """
    others = np.array([c for c in candidates if c != truth.index and c not in exclude], dtype=np.int64)
    take = min(M, len(others))
    negatives = rng.choice(others, size=take, replace=False) if take else np.empty(0, dtype=np.int64)
    return [truth] + [UnitId(truth.modality, int(i)) for i in negatives]


def select_windows(steps: Sequence[int], cfg: EvalConfig) -> list[int]:
    """
    Explicit windows_at, or cfg.windows distinct steps drawn from the second half of the stream.
    Drawn windows depend on the stream's whole step range; pin them with windows_at to
    compare runs over different stream lengths.
    """
    if cfg.windows_at:
        wanted = [int(s) for s in cfg.windows_at]
        missing = sorted(set(wanted) - set(steps))
        if missing:
            logger.warning(f"  ⚠️ Requested windows with no records: {missing}")
        return sorted(set(wanted) & set(steps))
    second_half = list(steps[len(steps) // 2:])
    if len(second_half) < cfg.windows:
        logger.warning(f"  ⚠️ Only {len(second_half)} candidate windows, using all of them")
    rng = np.random.default_rng(cfg.seed)
    n = min(cfg.windows, len(second_half))
    return sorted(int(s) for s in rng.choice(second_half, size=n, replace=False))


def summarize(results: Sequence[QueryResult]) -> dict:
    """Per-task MRR, per-window breakdown and region-frequency buckets."""
    report: dict = {"mrr": {}, "queries": {}, "windows": [], "frequency_buckets": []}
    for task in TASKS:
        subset = [r for r in results if r.task == task]
        report["mrr"][task] = mrr(subset) if subset else None
        report["queries"][task] = len(subset)

    for window in sorted({r.window for r in results}):
        entry = {"step": window}
        for task in TASKS:
            subset = [r for r in results if r.task == task and r.window == window]
            entry[f"{task}_mrr"] = mrr(subset) if subset else None
            entry[f"{task}_queries"] = len(subset)
        report["windows"].append(entry)

    region_results = [r for r in results if r.task == "region"]
    for th in FREQUENCY_THRESHOLDS:
        subset = [r for r in region_results if r.truth_frequency < th]
        report["frequency_buckets"].append(
            {"threshold": round(th, 3), "region_mrr": mrr(subset) if subset else None, "queries": len(subset)}
        )
    return report


class Evaluator:
    """
    Single online pass: each query window is evaluated on the state trained from
    the records strictly before it, then trained on like any other step.
    """

    def __init__(
        self,
        config: AppConfig,
        vocab: Vocabulary,
        grid: GridSpec,
        include_model: bool = True,
        baselines: Optional[Sequence[str]] = None,
    ):
        self.config = config
        self.cfg = config.evaluation
        self.vocab = vocab
        self.grid = grid
        self.step_seconds = parse_duration(config.ingest.step)
        self.trainer = (
            OnlineTrainer(config.training, vocab, grid, config.grid.tz_offset_min) if include_model else None
        )
        names = self.cfg.baselines if baselines is None else baselines
        self.baselines: dict[str, CooccurrenceBaseline] = {name: make_baseline(name) for name in names}
        self.seen: dict[Modality, Counter] = {Modality.REGION: Counter(), Modality.KEYWORD: Counter()}
        self.results: dict[str, list[QueryResult]] = {}
        self._warned_small_pool = False

    def _scorers(self) -> dict[str, Scorer]:
        scorers: dict[str, Scorer] = {}
        if self.trainer is not None:
            tables = self.trainer.tables
            scorers["ustar"] = lambda observed, pool: embedding_scores(observed, pool, tables)
        for name, baseline in self.baselines.items():
            scorers[name] = baseline.score_pool
        return scorers

    def _pool(self, truth: UnitId, rng: np.random.Generator, exclude: Collection[int] = ()) -> list[UnitId]:
        pool = build_pool(truth, sorted(self.seen[truth.modality]), self.cfg.M, rng, exclude)
        if len(pool) < self.cfg.M + 1 and not self._warned_small_pool:
            self._warned_small_pool = True
            logger.warning(f"  ⚠️ Fewer than M={self.cfg.M} negatives available, pools are smaller")
        return pool

    def evaluate_window(self, step: int, batch: Sequence[Record], truth: dict[int, int]) -> None:
        rng = np.random.default_rng([self.cfg.seed, step])
        scorers = self._scorers()
        for record in batch:
            region = truth.get(record.arrival_index, record.region)
            base = [UnitId(Modality.HOUR, record.hour), UnitId(Modality.USER, record.user)]
            kw_units = [UnitId(Modality.KEYWORD, w) for w in record.keywords]
            queries = []

            if region is not None:
                target = UnitId(Modality.REGION, region)
                queries.append(("region", target, base + kw_units, self.seen[Modality.REGION][region], ()))

            truth_kw = int(rng.choice(record.keywords))
            target = UnitId(Modality.KEYWORD, truth_kw)
            observed = base + [u for u in kw_units if u != target]
            if region is not None:
                observed.append(UnitId(Modality.REGION, region))
            # keywords still in the record are not wrong answers
            queries.append(("keyword", target, observed, 0, set(record.keywords) - {truth_kw}))

            for task, target, observed, freq, exclude in queries:
                pool = self._pool(target, rng, exclude)
                for name, scorer in scorers.items():
                    rank = rank_of(target, pool, scorer(observed, pool))
                    self.results.setdefault(name, []).append(
                        QueryResult(task, target, rank, window=step, truth_frequency=freq)
                    )

    def _train(self, batch: Sequence[Record]) -> None:
        for record in batch:
            for unit in record.units():
                if unit.modality in self.seen:
                    self.seen[unit.modality][unit.index] += 1
            for baseline in self.baselines.values():
                baseline.add(record)
        if self.trainer is not None:
            self.trainer.process_step(list(batch))

    def run(self, records: Sequence[Record]) -> dict:
        simulated, truth = simulate_ngtsm(records, self.cfg.g, self.cfg.seed)
        steps = list(iter_steps(simulated, self.step_seconds))
        windows = select_windows([s for s, _ in steps], self.cfg)
        if not windows:
            logger.warning("  ⚠️ No query windows selected, nothing to evaluate")
        window_set = set(windows)
        last = max(windows) if windows else None

        logger.info("━" * 40)
        logger.info(f"Evaluating {len(windows)} windows (g={self.cfg.g}, M={self.cfg.M})")
        for step, batch in steps:
            if last is None or step > last:
                break
            if step in window_set:
                self.evaluate_window(step, batch, truth)
            self._train(batch)

        report: dict = {"windows": windows, "g": self.cfg.g, "M": self.cfg.M}
        if self.trainer is not None:
            report["mode"] = self.config.training.mode
            report["sampling"] = self.config.training.sampling
            report["tau"] = self.config.training.tau
            report["ustar"] = summarize(self.results.get("ustar", []))
            report["training"] = dict(self.trainer.stats, buffer_size=len(self.trainer.buffer))
        if self.baselines:
            report["baselines"] = {name: summarize(self.results.get(name, [])) for name in self.baselines}
        for name in ["ustar", *self.baselines]:
            section = report.get(name) or report.get("baselines", {}).get(name)
            if section:
                logger.info(
                    f"  📊 {name}: region MRR {_fmt(section['mrr']['region'])}, "
                    f"keyword MRR {_fmt(section['mrr']['keyword'])}"
                )
        return report


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def run_eval(
    records: Sequence[Record],
    vocab: Vocabulary,
    grid: GridSpec,
    config: AppConfig,
    include_model: bool = True,
    baselines: Optional[Sequence[str]] = None,
) -> dict:
    return Evaluator(config, vocab, grid, include_model, baselines).run(records)


def tfidf_baseline(
    records: Sequence[Record], vocab: Vocabulary, grid: GridSpec, config: AppConfig, with_users: bool = False
) -> dict:
    """Baseline report alone, on the same windows and pools as run_eval."""
    name = "tfidf-user" if with_users else "tfidf"
    report = run_eval(records, vocab, grid, config, include_model=False, baselines=[name])
    return report["baselines"][name]


SWEEPABLE = {"tau": ("training", "tau"), "g": ("evaluation", "g")}


def sweep(
    records: Sequence[Record],
    vocab: Vocabulary,
    grid: GridSpec,
    config: AppConfig,
    parameter: str,
    values: Sequence[float],
) -> list[dict]:
    """Re-run the evaluation once per value of a parameter; returns MRR per value."""
    section, key = SWEEPABLE[parameter]
    curve = []
    for value in values:
        cfg = copy.deepcopy(config)
        setattr(getattr(cfg, section), key, float(value))
        cfg.validate()
        logger.info(f"Sweep {parameter}={value}")
        report = run_eval(records, vocab, grid, cfg, include_model=True, baselines=[])
        curve.append({
            "value": float(value),
            "region_mrr": report["ustar"]["mrr"]["region"],
            "keyword_mrr": report["ustar"]["mrr"]["keyword"],
        })
    return curve
