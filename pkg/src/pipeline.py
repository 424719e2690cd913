"""
Stream orchestrator.
Coordinates the online pipeline: Load (record file) → Discretize → per-step
Downsample / Merge / Train, shared by the train and eval commands.
"""

import logging
from dataclasses import dataclass, field
from itertools import groupby
from typing import Callable, Iterable, Iterator, Optional

import numpy as np

from .config import AppConfig, TrainConfig
from .discretize import GridSpec, bbox_from_data, make_grid, step_of
from .embeddings import EmbeddingSet, Snapshot
from .errors import ConfigError
from .geo import GeoInferencer
from .ingest import (
    STOPWORDS,
    PreprocessStats,
    Preprocessor,
    Record,
    ReaderStats,
    StreamReader,
    Vocabulary,
    build_vocabulary,
)
from .sampler import Buffer
from .trainer import NegativeSampler, TrainTrace, train_step
from .units import MODALITIES, Modality

logger = logging.getLogger("ustar")


@dataclass
class LoadedStream:
    records: list[Record]
    vocab: Vocabulary
    grid: GridSpec
    reader_stats: ReaderStats = field(default_factory=ReaderStats)
    preprocess_stats: PreprocessStats = field(default_factory=PreprocessStats)


def resolve_grid(config: AppConfig, path: Optional[str] = None) -> GridSpec:
    """Grid from grid.bbox, or from the data when grid.bbox_from_data is set."""
    if config.grid.bbox:
        return make_grid(config.grid.bbox, config.grid.cell_m)
    if not config.grid.bbox_from_data or path is None:
        raise ConfigError("grid.bbox is not set (use --bbox or --bbox-from-data)")
    reader = StreamReader(path, config.ingest.format)
    points = [(raw.lat, raw.lon) for _, raw in reader if raw.geotagged]
    bbox = bbox_from_data(points)
    logger.info(f"  📐 bbox derived from data: {tuple(round(v, 5) for v in bbox)}")
    return make_grid(bbox, config.grid.cell_m)


def load_records(path: str, config: AppConfig, grid: Optional[GridSpec] = None) -> LoadedStream:
    """
    Read and preprocess a record file.
    Offline mode counts tokens over the whole file first; stream mode filters
    against the counts seen so far.
    """
    grid = grid or resolve_grid(config, path)
    stopwords = STOPWORDS | frozenset(w.lower() for w in config.ingest.extra_stopwords)
    offline = config.ingest.mode == "offline"

    if offline:
        first = StreamReader(path, config.ingest.format)
        vocab = build_vocabulary((raw for _, raw in first), grid.n_regions, config.grid.time_bins, stopwords)
    else:
        vocab = Vocabulary(n_regions=grid.n_regions, n_hours=config.grid.time_bins)

    pre = Preprocessor(
        vocab=vocab,
        grid=grid,
        min_freq=config.ingest.min_freq,
        tz_offset_min=config.grid.tz_offset_min,
        time_bins=config.grid.time_bins,
        running_counts=not offline,
        stopwords=stopwords,
    )
    reader = StreamReader(path, config.ingest.format)
    records = []
    for _, raw in reader:
        record = pre.preprocess(raw)
        if record is not None:
            records.append(record)

    if pre.stats.dropped_out_of_bounds:
        logger.warning(f"  ⚠️ {pre.stats.dropped_out_of_bounds} records outside the bbox were dropped")
    logger.info(
        f"  📥 {reader.stats.parsed} records read, {pre.stats.emitted} kept, "
        f"{pre.stats.dropped} dropped ({reader.stats.parse_errors + reader.stats.invalid} bad lines)"
    )
    return LoadedStream(records, vocab, grid, reader.stats, pre.stats)


def iter_steps(records: Iterable[Record], step_seconds: int) -> Iterator[tuple[int, list[Record]]]:
    """Runs of consecutive records sharing a wall-clock step index floor(ts / step)."""
    for step, group in groupby(records, key=lambda r: step_of(r.timestamp, 0, step_seconds)):
        yield step, list(group)


class OnlineTrainer:
    """Owns the tables, buffer, geo inferencer and RNG streams of one online run."""

    def __init__(
        self,
        cfg: TrainConfig,
        vocab: Vocabulary,
        grid: GridSpec,
        tz_offset_min: int = 0,
        dtype=np.float32,
    ):
        self.cfg = cfg
        self.vocab = vocab
        self.grid = grid
        self.tz_offset_min = tz_offset_min

        init_seq, buffer_seq, train_seq = np.random.SeedSequence(cfg.seed).spawn(3)
        self.init_rng = np.random.default_rng(init_seq)
        self.train_rng = np.random.default_rng(train_seq)

        self.tables = EmbeddingSet(cfg.k, dtype=dtype)
        self.buffer = Buffer(cfg.tau, np.random.default_rng(buffer_seq), cfg.sampling, cfg.cache_z)
        self.geo = GeoInferencer(cfg.c_u, cache=cfg.geo_cache) if cfg.mode == "full" else None
        self.negatives = NegativeSampler(cfg.neg_k, cfg.neg_dist)

        # units that have appeared in a trained batch, with their counts
        self.unit_counts: dict[Modality, dict[int, int]] = {m: {} for m in MODALITIES}
        self.steps_done = 0
        self.last_timestamp = 0.0

        self.stats = {
            "steps": 0,
            "records": 0,
            "gtsm": 0,
            "ngtsm": 0,
            "excluded_ngtsm": 0,
            "updates": 0,
            "inferred": 0,
            "fallback": 0,
        }

    def seen_units(self, modality: Modality) -> list[int]:
        return sorted(self.unit_counts[modality])

    def _observe(self, batch: list[Record]) -> None:
        for record in batch:
            for unit in record.units():
                counts = self.unit_counts[unit.modality]
                counts[unit.index] = counts.get(unit.index, 0) + 1

    def _grow_tables(self) -> None:
        # only units seen so far get rows; fixed modalities are allocated in full
        sizes = {
            Modality.REGION: self.grid.n_regions,
            Modality.HOUR: self.vocab.size(Modality.HOUR),
        }
        for modality in (Modality.KEYWORD, Modality.USER):
            seen = self.unit_counts[modality]
            sizes[modality] = max(len(self.tables[modality]), max(seen) + 1 if seen else 0)
        self.tables.grow_to(sizes, self.init_rng)

    def process_step(self, r_delta: list[Record]) -> TrainTrace:
        """Downsample the buffer, merge the new batch and train on it."""
        if self.cfg.mode == "base":
            kept = [r for r in r_delta if r.is_gtsm]
            self.stats["excluded_ngtsm"] += len(r_delta) - len(kept)
            r_delta = kept
        if not r_delta:
            return TrainTrace()

        self._observe(r_delta)
        self._grow_tables()
        self.buffer.downsample(self.tables)
        self.buffer.merge(r_delta, self.tables)
        if self.geo is not None:
            self.geo.clear()
        self.negatives.refresh(self.unit_counts, self.tables.sizes())

        trace = train_step(
            self.buffer, len(r_delta), self.tables, self.cfg, self.geo, self.train_rng, self.negatives
        )

        n_gtsm = sum(1 for r in r_delta if r.is_gtsm)
        self.stats["steps"] += 1
        self.stats["records"] += len(r_delta)
        self.stats["gtsm"] += n_gtsm
        self.stats["ngtsm"] += len(r_delta) - n_gtsm
        self.stats["updates"] += trace.n_updates
        self.stats["inferred"] += trace.inferred
        self.stats["fallback"] += trace.fallback
        self.steps_done += 1
        self.last_timestamp = max(self.last_timestamp, max(r.timestamp for r in r_delta))
        return trace

    def snapshot(self) -> Snapshot:
        return Snapshot(
            epoch=int(self.last_timestamp),
            tables=self.tables.copy(),
            grid=self.grid,
            tz_offset_min=self.tz_offset_min,
            vocab=self.vocab,
        )

    def run(
        self,
        records: Iterable[Record],
        step_seconds: int,
        on_step: Optional[Callable[[int, TrainTrace], None]] = None,
    ) -> dict[str, int]:
        """Feed the whole stream step by step."""
        logger.info("━" * 40)
        logger.info(
            f"Training: k={self.cfg.k}, eta={self.cfg.eta}, epochs={self.cfg.epochs}, "
            f"tau={self.cfg.tau}, mode={self.cfg.mode}, sampling={self.cfg.sampling}"
        )
        for step, batch in iter_steps(records, step_seconds):
            trace = self.process_step(batch)
            if trace.epoch_losses:
                logger.debug(
                    f"  step {step}: {len(batch)} records, buffer {len(self.buffer)}, "
                    f"mean loss {trace.mean_loss:.4f}"
                )
            if on_step is not None:
                on_step(step, trace)

        stats = dict(self.stats, buffer_size=len(self.buffer))
        logger.info("━" * 40)
        logger.info("  TRAINING SUMMARY")
        logger.info("━" * 40)
        logger.info(f"  ⏱️  Steps trained:        {stats['steps']}")
        logger.info(f"  📍 Geotagged records:    {stats['gtsm']}")
        logger.info(f"  🔎 Non-geotagged:        {stats['ngtsm']}")
        logger.info(f"  🧭 Weak regions drawn:   {stats['inferred']}")
        logger.info(f"  ↩️  Fallbacks:            {stats['fallback']}")
        logger.info(f"  🧮 SGD updates:          {stats['updates']}")
        logger.info(f"  🗃️  Final buffer size:    {stats['buffer_size']}")
        return stats
