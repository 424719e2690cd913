#!/usr/bin/env python3
"""
ustar: online spatiotemporal embeddings from record streams.
CLI entry point.

Usage:
    python -m src gen --clusters 5 --records 50000 --noise 0.1 --seed 7 --out synth.jsonl --truth truth.json
    python -m src train --input synth.jsonl --config config.yaml --out snapshots/ --step 1h
    python -m src eval --input synth.jsonl --config config.yaml --g 0.5 --windows 20 --out report.json
    python -m src infer-geo --record '{"ts": ..., "user": "u1", "text": "..."}' --snapshot snapshots/step_000010.ustr --buffer recent.jsonl
    python -m src analyze homophily --input stream.jsonl --n 10 --users 5000 --out homophily.json
    python -m src analyze drift --snapshots snapshots/ --region 42 --window 30d --out series.csv
    python -m src export --snapshot snapshots/step_000010.ustr --out vectors.txt
"""

import argparse
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import pandas as pd
import scipy
import sklearn

from . import __version__
from .analysis import drift_series, study_content_vs_visits, study_time_vs_space
from .config import SEED_ENV_VAR, AppConfig, resolve_config
from .discretize import locate, time_bin_of
from .embeddings import export_text, list_snapshots, load_snapshot, save_snapshot, snapshot_path
from .errors import ConfigError, UstarError, ValidationError
from .evaluation import run_eval, sweep
from .geo import region_distribution
from .ingest import Record, StreamReader, Vocabulary, parse_record, tokenize
from .pipeline import OnlineTrainer, load_records
from .sampler import Buffer
from .synth import SynthConfig, generate, plant_event, write_stream, write_truth
from .units import Modality
from .utils import file_digest, format_summary, json_digest, parse_duration, setup_logging, write_json

logger = logging.getLogger("ustar")

VOCAB_FILE = "vocab.tsv"
LOSS_TRACE_FILE = "loss_trace.csv"
MANIFEST_FILE = "manifest.json"


class UsageErrorParser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


@dataclass
class RunManifest:
    command: str
    config: dict
    config_hash: str
    seed: int
    input_digest: Optional[str] = None
    version: str = __version__
    versions: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)


def _bbox(value: str) -> list[float]:
    parts = [p for p in value.replace(" ", "").split(",") if p]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("bbox needs 4 comma-separated values: lat_min,lat_max,lon_min,lon_max")
    try:
        return [float(p) for p in parts]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def build_parser() -> argparse.ArgumentParser:
    common = UsageErrorParser(add_help=False)
    common.add_argument("--config", "-c", default=None, help="Path to YAML configuration file")
    common.add_argument("--seed", type=int, default=None, help=f"Seed for every RNG (overrides {SEED_ENV_VAR})")
    common.add_argument("--log-file", default=None, help="Append logs to this file")
    common.add_argument("--verbose", "-v", action="store_true", help="Enable debug logging")

    stream = UsageErrorParser(add_help=False)
    stream.add_argument("--input", "-i", required=True, help="Record stream (JSONL or CSV)")
    stream.add_argument("--format", choices=("jsonl", "csv"), default=None)
    stream.add_argument("--ingest-mode", choices=("offline", "stream"), default=None,
                        help="offline = two passes for frequency filtering, stream = running counts")
    stream.add_argument("--min-freq", type=int, default=None)
    stream.add_argument("--bbox", type=_bbox, default=None, help="lat_min,lat_max,lon_min,lon_max")
    stream.add_argument("--bbox-from-data", action="store_true", default=None)
    stream.add_argument("--cell-m", type=float, default=None)
    stream.add_argument("--tz-offset-min", type=int, default=None)
    stream.add_argument("--time-bins", type=int, choices=(24, 168), default=None)
    stream.add_argument("--step", default=None, help="Stream step length, e.g. 1h")

    training = UsageErrorParser(add_help=False)
    training.add_argument("--k", type=int, default=None, help="Embedding dimension")
    training.add_argument("--eta", type=float, default=None, help="Learning rate")
    training.add_argument("--epochs", type=int, default=None)
    training.add_argument("--neg-k", type=int, default=None, help="Negatives per positive")
    training.add_argument("--tau", type=float, default=None, help="Buffer decay")
    training.add_argument("--c-u", type=float, default=None, help="Geo-inference distance threshold")
    training.add_argument("--mode", choices=("full", "semi", "base"), default=None)
    training.add_argument("--semi", action="store_true", help="Shortcut for --mode semi")
    training.add_argument("--sampling", choices=("informative", "decay"), default=None)
    training.add_argument("--neg-dist", choices=("uniform", "unigram75"), default=None)
    training.add_argument("--geo-cache", choices=("none", "per-step"), default=None)
    training.add_argument("--cache-z", action="store_true", default=None)

    parser = UsageErrorParser(
        prog="ustar",
        description="Online embeddings of regions, hours, keywords and users from a record stream.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    gen = sub.add_parser("gen", parents=[common], help="Generate a synthetic stream with planted clusters")
    gen.add_argument("--clusters", type=int, default=5)
    gen.add_argument("--users-per-cluster", type=int, default=20)
    gen.add_argument("--keywords-per-cluster", type=int, default=10)
    gen.add_argument("--keywords-per-user", type=int, default=0,
                     help="Keywords each user posts from (0: the whole cluster)")
    gen.add_argument("--regions-per-cluster", type=int, default=4)
    gen.add_argument("--records", type=int, default=50_000)
    gen.add_argument("--noise", type=float, default=0.1)
    gen.add_argument("--days", type=int, default=30)
    gen.add_argument("--g", type=float, default=1.0, help="Fraction of records written with coordinates")
    gen.add_argument("--bbox", type=_bbox, default=None)
    gen.add_argument("--cell-m", type=float, default=300.0)
    gen.add_argument("--event-region", type=int, default=None)
    gen.add_argument("--event-start", type=int, default=0, help="First event step, counted from the first record")
    gen.add_argument("--event-len", type=int, default=10)
    gen.add_argument("--event-keywords", default="eventa,eventb,eventc")
    gen.add_argument("--out", "-o", required=True)
    gen.add_argument("--truth", default=None)

    train = sub.add_parser("train", parents=[common, stream, training], help="Train online, one snapshot per step")
    train.add_argument("--out", "-o", required=True, help="Output directory for snapshots")
    train.add_argument("--snapshot-every", type=int, default=None)

    ev = sub.add_parser("eval", parents=[common, stream, training], help="MRR retrieval evaluation")
    ev.add_argument("--out", "-o", required=True, help="Report JSON path")
    ev.add_argument("--g", type=float, default=None, help="Fraction of geotagged records that keep their location")
    ev.add_argument("--windows", type=int, default=None)
    ev.add_argument("--windows-at", default=None, help="Comma-separated step indices to use as query windows")
    ev.add_argument("--M", type=int, default=None, help="Negatives per candidate pool")
    ev.add_argument("--baseline", default=None, help="tfidf, tfidf-user or both comma-separated")
    ev.add_argument("--tau-grid", default=None, help="Comma-separated tau values to sweep")
    ev.add_argument("--g-grid", default=None, help="Comma-separated g values to sweep")

    geo = sub.add_parser("infer-geo", parents=[common], help="Print the region distribution of one record")
    geo.add_argument("--record", required=True, help="Record as a JSON object")
    geo.add_argument("--snapshot", required=True)
    geo.add_argument("--buffer", required=True, help="JSONL of buffered records")
    geo.add_argument("--vocab", default=None, help=f"Vocabulary sidecar (default: {VOCAB_FILE} beside the snapshot)")
    geo.add_argument("--c-u", type=float, default=None)

    analyze = sub.add_parser("analyze", help="Homophily studies and region drift")
    analyze_sub = analyze.add_subparsers(dest="study", metavar="STUDY", required=True)
    hom = analyze_sub.add_parser("homophily", parents=[common, stream], help="Both homophily studies")
    hom.add_argument("--n", type=int, default=None, help="Content neighbours per user")
    hom.add_argument("--users", type=int, default=None, help="Users to sample")
    hom.add_argument("--min-tweets", type=int, default=None)
    hom.add_argument("--time-bin", dest="h", default=None, help="Time bin length, e.g. 1h")
    hom.add_argument("--pairs", type=int, default=None)
    hom.add_argument("--meters", action="store_true", default=None, help="Haversine meters instead of degrees")
    hom.add_argument("--out", "-o", required=True)
    drift = analyze_sub.add_parser("drift", parents=[common], help="Region drift series over snapshots")
    drift.add_argument("--snapshots", required=True, help="Directory of snapshots")
    drift.add_argument("--region", type=int, required=True)
    drift.add_argument("--window", default=None, help="Running-mean window, e.g. 30d")
    drift.add_argument("--step", default=None, help="Snapshot spacing, e.g. 1h")
    drift.add_argument("--out", "-o", required=True)

    export = sub.add_parser("export", parents=[common], help="Export a snapshot as word2vec-style text")
    export.add_argument("--snapshot", required=True)
    export.add_argument("--vocab", default=None)
    export.add_argument("--out", "-o", required=True)
    return parser


def collect_overrides(args: argparse.Namespace) -> dict[str, Any]:
    """Map parsed flags to "section.key" overrides; absent flags stay None and are skipped."""
    get = lambda name: getattr(args, name, None)  # noqa: E731
    mode = "semi" if get("semi") else get("mode")
    return {
        "seed": get("seed"),
        "ingest.format": get("format"),
        "ingest.mode": get("ingest_mode"),
        "ingest.min_freq": get("min_freq"),
        "ingest.step": get("step") if args.command != "analyze" else None,
        "grid.bbox": get("bbox") if args.command != "gen" else None,
        "grid.bbox_from_data": get("bbox_from_data"),
        "grid.cell_m": get("cell_m") if args.command != "gen" else None,
        "grid.tz_offset_min": get("tz_offset_min"),
        "grid.time_bins": get("time_bins"),
        "training.k": get("k"),
        "training.eta": get("eta"),
        "training.epochs": get("epochs"),
        "training.neg_k": get("neg_k"),
        "training.tau": get("tau"),
        "training.c_u": get("c_u"),
        "training.mode": mode,
        "training.sampling": get("sampling"),
        "training.neg_dist": get("neg_dist"),
        "training.geo_cache": get("geo_cache"),
        "training.cache_z": get("cache_z"),
        "evaluation.g": get("g") if args.command == "eval" else None,
        "evaluation.windows": get("windows"),
        "evaluation.windows_at": get("windows_at"),
        "evaluation.M": get("M"),
        "evaluation.baselines": get("baseline"),
        "evaluation.tau_grid": get("tau_grid"),
        "evaluation.g_grid": get("g_grid"),
        "analysis.n": get("n"),
        "analysis.users": get("users"),
        "analysis.min_tweets": get("min_tweets"),
        "analysis.h": get("h"),
        "analysis.pairs": get("pairs"),
        "analysis.meters": get("meters"),
        "analysis.window": get("window"),
        "run.log_file": get("log_file"),
        "run.snapshot_every": get("snapshot_every"),
    }


def _versions() -> dict[str, str]:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
        "pandas": pd.__version__,
    }


def write_manifest(
    directory: Path,
    command: str,
    config: AppConfig,
    started: float,
    input_path: Optional[str] = None,
    outputs: Optional[list] = None,
) -> Path:
    config_dict = config.to_dict()
    manifest = RunManifest(
        command=command,
        config=config_dict,
        config_hash=json_digest(config_dict),
        seed=config.training.seed,
        input_digest=file_digest(input_path) if input_path else None,
        versions=_versions(),
        timings={"elapsed_seconds": round(time.perf_counter() - started, 3)},
        outputs=[str(o) for o in (outputs or [])],
    )
    path = Path(directory) / MANIFEST_FILE
    write_json(str(path), asdict(manifest))
    return path


def _vocab_path(snapshot: str, explicit: Optional[str]) -> Path:
    return Path(explicit) if explicit else Path(snapshot).parent / VOCAB_FILE


# ── Commands ─────────────────────────────────────────────────────


def cmd_gen(args: argparse.Namespace, config: AppConfig, started: float) -> int:
    seed = args.seed if args.seed is not None else int(os.environ.get(SEED_ENV_VAR) or 7)
    cfg = SynthConfig(
        n_clusters=args.clusters,
        users_per_cluster=args.users_per_cluster,
        keywords_per_cluster=args.keywords_per_cluster,
        regions_per_cluster=args.regions_per_cluster,
        records=args.records,
        noise_rate=args.noise,
        days=args.days,
        cell_m=args.cell_m,
        seed=seed,
        g=args.g,
        keywords_per_user=args.keywords_per_user,
    )
    if args.bbox:
        cfg.bbox = list(args.bbox)
    raws, truth = generate(cfg)
    extra = {"grid": {"bbox": cfg.bbox, "cell_m": cfg.cell_m}}
    if args.event_region is not None:
        keywords = [k for k in args.event_keywords.split(",") if k]
        raws = plant_event(raws, args.event_region, args.event_start, args.event_len, keywords, cfg.grid)
        extra["event"] = {
            "region": args.event_region, "start": args.event_start,
            "length": args.event_len, "keywords": keywords,
        }
    write_stream(raws, args.out)
    outputs = [args.out]
    if args.truth:
        write_truth(truth, cfg, args.truth, extra)
        outputs.append(args.truth)
    config.training.seed = seed
    write_manifest(Path(args.out).parent, "gen", config, started, outputs=outputs)
    logger.info(f"✅ Wrote {len(raws)} records to {args.out}")
    return 0


def cmd_train(args: argparse.Namespace, config: AppConfig, started: float) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    loaded = load_records(args.input, config)
    trainer = OnlineTrainer(config.training, loaded.vocab, loaded.grid, config.grid.tz_offset_min)

    loss_rows = []
    snapshots = []

    def on_step(step: int, trace) -> None:
        if not trace.epoch_losses:
            return
        for epoch, loss in enumerate(trace.epoch_losses, 1):
            loss_rows.append((step, epoch, loss))
        if trainer.steps_done % config.run.snapshot_every == 0:
            path = snapshot_path(str(out_dir), step)
            save_snapshot(trainer.snapshot(), str(path))
            snapshots.append(path)

    stats = trainer.run(loaded.records, parse_duration(config.ingest.step), on_step)
    loaded.vocab.save(str(out_dir / VOCAB_FILE))
    pd.DataFrame(loss_rows, columns=["step", "epoch", "mean_loss"]).to_csv(out_dir / LOSS_TRACE_FILE, index=False)
    write_manifest(out_dir, "train", config, started, args.input,
                   [out_dir / VOCAB_FILE, out_dir / LOSS_TRACE_FILE, *snapshots])

    counters = {
        "records_read": loaded.reader_stats.parsed,
        "bad_lines": loaded.reader_stats.parse_errors + loaded.reader_stats.invalid,
        "dropped": loaded.preprocess_stats.dropped_empty,
        "out_of_bounds": loaded.preprocess_stats.dropped_out_of_bounds,
        "snapshots": len(snapshots),
        **stats,
    }
    logger.info("\n" + format_summary("Training run", counters))
    return 0


def cmd_eval(args: argparse.Namespace, config: AppConfig, started: float) -> int:
    loaded = load_records(args.input, config)
    report = run_eval(loaded.records, loaded.vocab, loaded.grid, config)
    sweeps = {}
    if config.evaluation.tau_grid:
        sweeps["tau"] = sweep(loaded.records, loaded.vocab, loaded.grid, config, "tau", config.evaluation.tau_grid)
    if config.evaluation.g_grid:
        sweeps["g"] = sweep(loaded.records, loaded.vocab, loaded.grid, config, "g", config.evaluation.g_grid)
    if sweeps:
        report["sweeps"] = sweeps
    write_json(args.out, report)
    write_manifest(Path(args.out).parent, "eval", config, started, args.input, [args.out])
    logger.info(f"✅ Report written to {args.out}")
    return 0


def _record_from_raw(raw, vocab: Vocabulary, snapshot, index: int) -> Optional[Record]:
    """Map a raw record onto a frozen vocabulary; None when its user or every keyword is unknown."""
    try:
        user = vocab.id_of(Modality.USER, raw.user)
    except KeyError:
        return None
    keywords = []
    for token in tokenize(raw.message()):
        try:
            keywords.append(vocab.id_of(Modality.KEYWORD, token))
        except KeyError:
            continue
    if not keywords:
        return None
    region = None
    if raw.geotagged and snapshot.grid.contains(raw.lat, raw.lon):
        region = locate(raw.lat, raw.lon, snapshot.grid)
    n_hours = len(snapshot.tables[Modality.HOUR])
    return Record(
        hour=time_bin_of(raw.timestamp, snapshot.tz_offset_min, n_hours if n_hours in (24, 168) else 24),
        region=region,
        keywords=tuple(sorted(set(keywords))),
        user=user,
        arrival_index=index,
        timestamp=float(raw.timestamp),
    )


def cmd_infer_geo(args: argparse.Namespace, config: AppConfig, started: float) -> int:
    snapshot = load_snapshot(args.snapshot)
    vocab = Vocabulary.load(str(_vocab_path(args.snapshot, args.vocab)))
    vocab.freeze()

    raw = parse_record(args.record, "jsonl")
    if not vocab.knows(Modality.USER, raw.user):
        raise ValidationError(f"user {raw.user!r} is not in the vocabulary")
    record = _record_from_raw(raw, vocab, snapshot, index=-1)
    if record is None:
        raise ValidationError("the record has no keyword from the vocabulary")
    if record.is_gtsm:
        record = record.without_region()
    if record.user >= len(snapshot.tables[Modality.USER]):
        raise ValidationError(f"user {raw.user!r} has no embedding in this snapshot")

    buffer = Buffer(config.training.tau)
    members = []
    skipped = 0
    for i, (_, buffered) in enumerate(StreamReader(args.buffer, "jsonl")):
        rec = _record_from_raw(buffered, vocab, snapshot, index=i)
        if rec is None or rec.user >= len(snapshot.tables[Modality.USER]):
            skipped += 1
            continue
        members.append(rec)
    buffer.merge(members)
    if skipped:
        logger.warning(f"  ⚠️ {skipped} buffered records with unknown users or keywords skipped")

    dist = region_distribution(record, buffer, snapshot.tables, config.training.c_u)
    print(json.dumps({str(r): p for r, p in dist.normalized().items()}, indent=2))
    if dist.is_empty():
        logger.info("No geotagged buffered record is similar enough: empty distribution")
    return 0


def cmd_analyze(args: argparse.Namespace, config: AppConfig, started: float) -> int:
    acfg = config.analysis
    if args.study == "homophily":
        loaded = load_records(args.input, config)
        raws = [raw for _, raw in StreamReader(args.input, config.ingest.format)]
        content = study_content_vs_visits(loaded.records, acfg.n, acfg.users, acfg.seed, acfg.min_tweets)
        spatial = study_time_vs_space(raws, parse_duration(acfg.h), acfg.pairs, acfg.seed, acfg.meters)
        write_json(args.out, {"content_vs_visits": content.to_dict(), "time_vs_space": spatial.to_dict()})
        write_manifest(Path(args.out).parent, "analyze homophily", config, started, args.input, [args.out])
        return 0

    paths = list_snapshots(args.snapshots)
    snapshots = [load_snapshot(str(p)) for p in paths]
    window = max(1, parse_duration(acfg.window) // parse_duration(config.ingest.step if args.step is None else args.step))
    series = drift_series(snapshots, args.region, window)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    series.to_csv(args.out)
    write_manifest(Path(args.out).parent, "analyze drift", config, started, outputs=[args.out])
    if series.deltas:
        peak = int(np.argmax(series.deltas))
        logger.info(f"📈 Region {args.region}: peak delta {series.deltas[peak]:.4f} at step {series.steps[peak]}")
    return 0


def cmd_export(args: argparse.Namespace, config: AppConfig, started: float) -> int:
    snapshot = load_snapshot(args.snapshot)
    vocab_path = _vocab_path(args.snapshot, args.vocab)
    vocab = Vocabulary.load(str(vocab_path)) if vocab_path.exists() else None
    if vocab is None:
        logger.warning(f"  ⚠️ No vocabulary at {vocab_path}, exporting numeric ids")
    count = export_text(snapshot, vocab, args.out)
    write_manifest(Path(args.out).parent, "export", config, started, args.snapshot, [args.out])
    logger.info(f"✅ Exported {count} vectors to {args.out}")
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer-geo": cmd_infer_geo,
    "analyze": cmd_analyze,
    "export": cmd_export,
}


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    logger = setup_logging(log_file=getattr(args, "log_file", None), verbose=getattr(args, "verbose", False))

    try:
        config = resolve_config(getattr(args, "config", None), collect_overrides(args))
        if config.run.log_file and not getattr(args, "log_file", None):
            setup_logging(log_file=config.run.log_file, verbose=getattr(args, "verbose", False))
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return 1

    logger.info(f"ustar v{__version__}: {args.command}")
    try:
        return COMMANDS[args.command](args, config, started)
    except KeyboardInterrupt:
        logger.warning("Run interrupted by user.")
        return 130
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return 1
    except UstarError as e:
        logger.error(f"Data error: {e}")
        return 2
    except Exception as e:
        logger.error(f"Fatal error: {e}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
