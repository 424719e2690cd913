"""
Online attribute-recovery training.
Every unit of a sampled record is predicted from the average of its other
units, with negative-sampling SGD on the shared embedding tables.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .config import TrainConfig
from .embeddings import EmbeddingSet
from .errors import TrainingError
from .geo import GeoInferencer
from .ingest import Record
from .sampler import Buffer
from .units import MODALITIES, Modality, UnitId

logger = logging.getLogger("ustar")

NEG_DISTRIBUTIONS = ("uniform", "unigram75")
UNIGRAM_POWER = 0.75


def _context_terms(
    record: Record,
    target: UnitId,
    region: Optional[int],
    allow_missing_region: bool = False,
) -> list[tuple[UnitId, float]]:
    """
    h as a weighted sum of unit rows.
    Keyword target: (v_l + v_t + mean(other keywords) + v_u) / 4.
    Other targets: the remaining three of (v_l, v_t, mean(keywords), v_u), divided by 3.
    An empty keyword mean or a missing region contributes a zero vector.
    """
    if target.modality == Modality.KEYWORD:
        if target.index not in record.keywords:
            raise ValueError(f"{target} is not a keyword of the record")
        others = [w for w in record.keywords if w != target.index]
        denom = 4.0
    else:
        others = list(record.keywords)
        denom = 3.0

    needs_region = target.modality != Modality.REGION
    if needs_region and region is None and not allow_missing_region:
        raise TrainingError(f"context for {target} needs a region; infer one first")

    terms: list[tuple[UnitId, float]] = []
    if needs_region and region is not None:
        terms.append((UnitId(Modality.REGION, region), 1.0 / denom))
    if target.modality != Modality.HOUR:
        terms.append((UnitId(Modality.HOUR, record.hour), 1.0 / denom))
    if target.modality != Modality.USER:
        terms.append((UnitId(Modality.USER, record.user), 1.0 / denom))
    if others:
        weight = 1.0 / (denom * len(others))
        terms.extend((UnitId(Modality.KEYWORD, w), weight) for w in others)
    return terms


def context_vector(
    record: Record,
    target: UnitId,
    tables: EmbeddingSet,
    region: Optional[int] = None,
    allow_missing_region: bool = False,
) -> np.ndarray:
    """h_i for recovering `target` from the rest of the record (float64)."""
    region = record.region if record.region is not None else region
    k = tables.k
    zero = np.zeros(k)

    def vec(modality: Modality, idx: int) -> np.ndarray:
        return tables.rows(modality)[idx].astype(np.float64)

    if target.modality == Modality.KEYWORD:
        others = [w for w in record.keywords if w != target.index]
    else:
        others = list(record.keywords)
    v_w = np.mean([vec(Modality.KEYWORD, w) for w in others], axis=0) if others else zero

    if region is None:
        if target.modality != Modality.REGION and not allow_missing_region:
            raise TrainingError(f"context for {target} needs a region; infer one first")
        v_l = zero
    else:
        v_l = vec(Modality.REGION, region)
    v_t = vec(Modality.HOUR, record.hour)
    v_u = vec(Modality.USER, record.user)

    if target.modality == Modality.KEYWORD:
        return (v_l + v_t + v_w + v_u) / 4.0
    if target.modality == Modality.REGION:
        return (v_t + v_w + v_u) / 3.0
    if target.modality == Modality.HOUR:
        return (v_l + v_w + v_u) / 3.0
    return (v_l + v_w + v_t) / 3.0


def _neg_log_sigmoid(x: float) -> float:
    # -log(sigmoid(x)) without overflow
    return float(np.logaddexp(0.0, -x))


def loss_and_gradients(
    record: Record,
    target: UnitId,
    negatives: Sequence[int],
    tables: EmbeddingSet,
    region: Optional[int] = None,
    allow_missing_region: bool = False,
) -> tuple[float, dict[UnitId, np.ndarray]]:
    """
    L = -log s(v_i.h) - sum_k log s(-v_k.h) and dL/d(row) for every row it touches,
    computed in float64 from the current table values.
    """
    region = record.region if record.region is not None else region
    terms = _context_terms(record, target, region, allow_missing_region)

    h = np.zeros(tables.k)
    for unit, coef in terms:
        h += coef * tables.vector(unit).astype(np.float64)

    grads: dict[UnitId, np.ndarray] = {}

    def add(unit: UnitId, g: np.ndarray) -> None:
        if unit in grads:
            grads[unit] = grads[unit] + g
        else:
            grads[unit] = g

    v_i = tables.vector(target).astype(np.float64)
    score = float(v_i @ h)
    loss = _neg_log_sigmoid(score)
    g_pos = float(expit(score)) - 1.0
    add(target, g_pos * h)
    dh = g_pos * v_i

    neg_rows = tables.rows(target.modality)
    for idx in negatives:
        v_k = neg_rows[idx].astype(np.float64)
        s = float(v_k @ h)
        loss += _neg_log_sigmoid(-s)
        g = float(expit(s))
        add(UnitId(target.modality, int(idx)), g * h)
        dh = dh + g * v_k

    for unit, coef in terms:
        add(unit, coef * dh)
    return loss, grads


def apply_gradients(tables: EmbeddingSet, grads: dict[UnitId, np.ndarray], eta: float) -> None:
    for unit, g in grads.items():
        rows = tables.rows(unit.modality)
        rows[unit.index] -= (eta * g).astype(rows.dtype)


class NegativeSampler:
    """
    Draws negatives of a target's modality, never the target itself.
    "uniform" picks any other unit; "unigram75" weights units by count**0.75
    through a cumulative table.
    """

    def __init__(self, k: int = 5, distribution: str = "uniform"):
        if k < 1:
            raise ValueError(f"negatives per positive must be >= 1, got {k}")
        if distribution not in NEG_DISTRIBUTIONS:
            raise ValueError(f"distribution must be one of {NEG_DISTRIBUTIONS}, got {distribution!r}")
        self.k = k
        self.distribution = distribution
        self._cum: dict[Modality, np.ndarray] = {}
        self._warned: set[Modality] = set()

    def refresh(self, counts: dict[Modality, dict], sizes: dict[Modality, int]) -> None:
        """Rebuild the cumulative tables from unit counts (unigram75 only)."""
        if self.distribution != "unigram75":
            return
        for modality in MODALITIES:
            n = sizes[modality]
            weights = np.zeros(n, dtype=np.float64)
            for idx, count in counts[modality].items():
                if idx < n:
                    weights[idx] = float(count) ** UNIGRAM_POWER
            self._cum[modality] = np.cumsum(weights)

    def draw(self, target: UnitId, vocab_size: int, rng: np.random.Generator) -> list[int]:
        k = self.k
        if vocab_size - 1 < k:
            k = max(vocab_size - 1, 0)
            if target.modality not in self._warned:
                self._warned.add(target.modality)
                logger.warning(
                    f"  ⚠️ {target.modality.value} vocabulary has {vocab_size} units, "
                    f"drawing {k} negatives instead of {self.k}"
                )
        if k == 0:
            return []

        cum = self._cum.get(target.modality)
        if self.distribution == "unigram75" and cum is not None and len(cum) == vocab_size:
            own = cum[target.index] - (cum[target.index - 1] if target.index > 0 else 0.0)
            if cum[-1] - own > 0:
                out: list[int] = []
                while len(out) < k:
                    idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
                    idx = min(idx, vocab_size - 1)
                    if idx != target.index:
                        out.append(idx)
                return out

        # uniform over the other vocab_size - 1 units
        draws = rng.integers(vocab_size - 1, size=k)
        draws[draws >= target.index] += 1
        return draws.tolist()


def sgd_step(
    record: Record,
    target: UnitId,
    tables: EmbeddingSet,
    cfg: TrainConfig,
    rng: np.random.Generator,
    region: Optional[int] = None,
    negatives: Optional[Sequence[int]] = None,
    sampler: Optional[NegativeSampler] = None,
    allow_missing_region: bool = False,
) -> float:
    """One SGD update on the negative-sampling loss of `target`; returns the pre-update loss."""
    if negatives is None:
        sampler = sampler or NegativeSampler(cfg.neg_k, "uniform")
        negatives = sampler.draw(target, len(tables[target.modality]), rng)
    loss, grads = loss_and_gradients(record, target, negatives, tables, region, allow_missing_region)
    apply_gradients(tables, grads, cfg.eta)
    return loss


def record_targets(record: Record, region: Optional[int]) -> list[UnitId]:
    """Every unit of the record takes a turn as target; no region target without a region."""
    return record.units(region)


def record_objective(
    record: Record,
    tables: EmbeddingSet,
    negatives_by_target: dict[UnitId, Sequence[int]],
    region: Optional[int] = None,
) -> float:
    """Direct evaluation of the record's summed surrogate loss at the current tables."""
    region = record.region if record.region is not None else region
    total = 0.0
    for target in record_targets(record, region):
        h = context_vector(record, target, tables, region, allow_missing_region=True)
        v_i = tables.vector(target).astype(np.float64)
        total -= float(np.log(expit(v_i @ h)))
        rows = tables.rows(target.modality)
        for idx in negatives_by_target.get(target, ()):
            total -= float(np.log(expit(-(rows[idx].astype(np.float64) @ h))))
    return total


@dataclass
class TrainTrace:
    epoch_losses: list[float] = field(default_factory=list)
    n_updates: int = 0
    n_records: int = 0
    inferred: int = 0
    fallback: int = 0

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.epoch_losses)) if self.epoch_losses else float("nan")


def train_step(
    buffer: Buffer,
    r_delta_size: int,
    tables: EmbeddingSet,
    cfg: TrainConfig,
    geo: Optional[GeoInferencer],
    rng: np.random.Generator,
    sampler: Optional[NegativeSampler] = None,
) -> TrainTrace:
    """
    cfg.epochs epochs, each drawing r_delta_size records uniformly from the buffer.
    Non-geotagged records get a weak region first (mode "full"); without one
    the region target is skipped and v_l is zero in the other contexts.
    """
    trace = TrainTrace()
    if len(buffer) == 0 or r_delta_size <= 0:
        logger.warning("  ⚠️ Nothing to train on: empty buffer or empty batch")
        return trace
    sampler = sampler or NegativeSampler(cfg.neg_k, cfg.neg_dist)
    sizes = tables.sizes()

    for _epoch in range(cfg.epochs):
        losses = []
        for _ in range(r_delta_size):
            record = buffer.sample_uniform(rng)
            region = record.region
            if region is None:
                if cfg.mode == "full" and geo is not None:
                    region = geo.infer(record, buffer, tables, rng)
                if region is None:
                    trace.fallback += 1
                else:
                    trace.inferred += 1
            trace.n_records += 1
            for target in record_targets(record, region):
                negatives = sampler.draw(target, sizes[target.modality], rng)
                losses.append(
                    sgd_step(record, target, tables, cfg, rng, region=region,
                             negatives=negatives, allow_missing_region=True)
                )
                trace.n_updates += 1
        tables.assert_finite()
        trace.epoch_losses.append(float(np.mean(losses)))
    return trace
