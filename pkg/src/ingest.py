"""
Record stream ingestion.
Parses JSONL/CSV lines, cleans message text, and maps every unit to a dense id.
"""

import csv
import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional

from sklearn.feature_extraction.text import ENGLISH_STOP_WORDS

from .discretize import GridSpec, locate, time_bin_of
from .errors import OutOfBoundsError, ParseError, ValidationError
from .units import MODALITIES, Modality, UnitId
from .utils import ascii_fold, decode_html_entities

logger = logging.getLogger("ustar")

STOPWORDS = frozenset(ENGLISH_STOP_WORDS)
CSV_HEADER = ("ts", "lat", "lon", "user", "text")

_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_MENTION_RE = re.compile(r"@\w+")
_SPLIT_RE = re.compile(r"[^a-z0-9]+")


@dataclass(frozen=True)
class RawRecord:
    """One decoded stream item, before discretization and vocabulary lookup."""
    timestamp: float
    user: str
    lat: Optional[float] = None
    lon: Optional[float] = None
    text: Optional[str] = None
    keywords: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if not (isinstance(self.timestamp, (int, float)) and math.isfinite(self.timestamp) and self.timestamp > 0):
            raise ValidationError(f"timestamp must be a positive number, got {self.timestamp!r}")
        if (self.lat is None) != (self.lon is None):
            raise ValidationError("lat and lon must be both present or both absent")
        if self.lat is not None:
            if not (math.isfinite(self.lat) and -90.0 <= self.lat <= 90.0):
                raise ValidationError(f"lat {self.lat} outside [-90, 90]")
            if not (math.isfinite(self.lon) and -180.0 <= self.lon <= 180.0):
                raise ValidationError(f"lon {self.lon} outside [-180, 180]")
        if not self.user or any(c in self.user for c in "\t\r\n"):
            raise ValidationError(f"invalid user id {self.user!r}")
        if self.text is None and self.keywords is None:
            raise ValidationError("record needs either text or keywords")

    @property
    def geotagged(self) -> bool:
        return self.lat is not None

    def message(self) -> str:
        if self.keywords is not None:
            return " ".join(self.keywords)
        return self.text or ""


@dataclass(frozen=True)
class Record:
    """A discretized record: every attribute is a dense unit id."""
    hour: int
    region: Optional[int]
    keywords: tuple[int, ...]
    user: int
    arrival_index: int
    timestamp: float = 0.0

    def __post_init__(self):
        if not self.keywords:
            raise ValidationError(f"record {self.arrival_index} has no keyword")

    @property
    def is_gtsm(self) -> bool:
        return self.region is not None

    def without_region(self) -> "Record":
        return replace(self, region=None)

    def units(self, region: Optional[int] = None) -> list[UnitId]:
        """Units of the record; `region` stands in for a missing location."""
        loc = self.region if self.region is not None else region
        units = []
        if loc is not None:
            units.append(UnitId(Modality.REGION, loc))
        units.append(UnitId(Modality.HOUR, self.hour))
        units.append(UnitId(Modality.USER, self.user))
        units.extend(UnitId(Modality.KEYWORD, w) for w in self.keywords)
        return units


class Vocabulary:
    """
    Bidirectional string ↔ id maps per modality, plus frequency counts.
    Regions and hours are identity-mapped (their ids come from the grid and the clock).
    """

    def __init__(self, n_regions: int = 0, n_hours: int = 24):
        self._ids: dict[Modality, dict[str, int]] = {Modality.KEYWORD: {}, Modality.USER: {}}
        self._strings: dict[Modality, list[str]] = {Modality.KEYWORD: [], Modality.USER: []}
        self._fixed_sizes = {Modality.REGION: int(n_regions), Modality.HOUR: int(n_hours)}
        self.counts: dict[Modality, Counter] = {m: Counter() for m in MODALITIES}
        self.token_counts: Counter = Counter()
        self.frozen = False

    def size(self, modality: Modality) -> int:
        if modality in self._fixed_sizes:
            return self._fixed_sizes[modality]
        return len(self._strings[modality])

    def sizes(self) -> dict[Modality, int]:
        return {m: self.size(m) for m in MODALITIES}

    def knows(self, modality: Modality, string: str) -> bool:
        try:
            self.id_of(modality, string)
        except (KeyError, ValueError):
            return False
        return True

    def id_of(self, modality: Modality, string: str) -> int:
        if modality in self._fixed_sizes:
            idx = int(string)
            if not 0 <= idx < self._fixed_sizes[modality]:
                raise KeyError(f"{modality.value} id {idx} out of range")
            return idx
        return self._ids[modality][string]

    def string_of(self, modality: Modality, idx: int) -> str:
        if modality in self._fixed_sizes:
            if not 0 <= idx < self._fixed_sizes[modality]:
                raise KeyError(f"{modality.value} id {idx} out of range")
            return str(idx)
        return self._strings[modality][idx]

    def add(self, modality: Modality, string: str) -> int:
        """Return the id of string, appending a new id if unseen."""
        ids = self._ids[modality]
        if string in ids:
            return ids[string]
        if self.frozen:
            raise ValidationError(f"unknown {modality.value} {string!r} (vocabulary is frozen)")
        idx = len(self._strings[modality])
        ids[string] = idx
        self._strings[modality].append(string)
        return idx

    def observe(self, tokens: Iterable[str]) -> None:
        self.token_counts.update(tokens)

    def count_unit(self, unit: UnitId) -> None:
        self.counts[unit.modality][unit.index] += 1

    def freeze(self) -> None:
        self.frozen = True

    def save(self, path: str) -> None:
        """Sidecar text file: modality<TAB>id<TAB>string<TAB>count per line."""
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            for modality in MODALITIES:
                for idx in range(self.size(modality)):
                    string = self.string_of(modality, idx)
                    f.write(f"{modality.value}\t{idx}\t{string}\t{self.counts[modality][idx]}\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        vocab = cls()
        fixed_max = {Modality.REGION: -1, Modality.HOUR: -1}
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 4:
                    raise ParseError("expected 4 tab-separated fields in vocabulary sidecar", line_no)
                try:
                    modality = Modality(parts[0])
                    idx, count = int(parts[1]), int(parts[3])
                except ValueError as e:
                    raise ParseError(f"bad vocabulary line ({e})", line_no) from e
                if modality in fixed_max:
                    fixed_max[modality] = max(fixed_max[modality], idx)
                else:
                    if idx != len(vocab._strings[modality]):
                        raise ParseError(f"{modality.value} ids must be dense and ordered", line_no)
                    vocab._ids[modality][parts[2]] = idx
                    vocab._strings[modality].append(parts[2])
                if count:
                    vocab.counts[modality][idx] = count
                    if modality == Modality.KEYWORD:
                        vocab.token_counts[parts[2]] = count
        for modality, top in fixed_max.items():
            if top >= 0:
                vocab._fixed_sizes[modality] = top + 1
        return vocab


def tokenize(text: str, stopwords: frozenset = STOPWORDS) -> list[str]:
    """
    Lowercased, ASCII-folded alphanumeric tokens with URLs, @-mentions and stopwords removed.
    Hashtags keep their word form ("#AustralianOpen" → "australianopen").
    """
    if not text:
        return []
    text = decode_html_entities(text)
    text = _URL_RE.sub(" ", text)
    text = _MENTION_RE.sub(" ", text)
    text = ascii_fold(text).lower()
    return [tok for tok in _SPLIT_RE.split(text) if tok and tok not in stopwords]


def _as_float(value: Any, name: str, line_no: Optional[int]) -> Optional[float]:
    if value is None or (isinstance(value, str) and not value.strip()):
        return None
    try:
        return float(value)
    except (TypeError, ValueError) as e:
        raise ParseError(f"field '{name}' is not a number: {value!r}", line_no) from e


def parse_record(line: str, format: str = "jsonl", line_no: Optional[int] = None) -> RawRecord:
    """Decode one serialized record (JSONL object or CSV row ts,lat,lon,user,text)."""
    if format == "jsonl":
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"malformed JSON ({e.msg})", line_no) from e
        if not isinstance(obj, dict):
            raise ParseError("JSON record must be an object", line_no)
        if "ts" not in obj or "user" not in obj:
            raise ParseError("missing required field 'ts' or 'user'", line_no)
        keywords = obj.get("keywords")
        if keywords is not None:
            if not isinstance(keywords, list):
                raise ParseError("'keywords' must be a list of strings", line_no)
            keywords = tuple(str(k) for k in keywords)
        text = obj.get("text")
        fields = dict(
            ts=obj["ts"], lat=obj.get("lat"), lon=obj.get("lon"),
            user=obj["user"], text=None if text is None else str(text), keywords=keywords,
        )
    elif format == "csv":
        rows = list(csv.reader([line]))
        if not rows or len(rows[0]) != len(CSV_HEADER):
            raise ParseError(f"expected {len(CSV_HEADER)} CSV fields ({','.join(CSV_HEADER)})", line_no)
        ts, lat, lon, user, text = rows[0]
        fields = dict(ts=ts, lat=lat, lon=lon, user=user, text=text, keywords=None)
    else:
        raise ValueError(f"unknown record format {format!r}")

    ts = _as_float(fields["ts"], "ts", line_no)
    if ts is None:
        raise ParseError("field 'ts' is empty", line_no)
    try:
        return RawRecord(
            timestamp=ts,
            user=str(fields["user"]).strip(),
            lat=_as_float(fields["lat"], "lat", line_no),
            lon=_as_float(fields["lon"], "lon", line_no),
            text=fields["text"],
            keywords=fields["keywords"],
        )
    except ValidationError as e:
        prefix = f"line {line_no}: " if line_no is not None else ""
        raise ValidationError(f"{prefix}{e}") from e


def raw_to_json(raw: RawRecord) -> str:
    """Inverse of parse_record for the JSONL format."""
    obj: dict[str, Any] = {"ts": raw.timestamp, "user": raw.user}
    if raw.geotagged:
        obj["lat"] = raw.lat
        obj["lon"] = raw.lon
    if raw.keywords is not None:
        obj["keywords"] = list(raw.keywords)
    else:
        obj["text"] = raw.text
    return json.dumps(obj, ensure_ascii=False)


@dataclass
class ReaderStats:
    lines: int = 0
    parsed: int = 0
    parse_errors: int = 0
    invalid: int = 0
    out_of_order: int = 0


class StreamReader:
    """Reads a record file line by line, counting and skipping bad lines."""

    def __init__(self, path: str, format: str = "jsonl"):
        self.path = path
        self.format = format
        self.stats = ReaderStats()

    def __iter__(self) -> Iterator[tuple[int, RawRecord]]:
        last_ts = -math.inf
        with open(self.path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                if self.format == "csv" and line_no == 1 and line.lower().startswith("ts,"):
                    continue
                self.stats.lines += 1
                try:
                    raw = parse_record(line, self.format, line_no)
                except ParseError as e:
                    self.stats.parse_errors += 1
                    logger.warning(f"  ⚠️ Skipping unparseable record: {e}")
                    continue
                except ValidationError as e:
                    self.stats.invalid += 1
                    logger.warning(f"  ⚠️ Skipping invalid record: {e}")
                    continue
                if raw.timestamp < last_ts:
                    self.stats.out_of_order += 1
                    logger.warning(
                        f"  ⚠️ line {line_no}: timestamp {raw.timestamp} earlier than {last_ts}, accepted"
                    )
                last_ts = max(last_ts, raw.timestamp)
                self.stats.parsed += 1
                yield line_no, raw


@dataclass
class PreprocessStats:
    seen: int = 0
    emitted: int = 0
    dropped_empty: int = 0
    dropped_out_of_bounds: int = 0

    @property
    def dropped(self) -> int:
        return self.dropped_empty + self.dropped_out_of_bounds


@dataclass
class Preprocessor:
    """
    Turns RawRecords into Records: text cleaning, frequency filtering, discretization, id assignment.
    With running_counts the frequency filter uses counts seen so far (stream mode);
    otherwise vocab.token_counts must already hold the corpus counts (offline mode).
    """
    vocab: Vocabulary
    grid: Optional[GridSpec] = None
    min_freq: int = 100
    tz_offset_min: int = 0
    time_bins: int = 24
    running_counts: bool = False
    stopwords: frozenset = STOPWORDS
    stats: PreprocessStats = field(default_factory=PreprocessStats)
    next_index: int = 0

    def tokens_of(self, raw: RawRecord) -> list[str]:
        return tokenize(raw.message(), self.stopwords)

    def preprocess(self, raw: RawRecord) -> Optional[Record]:
        """Return the Record, or None when the record is dropped."""
        self.stats.seen += 1
        tokens = self.tokens_of(raw)
        if self.running_counts:
            self.vocab.observe(tokens)
        kept = sorted({t for t in tokens if self.vocab.token_counts[t] >= self.min_freq})
        if not kept:
            self.stats.dropped_empty += 1
            return None

        region = None
        if raw.geotagged:
            if self.grid is None:
                raise ValueError("a grid is required to preprocess geotagged records")
            try:
                region = locate(raw.lat, raw.lon, self.grid)
            except OutOfBoundsError:
                self.stats.dropped_out_of_bounds += 1
                return None

        if self.vocab.frozen:
            known = [t for t in kept if t in self.vocab._ids[Modality.KEYWORD]]
            if not known:
                self.stats.dropped_empty += 1
                return None
            kept = known
        keyword_ids = tuple(sorted(self.vocab.add(Modality.KEYWORD, t) for t in kept))
        user_id = self.vocab.add(Modality.USER, raw.user)

        record = Record(
            hour=time_bin_of(raw.timestamp, self.tz_offset_min, self.time_bins),
            region=region,
            keywords=keyword_ids,
            user=user_id,
            arrival_index=self.next_index,
            timestamp=float(raw.timestamp),
        )
        self.next_index += 1
        for unit in record.units():
            self.vocab.count_unit(unit)
        self.stats.emitted += 1
        return record


def preprocess(
    raw: RawRecord,
    vocab: Vocabulary,
    min_freq: int = 100,
    grid: Optional[GridSpec] = None,
    tz_offset_min: int = 0,
    arrival_index: int = 0,
) -> Optional[Record]:
    """One-shot preprocessing of a single record against an existing vocabulary (None = Dropped)."""
    pre = Preprocessor(vocab=vocab, grid=grid, min_freq=min_freq, tz_offset_min=tz_offset_min,
                       next_index=arrival_index)
    return pre.preprocess(raw)


def build_vocabulary(
    raws: Iterable[RawRecord],
    n_regions: int,
    n_hours: int = 24,
    stopwords: frozenset = STOPWORDS,
) -> Vocabulary:
    """Offline first pass: global token counts over the whole corpus."""
    vocab = Vocabulary(n_regions=n_regions, n_hours=n_hours)
    for raw in raws:
        vocab.observe(tokenize(raw.message(), stopwords))
    logger.info(f"Vocabulary pass: {len(vocab.token_counts)} distinct tokens")
    return vocab
