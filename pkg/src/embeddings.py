"""
Embedding store: the four unit tables (regions, hours, keywords, users),
their initialization, similarity primitives and binary snapshots.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .discretize import GridSpec, make_grid
from .errors import SnapshotError, TrainingError
from .units import MODALITIES, Modality, UnitId

logger = logging.getLogger("ustar")

MAGIC = b"USTR"
FORMAT_VERSION = 1
SNAPSHOT_SUFFIX = ".ustr"


def init_vector(k: int, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """k components drawn uniform in [-0.5/k, 0.5/k]."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return rng.uniform(-0.5 / k, 0.5 / k, size=k).astype(dtype)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; 0 when either vector has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def cosine_rows(matrix: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Cosine of every row of matrix against v, zero-norm rows scoring 0."""
    m = np.asarray(matrix, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nv = np.linalg.norm(v)
    norms = np.linalg.norm(m, axis=1)
    out = np.zeros(len(m), dtype=np.float64)
    if nv == 0.0:
        return out
    ok = norms > 0
    out[ok] = (m[ok] @ v) / (norms[ok] * nv)
    return np.clip(out, -1.0, 1.0)


class EmbeddingTable:
    """Dense (n, k) matrix for one modality, grown in place as the vocabulary grows."""

    def __init__(self, modality: Modality, k: int, rows: Optional[np.ndarray] = None, dtype=np.float32):
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        self.modality = modality
        self.k = k
        self.dtype = np.dtype(dtype)
        if rows is None:
            rows = np.zeros((0, k), dtype=self.dtype)
        rows = np.asarray(rows, dtype=self.dtype)
        if rows.ndim != 2 or rows.shape[1] != k:
            raise ValueError(f"rows must have shape (n, {k}), got {rows.shape}")
        self._buf = np.array(rows, copy=True)
        self._n = len(rows)

    @property
    def data(self) -> np.ndarray:
        """View of the live rows. Do not keep it across grow()."""
        return self._buf[: self._n]

    def __len__(self) -> int:
        return self._n

    def grow(self, new_size: int, rng: np.random.Generator) -> None:
        """Append freshly initialized rows up to new_size; existing rows are untouched."""
        if new_size < self._n:
            raise ValueError(f"cannot shrink {self.modality.value} table from {self._n} to {new_size}")
        if new_size == self._n:
            return
        if new_size > len(self._buf):
            capacity = max(new_size, 2 * len(self._buf), 16)
            buf = np.empty((capacity, self.k), dtype=self.dtype)
            buf[: self._n] = self._buf[: self._n]
            self._buf = buf
        added = new_size - self._n
        fresh = rng.uniform(-0.5 / self.k, 0.5 / self.k, size=(added, self.k))
        self._buf[self._n:new_size] = fresh.astype(self.dtype)
        self._n = new_size


class EmbeddingSet:
    """The four tables sharing k and dtype."""

    def __init__(self, k: int, dtype=np.float32):
        self.k = k
        self.dtype = np.dtype(dtype)
        self.tables = {m: EmbeddingTable(m, k, dtype=dtype) for m in MODALITIES}

    def __getitem__(self, modality: Modality) -> EmbeddingTable:
        return self.tables[modality]

    def rows(self, modality: Modality) -> np.ndarray:
        return self.tables[modality].data

    def vector(self, unit: UnitId) -> np.ndarray:
        return self.tables[unit.modality].data[unit.index]

    def sizes(self) -> dict[Modality, int]:
        return {m: len(t) for m, t in self.tables.items()}

    def grow_to(self, sizes: dict[Modality, int], rng: np.random.Generator) -> None:
        for modality in MODALITIES:
            self.tables[modality].grow(sizes.get(modality, len(self.tables[modality])), rng)

    def assert_finite(self) -> None:
        for modality, table in self.tables.items():
            if not np.all(np.isfinite(table.data)):
                raise TrainingError(f"non-finite component in the {modality.value} table")

    def copy(self, dtype=None) -> "EmbeddingSet":
        out = EmbeddingSet(self.k, dtype=dtype or self.dtype)
        for modality, table in self.tables.items():
            out.tables[modality] = EmbeddingTable(modality, self.k, table.data, dtype=out.dtype)
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[Modality, np.ndarray], dtype=np.float32) -> "EmbeddingSet":
        ks = {a.shape[1] for a in arrays.values()}
        if len(ks) != 1:
            raise ValueError(f"all tables must share k, got {sorted(ks)}")
        out = cls(ks.pop(), dtype=dtype)
        for modality in MODALITIES:
            out.tables[modality] = EmbeddingTable(modality, out.k, arrays[modality], dtype=dtype)
        return out


@dataclass
class Snapshot:
    epoch: int
    tables: EmbeddingSet
    grid: GridSpec
    tz_offset_min: int = 0
    # the vocabulary lives in its own sidecar file and is not serialized here
    vocab: Optional[object] = None


def save_snapshot(snapshot: Snapshot, path: str) -> None:
    """
    Little-endian layout: "USTR", u32 version, u32 k, then per modality
    (region, hour, keyword, user) u32 count + count*k f32; then 4 f64 bbox,
    f64 cell size, i32 tz offset, i64 epoch.
    """
    tables = snapshot.tables
    for modality in MODALITIES:
        if not np.all(np.isfinite(tables.rows(modality))):
            raise SnapshotError(f"refusing to save: non-finite values in the {modality.value} table")

    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, tables.k)]
    for modality in MODALITIES:
        rows = tables.rows(modality)
        parts.append(struct.pack("<I", len(rows)))
        parts.append(np.ascontiguousarray(rows, dtype="<f4").tobytes())
    g = snapshot.grid
    parts.append(struct.pack("<5d", g.lat_min, g.lat_max, g.lon_min, g.lon_max, g.cell_size_m))
    parts.append(struct.pack("<i", int(snapshot.tz_offset_min)))
    parts.append(struct.pack("<q", int(snapshot.epoch)))

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(b"".join(parts))
    logger.debug(f"Snapshot written: {path}")


class _ByteReader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise SnapshotError(
                f"truncated snapshot while reading {what} "
                f"(need {n} bytes, {len(self.data) - self.offset} left)",
                self.offset,
            )
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_snapshot(path: str) -> Snapshot:
    with open(path, "rb") as f:
        reader = _ByteReader(f.read())

    if reader.take(4, "magic") != MAGIC:
        raise SnapshotError("bad magic, not a ustar snapshot", 0)
    version, k = reader.unpack("<II", "header")
    if version != FORMAT_VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}", 4)
    if k < 1:
        raise SnapshotError(f"invalid dimension k={k}", 8)

    arrays = {}
    for modality in MODALITIES:
        (count,) = reader.unpack("<I", f"{modality.value} row count")
        raw = reader.take(count * k * 4, f"{modality.value} rows")
        arrays[modality] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(count, k)

    lat_min, lat_max, lon_min, lon_max, cell = reader.unpack("<5d", "grid spec")
    (tz,) = reader.unpack("<i", "timezone offset")
    (epoch,) = reader.unpack("<q", "epoch")
    if reader.offset != len(reader.data):
        raise SnapshotError("trailing bytes after snapshot payload", reader.offset)

    return Snapshot(
        epoch=epoch,
        tables=EmbeddingSet.from_arrays(arrays),
        grid=make_grid((lat_min, lat_max, lon_min, lon_max), cell),
        tz_offset_min=tz,
    )


def snapshot_path(out_dir: str, step: int) -> Path:
    return Path(out_dir) / f"step_{step:06d}{SNAPSHOT_SUFFIX}"


def list_snapshots(directory: str) -> list[Path]:
    """Snapshot files of a directory in step order."""
    return sorted(Path(directory).glob(f"*{SNAPSHOT_SUFFIX}"))


def export_text(snapshot: Snapshot, vocab, path: str) -> int:
    """word2vec-style text export: "count k" header, then "modality:name v1 ... vk" per unit."""
    tables = snapshot.tables
    total = sum(len(tables[m]) for m in MODALITIES)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{total} {tables.k}\n")
        for modality in MODALITIES:
            for idx, row in enumerate(tables.rows(modality)):
                name = vocab.string_of(modality, idx) if vocab is not None else str(idx)
                values = " ".join(f"{float(x):.6g}" for x in row)
                f.write(f"{modality.value}:{name} {values}\n")
    return total
