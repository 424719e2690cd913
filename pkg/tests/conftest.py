import numpy as np
import pytest

from src.config import TrainConfig
from src.discretize import make_grid
from src.embeddings import EmbeddingSet
from src.ingest import Preprocessor, Record, build_vocabulary
from src.synth import SynthConfig, generate
from src.units import MODALITIES

# 0.01° × 0.01° at the equator with 500 m cells: a 3 × 3 grid
TINY_BBOX = (0.0, 0.01, 0.0, 0.01)


@pytest.fixture
def tiny_grid():
    return make_grid(TINY_BBOX, 500.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def train_cfg():
    return TrainConfig(k=8, eta=0.05, epochs=2, neg_k=3, tau=1.0, c_u=0.1, seed=3)


@pytest.fixture
def random_tables():
    """Factory: float64 tables with N(0, scale) entries, one size per modality."""

    def build(sizes, k=6, seed=0, scale=0.5, dtype=np.float64):
        gen = np.random.default_rng(seed)
        arrays = {m: gen.normal(0.0, scale, size=(sizes[m], k)) for m in MODALITIES}
        return EmbeddingSet.from_arrays(arrays, dtype=dtype)

    return build


@pytest.fixture
def make_record():
    def build(hour=0, region=None, keywords=(0,), user=0, index=0, ts=3600.0):
        return Record(hour=hour, region=region, keywords=tuple(keywords), user=user,
                      arrival_index=index, timestamp=ts)

    return build


@pytest.fixture(scope="session")
def small_synth():
    cfg = SynthConfig(
        n_clusters=3,
        users_per_cluster=6,
        keywords_per_cluster=5,
        regions_per_cluster=2,
        records=1500,
        days=5,
        seed=11,
    )
    raws, truth = generate(cfg)
    return cfg, raws, truth


@pytest.fixture(scope="session")
def small_stream(small_synth):
    """(records, vocab, grid) of the small synthetic stream, min_freq = 1."""
    cfg, raws, _ = small_synth
    grid = cfg.grid
    vocab = build_vocabulary(raws, grid.n_regions)
    pre = Preprocessor(vocab=vocab, grid=grid, min_freq=1)
    records = [r for r in (pre.preprocess(raw) for raw in raws) if r is not None]
    return records, vocab, grid
