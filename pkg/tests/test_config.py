import pytest

from src.config import SEED_ENV_VAR, AppConfig, apply_overrides, load_config, resolve_config
from src.errors import ConfigError


@pytest.fixture
def write_yaml(tmp_path):
    def write(text: str):
        path = tmp_path / "config.yaml"
        path.write_text(text, encoding="utf-8")
        return str(path)
    return write


def test_defaults():
    config = load_config(None)
    assert config.training.k == 300
    assert config.training.eta == 0.05
    assert config.training.neg_k == 5
    assert config.training.c_u == 0.1
    assert config.ingest.min_freq == 100
    assert config.evaluation.M == 10
    assert config.grid.bbox == []


def test_yaml_sections(write_yaml):
    config = load_config(write_yaml(
        "grid:\n  bbox: [-37.9, -37.8, 144.9, 145.02]\n  cell_m: 250\n"
        "training:\n  k: 16\n  mode: semi\n"
        "evaluation:\n  baselines: [tfidf]\n"
    ))
    assert config.grid.cell_m == 250.0
    assert config.training.k == 16
    assert config.training.mode == "semi"
    assert config.evaluation.baselines == ["tfidf"]
    assert config.ingest.format == "jsonl"


def test_empty_file_means_defaults(write_yaml):
    assert load_config(write_yaml("")) == AppConfig()


@pytest.mark.parametrize("text", [
    "training:\n  learning_rate: 0.1\n",
    "server:\n  port: 1\n",
    "training:\n  mode: turbo\n",
    "training:\n  k: many\n",
    "grid:\n  bbox: [1, 2, 3]\n",
    "training: [1, 2]\n",
    "- just\n- a list\n",
    "training:\n  k: [unclosed\n",
])
def test_bad_files(write_yaml, text):
    with pytest.raises(ConfigError):
        load_config(write_yaml(text))


def test_missing_explicit_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "nope.yaml"))
    with pytest.raises(ConfigError):
        load_config(None, required=True)


def test_seed_precedence(write_yaml):
    path = write_yaml("training:\n  seed: 1\n")
    assert resolve_config(path, environ={}).training.seed == 1
    from_env = resolve_config(path, environ={SEED_ENV_VAR: "9"})
    assert from_env.training.seed == from_env.evaluation.seed == from_env.analysis.seed == 9
    assert resolve_config(path, {"seed": 4}, environ={SEED_ENV_VAR: "9"}).training.seed == 4
    with pytest.raises(ConfigError):
        resolve_config(path, environ={SEED_ENV_VAR: "nine"})


def test_overrides():
    config = apply_overrides(AppConfig(), {
        "training.k": "32",
        "training.eta": None,
        "evaluation.tau_grid": "0.5, 1,2",
        "grid.bbox_from_data": "yes",
    })
    assert config.training.k == 32
    assert config.training.eta == 0.05
    assert config.evaluation.tau_grid == ["0.5", "1", "2"]
    assert config.grid.bbox_from_data is True


@pytest.mark.parametrize("key", ["nowhere.k", "training.nope"])
def test_unknown_override(key):
    with pytest.raises(ConfigError):
        apply_overrides(AppConfig(), {key: 1})


def test_overrides_are_validated():
    with pytest.raises(ConfigError):
        apply_overrides(AppConfig(), {"training.neg_dist": "zipf"})
    with pytest.raises(ConfigError):
        apply_overrides(AppConfig(), {"evaluation.g": 2})
