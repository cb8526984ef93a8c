import os

import pytest

from models.cells import CellKind
from utils.config import (RUNS_ENV, corpus_config, load_config, network_config,
                          train_config)

CONF_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "conf")


@pytest.fixture(autouse=True)
def no_runs_env(monkeypatch):
    monkeypatch.delenv(RUNS_ENV, raising=False)


def test_defaults_build_desk_objects():
    cfg = load_config()
    corpus = corpus_config(cfg)
    assert (corpus.n_train, corpus.n_dev, corpus.n_test) == (240, 7, 8)
    net = network_config(cfg, corpus.linguistic_dim, corpus.layout.output_dim)
    assert net.ff_layer_sizes == (64, 64, 64) and net.hidden_dim == 32
    assert net.kind is CellKind.LSTM
    train = train_config(cfg)
    assert train.learning_rate == pytest.approx(3e-3) and train.seed == 0
    assert cfg.train.select_lr and list(cfg.train.lr_grid) == [1e-2, 3e-3, 1e-3, 3e-4]


def test_desk_file_matches_defaults():
    cfg = load_config(os.path.join(CONF_DIR, "desk.yaml"))
    assert cfg == load_config()


def test_paper_file():
    cfg = load_config(os.path.join(CONF_DIR, "paper.yaml"))
    corpus = corpus_config(cfg)
    assert (corpus.mcc_dim, corpus.bap_dim) == (60, 25)
    net = network_config(cfg, corpus.linguistic_dim, corpus.layout.output_dim)
    assert net.recurrent_spec.input_dim == 512 and net.hidden_dim == 256
    assert cfg.train.select_lr


def test_overrides_and_kind_argument():
    cfg = load_config(overrides=["train.max_epochs=2", "network.kind=GRU", "network.ff_layer_sizes=[8,8]"])
    assert train_config(cfg, seed=4).max_epochs == 2
    assert train_config(cfg, seed=4).seed == 4
    assert network_config(cfg, 10, 7).kind is CellKind.GRU
    assert network_config(cfg, 10, 7, kind="S-LSTM").kind is CellKind.SLSTM
    assert network_config(cfg, 10, 7).ff_layer_sizes == (8, 8)


def test_runs_root_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(RUNS_ENV, str(tmp_path))
    assert load_config(overrides=["run.root=elsewhere"]).run.root == str(tmp_path)


def test_null_clip_norm():
    assert train_config(load_config(overrides=["train.grad_clip_norm=null"])).grad_clip_norm is None


@pytest.mark.parametrize("overrides", [
    ["train.max_epochs"],
    ["corpus.smoothing=4"],
    ["corpus.unknown_key=1"],
])
def test_bad_values_raise_value_error(overrides):
    with pytest.raises(ValueError):
        corpus_config(load_config(overrides=overrides))


def test_missing_file():
    with pytest.raises(ValueError):
        load_config("no/such/file.yaml")


def test_desk_key_value_file_matches_yaml():
    assert load_config(os.path.join(CONF_DIR, "desk.cfg")) == load_config(os.path.join(CONF_DIR, "desk.yaml"))


@pytest.mark.parametrize("name", ["settings.cfg", "settings"])
def test_key_value_lines_are_applied(tmp_path, name):
    path = tmp_path / name
    path.write_text("# tuned\ntrain.learning_rate = 0.01\n\nnetwork.hidden_dim = 16\nablate.kinds = [GRU, S-LSTM]\n")
    cfg = load_config(str(path))
    assert cfg.train.learning_rate == pytest.approx(0.01)
    assert cfg.network.hidden_dim == 16
    assert list(cfg.ablate.kinds) == ["GRU", "S-LSTM"]
    assert cfg.train.momentum == pytest.approx(0.9)


@pytest.mark.parametrize("text", ["train.learning_rat = 0.01\n", "train.learning_rate 0.01\nnetwork.hidden_dim = 4\n"])
def test_bad_key_value_file(tmp_path, text):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ValueError):
        load_config(str(path))


def test_unknown_yaml_key(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("train:\n  learning_rat: 0.01\n")
    with pytest.raises(ValueError):
        load_config(str(path))
