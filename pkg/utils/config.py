'''
Experiment configuration: built-in defaults, merged with a YAML file from
conf/, then with `key=value` dotlist overrides, then the environment. A config
file is either YAML or plain-text `section.key = value` lines.
'''
import dataclasses
import logging
import os
import re

from omegaconf import OmegaConf
from omegaconf.errors import OmegaConfBaseException

from dataset.corpus import CorpusConfig
from models.cells import CellKind
from models.network import NetworkConfig
from utils.train_utils.trainer import LR_GRID, TrainConfig

RUNS_ENV = "GATED_RNN_RUNS"

DEFAULTS = {
    "corpus": {f.name: f.default for f in dataclasses.fields(CorpusConfig)},
    "network": {"kind": CellKind.LSTM.value, "ff_layer_sizes": [64, 64, 64], "hidden_dim": 32},
    "train": {"learning_rate": 3e-3, "momentum": 0.9, "max_epochs": 50, "patience": 8,
              "grad_clip_norm": 5.0, "init_scale": 0.1, "seed": 0, "loss": "sequence_mse",
              "select_lr": True, "lr_grid": list(LR_GRID)},
    "generation": {"vuv_threshold": 0.5},
    "analysis": {"gate": "forget", "target_dim": 0, "boundary_window": 1},
    "bench": {"repeats": 3, "paper_scale": True},
    "ablate": {"seeds": [0, 1, 2], "kinds": [k.value for k in CellKind], "jobs": 1},
    "run": {"root": "runs"},
}

KEY_VALUE_SUFFIXES = (".cfg", ".conf", ".txt")
KEY_VALUE_LINE = re.compile(r"^\s*[A-Za-z_][\w.]*\s*=")


def _is_key_value_file(path, lines):
    if os.path.splitext(path)[1].lower() in KEY_VALUE_SUFFIXES:
        return True
    return any(KEY_VALUE_LINE.match(line) for line in lines)


def read_key_value_file(path, lines):
    '''Plain-text `section.key = value` lines (blank lines and # comments skipped) as a config.'''
    dotlist = []
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if not KEY_VALUE_LINE.match(line):
            raise ValueError("{}:{}: expected `key = value`, got {!r}".format(path, lineno, line))
        key, value = line.split("=", 1)
        dotlist.append("{}={}".format(key.strip(), value.strip()))
    return OmegaConf.from_dotlist(dotlist)


def _read_config_file(path):
    if not os.path.isfile(path):
        raise ValueError("config file {} not found".format(path))
    with open(path) as f:
        lines = f.read().splitlines()
    if _is_key_value_file(path, lines):
        return read_key_value_file(path, lines)
    return OmegaConf.load(path)


def _merge(cfg, other, source):
    try:
        return OmegaConf.merge(cfg, other)
    except OmegaConfBaseException as err:
        # unknown keys land here: the defaults are in struct mode
        raise ValueError("bad config from {}: {}".format(source, err))


def load_config(path=None, overrides=()):
    cfg = OmegaConf.create(DEFAULTS)
    OmegaConf.set_struct(cfg, True)
    if path:
        cfg = _merge(cfg, _read_config_file(path), path)
    if overrides:
        bad = [o for o in overrides if "=" not in o]
        if bad:
            raise ValueError("overrides must look like key=value, got {}".format(bad))
        cfg = _merge(cfg, OmegaConf.from_dotlist(list(overrides)), "overrides")
    if os.environ.get(RUNS_ENV):
        cfg.run.root = os.environ[RUNS_ENV]
    logging.debug("config: {}".format(OmegaConf.to_yaml(cfg)))
    return cfg


def corpus_config(cfg):
    try:
        return CorpusConfig(**OmegaConf.to_container(cfg.corpus, resolve=True))
    except TypeError as err:
        raise ValueError("bad corpus section: {}".format(err))


def network_config(cfg, linguistic_dim, output_dim, kind=None):
    net = cfg.network
    return NetworkConfig(linguistic_dim=linguistic_dim, output_dim=output_dim,
                         kind=CellKind.parse(kind if kind is not None else net.kind),
                         ff_layer_sizes=tuple(net.ff_layer_sizes), hidden_dim=int(net.hidden_dim))


def train_config(cfg, seed=None):
    t = cfg.train
    return TrainConfig(learning_rate=float(t.learning_rate), momentum=float(t.momentum),
                       max_epochs=int(t.max_epochs), patience=int(t.patience),
                       grad_clip_norm=None if t.grad_clip_norm is None else float(t.grad_clip_norm),
                       seed=int(t.seed if seed is None else seed),
                       init_scale=float(t.init_scale), loss=str(t.loss))
