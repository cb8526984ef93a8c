"""
Deterministic synthetic speech-like corpus.

Each utterance is a phone sequence with random durations. Every phone owns
fixed MCC / BAP / log-F0 targets and a voicing class; acoustic tracks are the
piecewise-constant targets, moving-average smoothed across boundaries, plus
observation noise. Linguistic frames carry one-hot previous/current/next
phone identity and positional features that reset at every boundary.

Default split sizes: 240 train / 7 dev / 8 test.
"""

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from scipy.ndimage import uniform_filter1d

from dataset.features import (AcousticFrames, StreamLayout, interpolate_f0, meanvar_apply,
                              meanvar_fit, minmax_apply, minmax_fit, read_feature_file,
                              write_feature_file, FeatureFileError)

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
SPLITS = ("train", "dev", "test")
STREAM_FILES = ("lab", "mcc", "bap", "lf0", "vuv")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusConfig:
    phone_inventory_size: int = 20
    n_train: int = 240
    n_dev: int = 7
    n_test: int = 8
    min_duration: int = 5
    max_duration: int = 30
    min_phones: int = 4
    max_phones: int = 10
    mcc_dim: int = 12
    bap_dim: int = 4
    voiced_fraction: float = 0.6
    smoothing: int = 5
    noise_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        error_msg = "[!] invalid corpus config: {}"
        if self.phone_inventory_size < 2:
            raise ValueError(error_msg.format("phone_inventory_size must be >= 2"))
        if min(self.n_train, self.n_dev, self.n_test) < 1:
            raise ValueError(error_msg.format("every split needs at least one utterance"))
        if not 1 <= self.min_duration <= self.max_duration:
            raise ValueError(error_msg.format("need 1 <= min_duration <= max_duration"))
        if not 1 <= self.min_phones <= self.max_phones:
            raise ValueError(error_msg.format("need 1 <= min_phones <= max_phones"))
        if self.mcc_dim < 1 or self.bap_dim < 1:
            raise ValueError(error_msg.format("stream dims must be >= 1"))
        if not 0.0 < self.voiced_fraction <= 1.0:
            raise ValueError(error_msg.format("voiced_fraction must lie in (0, 1]"))
        if self.smoothing < 1 or self.smoothing % 2 == 0:
            raise ValueError(error_msg.format("smoothing width must be a positive odd integer"))
        if self.noise_std < 0:
            raise ValueError(error_msg.format("noise_std must be >= 0"))

    @property
    def linguistic_dim(self):
        return 3 * self.phone_inventory_size + 5

    @property
    def layout(self):
        return StreamLayout(mcc_dim=self.mcc_dim, bap_dim=self.bap_dim)

    def split_size(self, split):
        return {"train": self.n_train, "dev": self.n_dev, "test": self.n_test}[split]


@dataclass(frozen=True, eq=False)
class Utterance:
    utt_id: str
    linguistic: np.ndarray
    acoustic: AcousticFrames
    boundaries: Tuple[int, ...]
    phones: Tuple[int, ...]

    @property
    def n_frames(self):
        return len(self.linguistic)


@dataclass(frozen=True, eq=False)
class Corpus:
    config: CorpusConfig
    splits: Dict[str, List[Utterance]]

    @property
    def train(self):
        return self.splits["train"]

    @property
    def dev(self):
        return self.splits["dev"]

    @property
    def test(self):
        return self.splits["test"]

    def find(self, utt_id):
        for utts in self.splits.values():
            for utt in utts:
                if utt.utt_id == utt_id:
                    return utt
        raise CorpusError("no utterance {!r} in corpus".format(utt_id))


@dataclass(frozen=True, eq=False)
class SequencePair:
    utt_id: str
    inputs: np.ndarray
    targets: np.ndarray
    boundaries: Tuple[int, ...]


@dataclass(frozen=True, eq=False)
class PreparedData:
    train: List[SequencePair]
    dev: List[SequencePair]
    test: List[SequencePair]
    input_stats: object
    output_stats: object
    layout: StreamLayout


def linguistic_features(phones, durations, inventory_size):
    '''
    Blocks: previous phone one-hot (P + 1, last = utterance edge), current
    phone one-hot (P), next phone one-hot (P + 1), then forward position k/d,
    backward position (d-1-k)/d and segment duration d.
    '''
    P = inventory_size
    T = int(np.sum(durations))
    feats = np.zeros((T, 3 * P + 5))
    start = 0
    for k, (phone, dur) in enumerate(zip(phones, durations)):
        rows = slice(start, start + dur)
        prev = phones[k - 1] if k > 0 else P
        nxt = phones[k + 1] if k + 1 < len(phones) else P
        pos = np.arange(dur)
        feats[rows, prev] = 1.0
        feats[rows, P + 1 + phone] = 1.0
        feats[rows, 2 * P + 1 + nxt] = 1.0
        feats[rows, 3 * P + 2] = pos / dur
        feats[rows, 3 * P + 3] = (dur - 1 - pos) / dur
        feats[rows, 3 * P + 4] = dur
        start += dur
    return feats


def recover_boundaries(linguistic, inventory_size):
    '''Segment starts from change points of the current-phone one-hot block.'''
    P = inventory_size
    current = np.argmax(linguistic[:, P + 1:2 * P + 1], axis=1)
    changes = np.flatnonzero(current[1:] != current[:-1]) + 1
    return (0,) + tuple(int(t) for t in changes)


class _Generator(object):

    def __init__(self, config):
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        P = config.phone_inventory_size
        self.n_voiced = max(1, int(round(config.voiced_fraction * P)))
        self.voiced = np.arange(P) < self.n_voiced
        self.mcc_targets = self.rng.normal(0.0, 1.0, size=(P, config.mcc_dim))
        self.bap_targets = self.rng.uniform(-1.0, 0.0, size=(P, config.bap_dim))
        self.lf0_targets = np.log(self.rng.uniform(80.0, 250.0, size=P))

    def _phones(self):
        cfg, rng = self.config, self.rng
        n = int(rng.integers(cfg.min_phones, cfg.max_phones + 1))
        phones = [int(rng.integers(self.n_voiced))]
        while len(phones) < n:
            p = int(rng.integers(cfg.phone_inventory_size - 1))
            phones.append(p + 1 if p >= phones[-1] else p)
        return phones

    def _track(self, targets):
        cfg = self.config
        if cfg.smoothing > 1:
            targets = uniform_filter1d(targets, size=cfg.smoothing, axis=0, mode="nearest")
        return targets + cfg.noise_std * self.rng.standard_normal(targets.shape)

    def utterance(self, utt_id):
        cfg, rng = self.config, self.rng
        phones = self._phones()
        durations = rng.integers(cfg.min_duration, cfg.max_duration + 1, size=len(phones))
        frame_phone = np.repeat(phones, durations)
        mcc = self._track(self.mcc_targets[frame_phone])
        bap = self._track(self.bap_targets[frame_phone])
        lf0 = self._track(self.lf0_targets[frame_phone][:, None])[:, 0]
        f0 = np.where(self.voiced[frame_phone], np.exp(lf0), 0.0)
        log_f0, vuv = interpolate_f0(f0)
        boundaries = tuple(int(b) for b in np.concatenate([[0], np.cumsum(durations)[:-1]]))
        return Utterance(utt_id=utt_id,
                         linguistic=linguistic_features(phones, durations, cfg.phone_inventory_size),
                         acoustic=AcousticFrames(mcc=mcc, bap=bap, log_f0=log_f0, vuv=vuv),
                         boundaries=boundaries,
                         phones=tuple(phones))


def gen_corpus(config):
    gen = _Generator(config)
    splits = {}
    for split in SPLITS:
        splits[split] = [gen.utterance("{}_{:04d}".format(split, k))
                         for k in range(config.split_size(split))]
    logging.info("Generated corpus: {}".format(
        ", ".join("{} {}".format(len(v), k) for k, v in splits.items())))
    return Corpus(config=config, splits=splits)


def _sha256(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def _stream_arrays(utt):
    ac = utt.acoustic
    return {"lab": utt.linguistic, "mcc": ac.mcc, "bap": ac.bap,
            "lf0": ac.log_f0[:, None], "vuv": ac.vuv[:, None]}


def save_corpus(corpus, directory):
    '''
    Layout: <dir>/manifest.json and <dir>/<split>/<utt_id>.<stream> feature
    files for the streams lab, mcc, bap, lf0, vuv.
    '''
    cfg = corpus.config
    entries = []
    for split in SPLITS:
        os.makedirs(os.path.join(directory, split), exist_ok=True)
        for utt in corpus.splits[split]:
            files = {}
            for stream, array in _stream_arrays(utt).items():
                rel = "{}/{}.{}".format(split, utt.utt_id, stream)
                path = os.path.join(directory, rel)
                write_feature_file(path, array)
                files[stream] = {"path": rel, "sha256": _sha256(path)}
            entries.append({"id": utt.utt_id, "split": split, "frames": utt.n_frames,
                            "boundaries": list(utt.boundaries), "phones": list(utt.phones),
                            "files": files})
    manifest = {"format_version": FORMAT_VERSION,
                "seed": cfg.seed,
                "config": dataclasses.asdict(cfg),
                "streams": {"lab": cfg.linguistic_dim, "mcc": cfg.mcc_dim, "bap": cfg.bap_dim,
                            "lf0": 1, "vuv": 1},
                "utterance_count": len(entries),
                "utterances": entries}
    with open(os.path.join(directory, MANIFEST), "w") as f:
        json.dump(manifest, f, indent=2)
    logging.info("Saved {} utterances to {}".format(len(entries), directory))


def _read_manifest(directory):
    path = os.path.join(directory, MANIFEST)
    try:
        with open(path) as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise CorpusError("{}: manifest not found".format(path))
    except json.JSONDecodeError as err:
        raise CorpusError("{}: corrupt manifest ({})".format(path, err))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CorpusError("{}: unsupported manifest version {!r}".format(
            path, manifest.get("format_version")))
    if manifest.get("utterance_count") != len(manifest.get("utterances", [])):
        raise CorpusError("{}: manifest lists {} utterances but declares {}".format(
            path, len(manifest.get("utterances", [])), manifest.get("utterance_count")))
    return manifest


def _load_utterance(directory, entry, streams):
    arrays = {}
    for stream in STREAM_FILES:
        info = entry["files"][stream]
        path = os.path.join(directory, info["path"])
        try:
            array = read_feature_file(path)
        except (OSError, FeatureFileError) as err:
            raise CorpusError("utterance {}: cannot read {} stream: {}".format(entry["id"], stream, err))
        if _sha256(path) != info["sha256"]:
            raise CorpusError("utterance {}: checksum mismatch in {}".format(entry["id"], info["path"]))
        if array.shape != (entry["frames"], streams[stream]):
            raise CorpusError("utterance {}: {} stream has shape {}, manifest says ({}, {})".format(
                entry["id"], stream, array.shape, entry["frames"], streams[stream]))
        arrays[stream] = array
    try:
        acoustic = AcousticFrames(mcc=arrays["mcc"], bap=arrays["bap"],
                                  log_f0=arrays["lf0"][:, 0], vuv=arrays["vuv"][:, 0])
    except ValueError as err:
        raise CorpusError("utterance {}: {}".format(entry["id"], err))
    return Utterance(utt_id=entry["id"], linguistic=arrays["lab"], acoustic=acoustic,
                     boundaries=tuple(entry["boundaries"]), phones=tuple(entry["phones"]))


def load_corpus(directory):
    manifest = _read_manifest(directory)
    try:
        config = CorpusConfig(**manifest["config"])
    except (TypeError, ValueError) as err:
        raise CorpusError("{}: bad config echo in manifest ({})".format(directory, err))
    splits = {split: [] for split in SPLITS}
    for entry in manifest["utterances"]:
        if entry.get("split") not in splits:
            raise CorpusError("utterance {}: unknown split {!r}".format(entry.get("id"), entry.get("split")))
        splits[entry["split"]].append(_load_utterance(directory, entry, manifest["streams"]))
    return Corpus(config=config, splits=splits)


def prepare_data(corpus, layout=None):
    '''
    Min-max statistics of the linguistic frames and mean-variance statistics
    of the [static, delta, delta-delta] targets, both fit on train only, then
    applied to every split.
    '''
    layout = layout or corpus.config.layout
    input_stats = minmax_fit(np.vstack([u.linguistic for u in corpus.train]))
    packed = {split: [layout.pack_targets(u.acoustic) for u in corpus.splits[split]] for split in SPLITS}
    output_stats = meanvar_fit(np.vstack(packed["train"]))

    def pairs(split):
        return [SequencePair(utt_id=u.utt_id,
                             inputs=minmax_apply(u.linguistic, input_stats),
                             targets=meanvar_apply(y, output_stats),
                             boundaries=u.boundaries)
                for u, y in zip(corpus.splits[split], packed[split])]

    return PreparedData(train=pairs("train"), dev=pairs("dev"), test=pairs("test"),
                        input_stats=input_stats, output_stats=output_stats, layout=layout)
