import dataclasses
import json
import os

import numpy as np
import pytest

from dataset.corpus import (MANIFEST, CorpusConfig, CorpusError, gen_corpus, linguistic_features,
                            load_corpus, prepare_data, recover_boundaries, save_corpus)

from helpers import TINY_CORPUS


def test_default_config_sizes():
    cfg = CorpusConfig()
    assert (cfg.n_train, cfg.n_dev, cfg.n_test) == (240, 7, 8)
    assert cfg.linguistic_dim == 65
    assert cfg.layout.output_dim == 52


@pytest.mark.parametrize("kwargs", [
    {"phone_inventory_size": 1},
    {"n_dev": 0},
    {"min_duration": 5, "max_duration": 4},
    {"min_phones": 0},
    {"voiced_fraction": 0.0},
    {"smoothing": 4},
    {"noise_std": -0.1},
])
def test_config_errors(kwargs):
    with pytest.raises(ValueError):
        CorpusConfig(**kwargs)


def test_generation_is_deterministic():
    a, b = gen_corpus(TINY_CORPUS), gen_corpus(TINY_CORPUS)
    for ua, ub in zip(a.train + a.dev + a.test, b.train + b.dev + b.test):
        assert ua.utt_id == ub.utt_id
        assert np.array_equal(ua.linguistic, ub.linguistic)
        assert np.array_equal(ua.acoustic.mcc, ub.acoustic.mcc)
        assert ua.boundaries == ub.boundaries


def phone_segments(utt):
    ends = list(utt.boundaries[1:]) + [utt.n_frames]
    return zip(utt.phones, utt.boundaries, ends)


def test_unsmoothed_noiseless_tracks_are_phone_targets():
    corpus = gen_corpus(dataclasses.replace(TINY_CORPUS, smoothing=1, noise_std=0.0))
    seen = {}
    for utt in corpus.train + corpus.dev + corpus.test:
        for phone, start, end in phone_segments(utt):
            for stream in ("mcc", "bap"):
                rows = getattr(utt.acoustic, stream)[start:end]
                assert np.array_equal(rows, np.broadcast_to(rows[0], rows.shape))
                target = seen.setdefault((phone, stream), rows[0])
                assert np.array_equal(rows[0], target)


def test_smoothing_never_sharpens_transitions():
    smoothed = gen_corpus(dataclasses.replace(TINY_CORPUS, noise_std=0.0))
    raw = gen_corpus(dataclasses.replace(TINY_CORPUS, smoothing=1, noise_std=0.0))
    assert TINY_CORPUS.smoothing > 1
    for us, ur in zip(smoothed.train, raw.train):
        assert us.phones == ur.phones
        step_s = np.abs(np.diff(us.acoustic.mcc, axis=0)).max(axis=0)
        step_r = np.abs(np.diff(ur.acoustic.mcc, axis=0)).max(axis=0)
        assert np.all(step_s <= step_r + 1e-12)


def test_split_sizes_and_shapes(tiny_corpus):
    cfg = tiny_corpus.config
    assert [len(tiny_corpus.train), len(tiny_corpus.dev), len(tiny_corpus.test)] == [6, 2, 2]
    for utt in tiny_corpus.train:
        assert utt.linguistic.shape == (utt.n_frames, cfg.linguistic_dim)
        assert utt.acoustic.mcc.shape == (utt.n_frames, cfg.mcc_dim)
        assert cfg.min_phones <= len(utt.phones) <= cfg.max_phones
        assert len(utt.boundaries) == len(utt.phones)


def test_phone_sequences_are_well_formed(tiny_corpus):
    for utt in tiny_corpus.train:
        assert all(a != b for a, b in zip(utt.phones, utt.phones[1:]))
        assert utt.acoustic.vuv[0] == 1.0
        durations = np.diff(list(utt.boundaries) + [utt.n_frames])
        cfg = tiny_corpus.config
        assert np.all((durations >= cfg.min_duration) & (durations <= cfg.max_duration))


def test_boundaries_are_recoverable_from_linguistic_frames(tiny_corpus):
    P = tiny_corpus.config.phone_inventory_size
    for utt in tiny_corpus.train + tiny_corpus.test:
        assert recover_boundaries(utt.linguistic, P) == utt.boundaries


def test_linguistic_feature_blocks():
    feats = linguistic_features([2, 0], [2, 3], inventory_size=3)
    assert feats.shape == (5, 14)
    assert feats[0, 3] == 1.0  # utterance edge before the first phone
    assert feats[0, 4 + 2] == 1.0 and feats[0, 7 + 0] == 1.0
    assert feats[2, 2] == 1.0 and feats[2, 4 + 0] == 1.0 and feats[2, 7 + 3] == 1.0
    assert feats[:2, 11].tolist() == [0.0, 0.5]
    assert feats[2:, 12].tolist() == pytest.approx([2 / 3, 1 / 3, 0.0])
    assert feats[:, 13].tolist() == [2, 2, 3, 3, 3]


def test_positional_features_reset_at_boundaries(tiny_corpus):
    P = tiny_corpus.config.phone_inventory_size
    utt = tiny_corpus.train[0]
    for b in utt.boundaries:
        assert utt.linguistic[b, 3 * P + 2] == 0.0


def test_save_load_round_trip(tiny_corpus, tmp_path):
    save_corpus(tiny_corpus, tmp_path)
    loaded = load_corpus(tmp_path)
    assert loaded.config == tiny_corpus.config
    for split in ("train", "dev", "test"):
        for a, b in zip(tiny_corpus.splits[split], loaded.splits[split]):
            assert a.utt_id == b.utt_id and a.phones == b.phones and a.boundaries == b.boundaries
            assert np.array_equal(a.linguistic, b.linguistic)
            assert np.array_equal(a.acoustic.log_f0, b.acoustic.log_f0)
            assert np.array_equal(a.acoustic.vuv, b.acoustic.vuv)
    manifest = json.loads((tmp_path / MANIFEST).read_text())
    assert manifest["utterance_count"] == 10
    assert manifest["streams"]["lab"] == tiny_corpus.config.linguistic_dim
    assert loaded.find("dev_0001").utt_id == "dev_0001"
    with pytest.raises(CorpusError):
        loaded.find("nope")


def test_missing_manifest(tmp_path):
    with pytest.raises(CorpusError):
        load_corpus(tmp_path)


def test_corrupt_manifest(tiny_corpus, tmp_path):
    save_corpus(tiny_corpus, tmp_path)
    (tmp_path / MANIFEST).write_text("{not json")
    with pytest.raises(CorpusError):
        load_corpus(tmp_path)


def test_count_mismatch(tiny_corpus, tmp_path):
    save_corpus(tiny_corpus, tmp_path)
    manifest = json.loads((tmp_path / MANIFEST).read_text())
    manifest["utterance_count"] += 1
    (tmp_path / MANIFEST).write_text(json.dumps(manifest))
    with pytest.raises(CorpusError):
        load_corpus(tmp_path)


def test_truncated_file_names_the_utterance(tiny_corpus, tmp_path):
    save_corpus(tiny_corpus, tmp_path)
    path = os.path.join(tmp_path, "train", "train_0002.mcc")
    with open(path, "rb") as f:
        data = f.read()
    with open(path, "wb") as f:
        f.write(data[:-8])
    with pytest.raises(CorpusError, match="train_0002"):
        load_corpus(tmp_path)


def test_checksum_mismatch(tiny_corpus, tmp_path):
    save_corpus(tiny_corpus, tmp_path)
    path = os.path.join(tmp_path, "test", "test_0000.bap")
    with open(path, "r+b") as f:
        f.seek(-1, os.SEEK_END)
        last = f.read(1)
        f.seek(-1, os.SEEK_END)
        f.write(bytes([last[0] ^ 0xFF]))
    with pytest.raises(CorpusError, match="test_0000"):
        load_corpus(tmp_path)


def test_prepare_data_normalises_on_train(tiny_corpus):
    data = prepare_data(tiny_corpus)
    inputs = np.vstack([s.inputs for s in data.train])
    assert inputs.min() >= 0.01 - 1e-12 and inputs.max() <= 0.99 + 1e-12
    targets = np.vstack([s.targets for s in data.train])
    live = ~data.output_stats.flagged
    assert np.allclose(targets[:, live].mean(axis=0), 0.0, atol=1e-10)
    assert np.allclose(targets[:, live].std(axis=0), 1.0)
    assert targets.shape[1] == data.layout.output_dim
    assert [s.utt_id for s in data.test] == [u.utt_id for u in tiny_corpus.test]
    assert data.train[0].boundaries == tiny_corpus.train[0].boundaries
