"""Binary checkpoint format: round trips, error cases, manifest integrity."""

import numpy as np
import pytest

from conftest import tiny_config
from wot.checkpoint import (
    Checkpoint,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from wot.model import WotModel


def _checkpoint(seed=0):
    cfg = tiny_config()
    model = WotModel(cfg, vocab_size=8, rng=np.random.default_rng(seed))
    vocab = ["<pad>", "<unk>", "a", "b", "c", "d", "e", "f"]
    return Checkpoint(
        config=cfg, vocab=vocab,
        params={n: model.params[n].data.copy() for n in model.manifest()},
        manifest=model.manifest(),
        standardization={"algebra": {"mean": 12.5, "std": 3.25}},
        history=[{"epoch": 1, "train_loss": 0.75}],
    )


def test_round_trip_preserves_everything(tmp_path):
    ckpt = _checkpoint()
    path = tmp_path / "m.wotc"
    save_checkpoint(ckpt, path)
    back = load_checkpoint(path)
    assert back.manifest == ckpt.manifest
    assert back.vocab == ckpt.vocab
    assert back.config == ckpt.config
    assert back.standardization == ckpt.standardization
    assert back.history == ckpt.history
    for name in ckpt.manifest:
        np.testing.assert_allclose(back.params[name], ckpt.params[name],
                                   atol=1e-6)
        assert back.params[name].dtype == np.float64


def test_save_load_save_is_byte_identical(tmp_path):
    ckpt = _checkpoint()
    p1, p2 = tmp_path / "a.wotc", tmp_path / "b.wotc"
    save_checkpoint(ckpt, p1)
    save_checkpoint(load_checkpoint(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_magic_bytes(tmp_path):
    path = tmp_path / "m.wotc"
    save_checkpoint(_checkpoint(), path)
    assert path.read_bytes()[:4] == b"WOTC"


def test_rejects_non_checkpoint_file(tmp_path):
    path = tmp_path / "bogus.wotc"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(CheckpointError, match="bogus.wotc"):
        load_checkpoint(path)


def test_rejects_wrong_version(tmp_path):
    path = tmp_path / "m.wotc"
    save_checkpoint(_checkpoint(), path)
    raw = bytearray(path.read_bytes())
    raw[4] = 99
    bad = tmp_path / "old.wotc"
    bad.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version 99"):
        load_checkpoint(bad)


def test_rejects_truncated_payload(tmp_path):
    path = tmp_path / "m.wotc"
    save_checkpoint(_checkpoint(), path)
    raw = path.read_bytes()
    cut = tmp_path / "cut.wotc"
    cut.write_bytes(raw[: len(raw) - 64])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(cut)


def test_detects_vocab_tampering(tmp_path):
    path = tmp_path / "m.wotc"
    save_checkpoint(_checkpoint(), path)
    raw = path.read_bytes()
    # same-length swap inside the header keeps JSON valid, breaks the hash
    assert b'"a","b"' in raw
    tampered = tmp_path / "tampered.wotc"
    tampered.write_bytes(raw.replace(b'"a","b"', b'"a","z"', 1))
    with pytest.raises(CheckpointError, match="hash"):
        load_checkpoint(tampered)


def test_model_loads_checkpoint_arrays():
    ckpt = _checkpoint(seed=3)
    model = WotModel(ckpt.config, vocab_size=len(ckpt.vocab),
                     rng=np.random.default_rng(99))
    model.load_arrays({k: v for k, v in ckpt.params.items()})
    for name in model.manifest():
        np.testing.assert_array_equal(model.params[name].data,
                                      ckpt.params[name])


def test_model_rejects_incomplete_params():
    ckpt = _checkpoint()
    model = WotModel(ckpt.config, vocab_size=len(ckpt.vocab),
                     rng=np.random.default_rng(0))
    partial = dict(ckpt.params)
    del partial["agg.W"]
    with pytest.raises(KeyError, match="agg.W"):
        model.load_arrays(partial)


def test_missing_file_error():
    with pytest.raises(CheckpointError, match="no/such/file"):
        load_checkpoint("no/such/file.wotc")


def test_manifest_matches_model_manifest():
    ckpt = _checkpoint()
    model = WotModel(ckpt.config, vocab_size=len(ckpt.vocab),
                     rng=np.random.default_rng(0))
    assert ckpt.manifest == model.manifest()
    assert set(ckpt.params) == set(ckpt.manifest)
