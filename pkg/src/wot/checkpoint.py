"""Binary checkpoint format.

Layout (all integers little-endian):

    bytes 0..3    magic b"WOTC"
    bytes 4..7    format version, uint32
    bytes 8..11   header length in bytes, uint32
    header        UTF-8 JSON: config, vocab (token list in id order),
                  vocab_hash (sha256 of the vocab JSON), target
                  standardization stats per regression family, training
                  history, and the tensor manifest
                  [{name, shape, offset, dtype}] with offsets relative to
                  the payload start
    payload       raw little-endian float32 tensors in manifest order

Parameters are float64 in memory and serialize at float32; loading restores
float64 values of the stored float32s, so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from wot.config import TrainConfig

MAGIC = b"WOTC"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """The file is not a readable checkpoint of a supported version."""


@dataclass
class Checkpoint:
    """Everything needed to rebuild a model and interpret its outputs."""

    config: TrainConfig
    vocab: list[str]
    params: dict[str, np.ndarray]
    manifest: list[str]
    standardization: dict[str, dict] = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)
    format_version: int = FORMAT_VERSION

    def vocab_hash(self) -> str:
        blob = json.dumps(self.vocab, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def n_params(self) -> int:
        return sum(self.params[n].size for n in self.manifest)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    entries = []
    offset = 0
    payloads = []
    for name in ckpt.manifest:
        arr = np.asarray(ckpt.params[name], dtype=np.float64)
        raw = arr.astype("<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape),
                        "offset": offset, "dtype": "float32"})
        payloads.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config.to_dict(),
        "vocab": ckpt.vocab,
        "vocab_hash": ckpt.vocab_hash(),
        "standardization": ckpt.standardization,
        "history": ckpt.history,
        "manifest": entries,
    }
    blob = json.dumps(header, ensure_ascii=False, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for raw in payloads:
            fh.write(raw)


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            head = fh.read(12)
            if len(head) < 12 or head[:4] != MAGIC:
                raise CheckpointError(f"not a WOTC checkpoint: {path}")
            version, hlen = struct.unpack("<II", head[4:12])
            if version != FORMAT_VERSION:
                raise CheckpointError(
                    f"unsupported checkpoint version {version} "
                    f"(expected {FORMAT_VERSION}): {path}")
            blob = fh.read(hlen)
            if len(blob) < hlen:
                raise CheckpointError(f"truncated checkpoint header: {path}")
            header = json.loads(blob.decode("utf-8"))
            payload = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc

    params = {}
    manifest = []
    for entry in header["manifest"]:
        name, shape, off = entry["name"], tuple(entry["shape"]), entry["offset"]
        nbytes = int(np.prod(shape)) * 4
        raw = payload[off:off + nbytes]
        if len(raw) < nbytes:
            raise CheckpointError(
                f"truncated checkpoint payload at tensor {name!r}: {path}")
        arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
        params[name] = arr.astype(np.float64)
        manifest.append(name)
    config = TrainConfig.from_dict(header["config"])
    ckpt = Checkpoint(config=config, vocab=list(header["vocab"]),
                      params=params, manifest=manifest,
                      standardization=header.get("standardization", {}),
                      history=header.get("history", []),
                      format_version=version)
    if header.get("vocab_hash") != ckpt.vocab_hash():
        raise CheckpointError(f"vocab hash mismatch in checkpoint: {path}")
    return ckpt
