"""Checkpoint persistence for trained communication schemes.

Single-file format: a magic line, a JSON envelope carrying a checksum and
payload length, then a canonical JSON metadata block (vocabulary, hyper-
parameters, dual state, array index) followed by the raw parameter blob.
The writer is deterministic, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .corpus import Vocabulary
from .decoder import KeywordDecoder
from .encoder import KeywordEncoder

MAGIC = b"kwac-checkpoint v1\n"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class FingerprintError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    fingerprint: str
    hyperparams: dict
    vocab: Vocabulary
    encoder_state: dict[str, np.ndarray]
    decoder_state: dict[str, np.ndarray]
    dual: dict = field(default_factory=dict)
    history_path: str | None = None
    version: int = FORMAT_VERSION

    @classmethod
    def from_models(
        cls,
        encoder: KeywordEncoder,
        decoder: KeywordDecoder,
        vocab: Vocabulary,
        hyperparams: dict,
        dual: dict | None = None,
        fingerprint: str | None = None,
        history_path: str | None = None,
    ) -> "Checkpoint":
        return cls(
            fingerprint=fingerprint or vocab.fingerprint,
            hyperparams=dict(hyperparams),
            vocab=vocab,
            encoder_state=_to_numpy(encoder.state_dict()),
            decoder_state=_to_numpy(decoder.state_dict()),
            dual=dict(dual or {}),
            history_path=history_path,
        )

    def build_models(self) -> tuple[KeywordEncoder, KeywordDecoder]:
        emb = int(self.hyperparams["emb_dim"])
        hidden = int(self.hyperparams["hidden"])
        encoder = KeywordEncoder(len(self.vocab), emb, hidden)
        decoder = KeywordDecoder(len(self.vocab), emb, hidden)
        encoder.load_state_dict({k: torch.tensor(v) for k, v in self.encoder_state.items()})
        decoder.load_state_dict({k: torch.tensor(v) for k, v in self.decoder_state.items()})
        encoder.eval()
        decoder.eval()
        return encoder, decoder


def _to_numpy(state_dict) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy() for k, v in state_dict.items()}


def _pack_arrays(prefix: str, arrays: dict[str, np.ndarray], index: list, blob: bytearray):
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        raw = arr.tobytes()
        index.append(
            {
                "name": f"{prefix}.{name}",
                "shape": list(arr.shape),
                "dtype": arr.dtype.str,
                "offset": len(blob),
                "nbytes": len(raw),
            }
        )
        blob.extend(raw)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    index: list[dict] = []
    blob = bytearray()
    _pack_arrays("encoder", ckpt.encoder_state, index, blob)
    _pack_arrays("decoder", ckpt.decoder_state, index, blob)
    meta = {
        "version": ckpt.version,
        "fingerprint": ckpt.fingerprint,
        "hyperparams": ckpt.hyperparams,
        "dual": ckpt.dual,
        "history_path": ckpt.history_path,
        "vocab": ckpt.vocab.serialize(),
        "arrays": index,
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = meta_bytes + b"\x00" + bytes(blob)
    envelope = json.dumps(
        {"checksum": hashlib.sha256(payload).hexdigest(), "payload_len": len(payload)},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    Path(path).write_bytes(MAGIC + envelope + b"\n" + payload)


def load_checkpoint(path, expect_fingerprint: str | None = None, force: bool = False) -> Checkpoint:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise VersionError(f"{path}: not a recognized checkpoint (bad magic)")
    rest = data[len(MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise ChecksumError(f"{path}: truncated envelope")
    envelope = json.loads(rest[:nl])
    payload = rest[nl + 1:]
    if len(payload) != envelope["payload_len"]:
        raise ChecksumError(
            f"{path}: payload length {len(payload)} != declared {envelope['payload_len']}"
        )
    if hashlib.sha256(payload).hexdigest() != envelope["checksum"]:
        raise ChecksumError(f"{path}: checksum mismatch")
    sep = payload.find(b"\x00")
    meta = json.loads(payload[:sep])
    if meta["version"] != FORMAT_VERSION:
        raise VersionError(f"{path}: format version {meta['version']} != {FORMAT_VERSION}")
    if expect_fingerprint is not None and meta["fingerprint"] != expect_fingerprint and not force:
        raise FingerprintError(
            f"{path}: checkpoint fingerprint {meta['fingerprint']} does not match "
            f"expected {expect_fingerprint}"
        )
    blob = payload[sep + 1:]
    encoder_state: dict[str, np.ndarray] = {}
    decoder_state: dict[str, np.ndarray] = {}
    for entry in meta["arrays"]:
        raw = blob[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
        prefix, name = entry["name"].split(".", 1)
        (encoder_state if prefix == "encoder" else decoder_state)[name] = arr
    return Checkpoint(
        fingerprint=meta["fingerprint"],
        hyperparams=meta["hyperparams"],
        vocab=Vocabulary.deserialize(meta["vocab"]),
        encoder_state=encoder_state,
        decoder_state=decoder_state,
        dual=meta["dual"],
        history_path=meta["history_path"],
        version=meta["version"],
    )
