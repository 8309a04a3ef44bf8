"""Binary checkpoint container: magic, version, a JSON manifest mapping
parameter names to shapes (plus vocabulary and model config), then raw
little-endian float64 payloads in manifest order.  Round-trips are
byte-exact."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .corpus import DataError
from .encoder import Vocabulary
from .window import Model, ModelConfig

MAGIC = b"LSACHKPT"
VERSION = 1


def checkpoint_bytes(model: Model) -> bytes:
    params = model.named_parameters()
    config = asdict(model.config)
    if config["frozen_eta"] is not None:
        config["frozen_eta"] = list(config["frozen_eta"])
    manifest = {
        "version": VERSION,
        "params": [{"name": n, "shape": list(t.shape)} for n, t in params.items()],
        "vocab": model.vocab.id_to_token,
        "config": config,
    }
    manifest_bytes = json.dumps(
        manifest, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(t.values, dtype="<f8").tobytes() for t in params.values()
    )
    header = MAGIC + struct.pack("<I", VERSION) + struct.pack("<Q", len(manifest_bytes))
    return header + manifest_bytes + payload


def save_checkpoint(model: Model, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint(path) -> Model:
    blob = Path(path).read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    offset = len(MAGIC)
    (version,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (manifest_len,) = struct.unpack_from("<Q", blob, offset)
    offset += 8
    try:
        manifest = json.loads(blob[offset : offset + manifest_len].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise DataError(f"{path}: corrupt checkpoint manifest: {e}")
    offset += manifest_len

    config = dict(manifest["config"])
    if config.get("frozen_eta") is not None:
        config["frozen_eta"] = tuple(float(x) for x in config["frozen_eta"])
    model = Model(
        ModelConfig(**config),
        Vocabulary(list(manifest["vocab"])),
        np.random.Generator(np.random.PCG64(0)),
    )
    params = model.named_parameters()
    listed = [entry["name"] for entry in manifest["params"]]
    if listed != list(params):
        raise DataError(f"{path}: checkpoint parameters do not match the model")
    for entry in manifest["params"]:
        t = params[entry["name"]]
        shape = tuple(entry["shape"])
        if shape != t.shape:
            raise DataError(
                f"{path}: shape {shape} for {entry['name']} does not match {t.shape}"
            )
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(blob):
            raise DataError(f"{path}: truncated checkpoint payload")
        t.values[...] = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape)
        offset = end
    if offset != len(blob):
        raise DataError(f"{path}: trailing bytes after checkpoint payload")
    return model
