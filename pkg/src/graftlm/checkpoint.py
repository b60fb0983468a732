"""Binary checkpoint container.

Layout: magic, format version, header length, then a UTF-8 JSON header,
then raw little-endian float64 arrays. The header maps section names
("foundation", "adapter", "lora", ...) to a config dict plus a named-array
manifest with shapes and byte offsets into the data region. Loaders
validate array shapes against the stored config before use.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import SchemaError

MAGIC = b"GLMC"
FORMAT_VERSION = 1


def save_checkpoint(path, sections: dict[str, tuple[dict, dict[str, np.ndarray]]]) -> None:
    """sections: name -> (config dict, name -> array)."""
    manifest: dict = {"format_version": FORMAT_VERSION, "sections": {}}
    blobs: list[bytes] = []
    offset = 0
    for section, (config, arrays) in sections.items():
        entry = {"config": config, "arrays": {}}
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            raw = arr.tobytes()
            entry["arrays"][name] = {
                "shape": list(arr.shape),
                "dtype": "<f8",
                "offset": offset,
                "nbytes": len(raw),
            }
            blobs.append(raw)
            offset += len(raw)
        manifest["sections"][section] = entry
    header = json.dumps(manifest).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> dict[str, tuple[dict, dict[str, np.ndarray]]]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise SchemaError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise SchemaError(f"{path}: unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(header_len).decode("utf-8"))
        data = fh.read()
    out: dict[str, tuple[dict, dict[str, np.ndarray]]] = {}
    for section, entry in manifest["sections"].items():
        arrays: dict[str, np.ndarray] = {}
        for name, meta in entry["arrays"].items():
            start = meta["offset"]
            raw = data[start : start + meta["nbytes"]]
            arr = np.frombuffer(raw, dtype=meta["dtype"]).reshape(meta["shape"]).copy()
            arrays[name] = arr
        out[section] = (entry["config"], arrays)
    return out


def validate_shapes(expected: dict[str, tuple], arrays: dict[str, np.ndarray], section: str) -> None:
    """Every expected array present with the expected shape, nothing extra."""
    missing = sorted(set(expected) - set(arrays))
    extra = sorted(set(arrays) - set(expected))
    if missing or extra:
        raise SchemaError(f"section {section!r}: missing arrays {missing}, unexpected {extra}")
    for name, shape in expected.items():
        got = tuple(arrays[name].shape)
        if got != tuple(shape):
            raise SchemaError(f"section {section!r}: array {name!r} has shape {got}, expected {tuple(shape)}")


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
