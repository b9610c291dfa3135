"""Self-describing parameter checkpoints.

Layout: a magic line, one JSON header line (format version, config, entry
table), then the raw little-endian float64 values of each entry in table
order. Output bytes depend only on names, shapes, values and config.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np

from .numerics import ParamStore

MAGIC = b"ANTICAP-CKPT\n"
VERSION = 1


def params_digest(params: ParamStore, prefix: str = "") -> str:
    h = hashlib.sha256()
    for name in sorted(params.entries):
        if name.startswith(prefix):
            v = params[name]
            h.update(name.encode())
            h.update(repr(v.shape).encode())
            h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return h.hexdigest()


def save_checkpoint(path, stores: dict[str, ParamStore], config: dict) -> None:
    entries, blobs = [], []
    for section in sorted(stores):
        store = stores[section]
        for name in sorted(store.entries):
            p = store.entries[name]
            entries.append(
                {"section": section, "name": name, "shape": list(p.value.shape), "trainable": p.trainable}
            )
            blobs.append(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
    digests = {s: params_digest(stores[s]) for s in sorted(stores)}
    header = {"version": VERSION, "config": config, "digests": digests, "entries": entries}
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> tuple[dict[str, ParamStore], dict]:
    """Returns ``(stores, header)``; raises if a stored section digest does not match."""
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        header = json.loads(fh.readline())
        if header.get("version") != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        stores: dict[str, ParamStore] = {}
        for e in header["entries"]:
            n = int(np.prod(e["shape"], dtype=np.int64))
            raw = fh.read(8 * n)
            if len(raw) != 8 * n:
                raise ValueError(f"{path}: truncated at {e['name']}")
            value = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(e["shape"])
            stores.setdefault(e["section"], ParamStore()).add(e["name"], value, e["trainable"])
    for section, digest in header.get("digests", {}).items():
        if params_digest(stores.get(section, ParamStore())) != digest:
            raise ValueError(f"{path}: section {section!r} digest mismatch")
    return stores, header
