"""File-backed entity-embedding key-value store.

One store file is one refresh cycle: written to a temp file and atomically
renamed, so a serving process never observes a partial store.  The header
pins the embedding dimension, the producing model's version checksum, and
the snapshot the embeddings were computed as-of; consumers must check the
version before scoring with it.
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .lnn import EntityEmbedding
from .records import EntityKey, EntityType

_MAGIC = b"DDSE"
_FORMAT_VERSION = 1
_ETYPE_CODE = {e: i for i, e in enumerate(EntityType)}
_ETYPE_FROM_CODE = {i: e for i, e in enumerate(EntityType)}


class StoreError(ValueError):
    pass


def store_write(embeddings: Iterable[EntityEmbedding], path: str | Path,
                snapshot: int = -1) -> None:
    """Write a complete store file (atomic replace of any previous one)."""
    embeddings = list(embeddings)
    if not embeddings:
        raise StoreError("refusing to write an empty store")
    dim = len(embeddings[0].vector)
    version = embeddings[0].model_version
    seen: set[EntityKey] = set()
    for emb in embeddings:
        if len(emb.vector) != dim:
            raise StoreError("inconsistent embedding dimensions")
        if emb.model_version != version:
            raise StoreError("mixed model versions in one store")
        if emb.key in seen:
            raise StoreError(f"duplicate entity key {emb.key}")
        seen.add(emb.key)

    path = Path(path)
    embeddings.sort(key=lambda e: (e.key.entity_type.value, e.key.value))
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<H", _FORMAT_VERSION))
            fh.write(struct.pack("<I", dim))
            vb = version.encode()
            fh.write(struct.pack("<H", len(vb)))
            fh.write(vb)
            fh.write(struct.pack("<qQ", snapshot, len(embeddings)))
            for emb in embeddings:
                value = emb.key.value.encode()
                fh.write(struct.pack("<BH", _ETYPE_CODE[emb.key.entity_type], len(value)))
                fh.write(value)
                fh.write(struct.pack("<q", emb.snapshot))
                fh.write(np.asarray(emb.vector, dtype="<f8").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class StoreHandle:
    """Read-only view of a store file, fully indexed in memory."""

    path: Path
    dim: int
    model_version: str
    snapshot: int
    _index: dict[EntityKey, tuple[int, np.ndarray]]

    def get(self, key: EntityKey) -> Optional[np.ndarray]:
        hit = self._index.get(key)
        return hit[1] if hit is not None else None

    def get_embedding(self, key: EntityKey) -> Optional[EntityEmbedding]:
        hit = self._index.get(key)
        if hit is None:
            return None
        snap, vec = hit
        return EntityEmbedding(key=key, vector=vec, snapshot=snap,
                               model_version=self.model_version)

    def __len__(self) -> int:
        return len(self._index)


def store_open(path: str | Path) -> StoreHandle:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise StoreError(f"bad store magic {magic!r}")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != _FORMAT_VERSION:
            raise StoreError(f"unsupported store format version {version}")
        (dim,) = struct.unpack("<I", fh.read(4))
        (n_v,) = struct.unpack("<H", fh.read(2))
        model_version = fh.read(n_v).decode()
        snapshot, count = struct.unpack("<qQ", fh.read(16))
        index: dict[EntityKey, tuple[int, np.ndarray]] = {}
        for _ in range(count):
            code, n_val = struct.unpack("<BH", fh.read(3))
            value = fh.read(n_val).decode()
            (snap,) = struct.unpack("<q", fh.read(8))
            vec = np.frombuffer(fh.read(8 * dim), dtype="<f8").copy()
            if len(vec) != dim:
                raise StoreError("truncated store file")
            index[EntityKey(_ETYPE_FROM_CODE[code], value)] = (snap, vec)
    return StoreHandle(path=path, dim=dim, model_version=model_version,
                       snapshot=snapshot, _index=index)
