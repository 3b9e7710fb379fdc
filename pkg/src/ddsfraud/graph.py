"""Static bipartite transaction graph with snapshot indexing.

Order vertices carry (event_time, snapshot, features, label); entity
vertices are identity keys.  Edges are stored once, as order -> entity
adjacency, with undirected semantics.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .records import EntityKey, EntityType, TransactionRecord

_MAGIC = b"DDSG"
_FORMAT_VERSION = 1


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class SnapshotIndex:
    """Maps event times onto integer day-style snapshot buckets 0..n_snapshots."""

    origin_time: int
    duration: int = 86400
    n_snapshots: int = 0

    def __post_init__(self):
        if self.duration <= 0:
            raise GraphError("snapshot duration must be > 0")


def snapshot_of(event_time: int, idx: SnapshotIndex) -> int:
    if event_time < idx.origin_time:
        raise GraphError(f"event_time {event_time} predates origin {idx.origin_time}")
    return (event_time - idx.origin_time) // idx.duration


def snapshot_index_for(records: Sequence[TransactionRecord], duration: int = 86400) -> SnapshotIndex:
    """Derive origin and snapshot count from the data itself."""
    if not records:
        return SnapshotIndex(0, duration, 0)
    times = [r.event_time for r in records]
    origin = min(times)
    n = (max(times) - origin) // duration
    return SnapshotIndex(origin, duration, n)


@dataclass
class StaticGraph:
    """Bipartite order/entity graph; immutable once built."""

    idx: SnapshotIndex
    order_ids: list[str]
    order_times: np.ndarray          # (n_orders,) int64 epoch seconds
    order_snapshots: np.ndarray      # (n_orders,) int64
    features: np.ndarray             # (n_orders, dim) float64
    labels: np.ndarray               # (n_orders,) int8, -1 for unlabeled
    entity_keys: list[EntityKey]
    # adjacency: per order, sorted array of entity indices
    order_entities: list[np.ndarray] = field(default_factory=list)
    entity_orders: list[np.ndarray] = field(default_factory=list)

    @property
    def n_orders(self) -> int:
        return len(self.order_ids)

    @property
    def n_entities(self) -> int:
        return len(self.entity_keys)

    @property
    def n_vertices(self) -> int:
        return self.n_orders + self.n_entities

    @property
    def n_edges(self) -> int:
        return sum(len(a) for a in self.order_entities)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def is_order_vertex(self, v: int) -> bool:
        """Vertices are numbered orders first, then entities."""
        return v < self.n_orders

    def entity_vertex(self, entity_index: int) -> int:
        return self.n_orders + entity_index

    def neighbors(self, v: int) -> np.ndarray:
        """Unified-vertex-id neighborhood (orders 0..n_orders-1, then entities)."""
        if v < self.n_orders:
            return self.order_entities[v] + self.n_orders
        return self.entity_orders[v - self.n_orders]


def build_static_graph(records: Sequence[TransactionRecord], idx: Optional[SnapshotIndex] = None) -> StaticGraph:
    """One order vertex per record, one entity vertex per distinct key.

    Duplicate order ids are fatal: the graph would silently double-count
    that order's linkages.
    """
    if idx is None:
        idx = snapshot_index_for(records)
    seen: set[str] = set()
    for rec in records:
        if rec.order_id in seen:
            raise GraphError(f"duplicate order_id {rec.order_id!r}")
        seen.add(rec.order_id)

    dim = len(records[0].features) if records else 0
    entity_index: dict[EntityKey, int] = {}
    entity_keys: list[EntityKey] = []
    order_entities: list[np.ndarray] = []
    order_ids, order_times, order_snaps, labels = [], [], [], []
    feats = np.zeros((len(records), dim))
    for i, rec in enumerate(records):
        if len(rec.features) != dim:
            raise GraphError(f"order {rec.order_id!r}: feature length {len(rec.features)} != {dim}")
        order_ids.append(rec.order_id)
        order_times.append(rec.event_time)
        order_snaps.append(snapshot_of(rec.event_time, idx))
        feats[i] = rec.features
        labels.append(-1 if rec.label is None else rec.label)
        eids = []
        for key in rec.entity_keys():
            j = entity_index.get(key)
            if j is None:
                j = entity_index[key] = len(entity_keys)
                entity_keys.append(key)
            eids.append(j)
        order_entities.append(np.array(sorted(set(eids)), dtype=np.int64))

    entity_orders: list[list[int]] = [[] for _ in entity_keys]
    for i, eids in enumerate(order_entities):
        for j in eids:
            entity_orders[j].append(i)

    return StaticGraph(
        idx=idx,
        order_ids=order_ids,
        order_times=np.array(order_times, dtype=np.int64),
        order_snapshots=np.array(order_snaps, dtype=np.int64),
        features=feats,
        labels=np.array(labels, dtype=np.int8),
        entity_keys=entity_keys,
        order_entities=order_entities,
        entity_orders=[np.array(a, dtype=np.int64) for a in entity_orders],
    )


_ETYPE_CODE = {e: i for i, e in enumerate(EntityType)}
_ETYPE_FROM_CODE = {i: e for i, e in enumerate(EntityType)}


def save_static_graph(g: StaticGraph, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<H", _FORMAT_VERSION))
        fh.write(struct.pack("<qqq", g.idx.origin_time, g.idx.duration, g.idx.n_snapshots))
        fh.write(struct.pack("<QQQ", g.n_orders, g.n_entities, g.feature_dim))
        for i in range(g.n_orders):
            oid = g.order_ids[i].encode("utf-8")
            fh.write(struct.pack("<H", len(oid)))
            fh.write(oid)
            fh.write(struct.pack("<qb", int(g.order_times[i]), int(g.labels[i])))
            fh.write(g.features[i].astype("<f8").tobytes())
        for key in g.entity_keys:
            value = key.value.encode("utf-8")
            fh.write(struct.pack("<BH", _ETYPE_CODE[key.entity_type], len(value)))
            fh.write(value)
        for adj in g.order_entities:
            fh.write(struct.pack("<I", len(adj)))
            fh.write(adj.astype("<i8").tobytes())


def load_static_graph(path: str | Path) -> StaticGraph:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise GraphError(f"bad magic {magic!r}, expected {_MAGIC!r}")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != _FORMAT_VERSION:
            raise GraphError(f"unsupported static graph format version {version}")
        origin, duration, n_snaps = struct.unpack("<qqq", fh.read(24))
        n_orders, n_entities, dim = struct.unpack("<QQQ", fh.read(24))
        idx = SnapshotIndex(origin, duration, n_snaps)
        order_ids, order_times, labels = [], [], []
        feats = np.zeros((n_orders, dim))
        for i in range(n_orders):
            (ln,) = struct.unpack("<H", fh.read(2))
            order_ids.append(fh.read(ln).decode("utf-8"))
            t, lab = struct.unpack("<qb", fh.read(9))
            order_times.append(t)
            labels.append(lab)
            feats[i] = np.frombuffer(fh.read(8 * dim), dtype="<f8")
        entity_keys = []
        for _ in range(n_entities):
            code, ln = struct.unpack("<BH", fh.read(3))
            entity_keys.append(EntityKey(_ETYPE_FROM_CODE[code], fh.read(ln).decode("utf-8")))
        order_entities = []
        for _ in range(n_orders):
            (deg,) = struct.unpack("<I", fh.read(4))
            order_entities.append(np.frombuffer(fh.read(8 * deg), dtype="<i8").astype(np.int64))
    entity_orders: list[list[int]] = [[] for _ in entity_keys]
    for i, eids in enumerate(order_entities):
        for j in eids:
            entity_orders[j].append(i)
    order_times = np.array(order_times, dtype=np.int64)
    return StaticGraph(
        idx=idx,
        order_ids=order_ids,
        order_times=order_times,
        order_snapshots=np.array([snapshot_of(int(t), idx) for t in order_times], dtype=np.int64),
        features=feats,
        labels=np.array(labels, dtype=np.int8),
        entity_keys=entity_keys,
        order_entities=order_entities,
        entity_orders=[np.array(a, dtype=np.int64) for a in entity_orders],
    )
