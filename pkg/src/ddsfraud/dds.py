"""Directed dynamic snapshot (DDS) expansion of a partition's subgraph.

Every order spawns a labeled effective copy and an unlabeled shadow copy
at its snapshot.  Entities materialize one vertex per *active* snapshot
(a snapshot where some in-partition order links them).  Edges only ever
point forward in time, and the single edge kind allowed to reach an
effective order comes from a strictly earlier snapshot, so a scored
order can never see information from its own snapshot or later.

Edge kinds:
  shadow <-> entity        same snapshot, both directions
  entity -> entity         historical linkage within a bounded window,
                           plus a self-loop at every active snapshot
  entity -> effective order  from the entity's latest active snapshot
                             strictly before the order's snapshot
"""
from __future__ import annotations

import struct
from bisect import bisect_left
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .graph import SnapshotIndex, StaticGraph
from .records import EntityKey

_MAGIC = b"DDST"
_FORMAT_VERSION = 1

SHADOW_TO_ENTITY = "shadow_to_entity"
ENTITY_TO_SHADOW = "entity_to_shadow"
ENTITY_TO_ENTITY = "entity_to_entity"
EFFECTIVE_TO_ORDER = "effective_entity_to_order"
EDGE_KINDS = (SHADOW_TO_ENTITY, ENTITY_TO_SHADOW, ENTITY_TO_ENTITY, EFFECTIVE_TO_ORDER)


class DdsError(ValueError):
    pass


@dataclass
class DdsGraph:
    """Snapshot-expanded graph for one partition; immutable once built.

    Local vertex spaces: orders 0..n_orders-1 (each standing for an
    effective/shadow pair), entity snapshots 0..n_entity_snapshots-1.
    """

    history_window: Optional[int]
    order_base: np.ndarray       # static order index per local order
    order_t: np.ndarray          # snapshot per local order
    features: np.ndarray         # (n_orders, dim) raw order features
    labels: np.ndarray           # int8, -1 unlabeled; only effective orders carry labels
    entity_base: np.ndarray      # static entity index per entity snapshot
    entity_t: np.ndarray         # snapshot per entity snapshot
    # edges as (src, dst) index arrays in the kind's local spaces
    edges: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    # per static entity index present here: sorted active snapshots
    entity_active: dict[int, list[int]] = field(default_factory=dict)
    entity_snap_id: dict[tuple[int, int], int] = field(default_factory=dict)

    @property
    def n_orders(self) -> int:
        return len(self.order_base)

    @property
    def n_entity_snapshots(self) -> int:
        return len(self.entity_base)

    @property
    def n_vertices(self) -> int:
        # effective + shadow + entity snapshots
        return 2 * self.n_orders + self.n_entity_snapshots

    @property
    def n_edges(self) -> int:
        return sum(len(s) for s, _ in self.edges.values())

    def edge_count(self, kind: str) -> int:
        return len(self.edges[kind][0])


def latest_active_before(active: list[int], t: int) -> Optional[int]:
    """Latest snapshot in the sorted activity list strictly before t."""
    i = bisect_left(active, t)
    return active[i - 1] if i > 0 else None


def effective_entity_of(dds: DdsGraph, entity: EntityKey | int, t: int,
                        g: Optional[StaticGraph] = None) -> Optional[int]:
    """Entity-snapshot vertex acting as the effective entity for an order
    at snapshot t, or None for a cold entity.  Accepts a static entity
    index, or an EntityKey when the static graph is supplied."""
    if isinstance(entity, EntityKey):
        if g is None:
            raise DdsError("EntityKey lookup needs the static graph")
        try:
            base = g.entity_keys.index(entity)
        except ValueError:
            return None
    else:
        base = int(entity)
    active = dds.entity_active.get(base)
    if not active:
        return None
    t_prev = latest_active_before(active, t)
    if t_prev is None:
        return None
    return dds.entity_snap_id[(base, t_prev)]


def build_dds(g: StaticGraph, part_vertices: Iterable[int], idx: SnapshotIndex,
              history_window: Optional[int] = 8, all_pairs: bool = False) -> DdsGraph:
    """Expand the induced subgraph of `part_vertices` (unified vertex ids)
    into a DDS graph.

    `history_window` bounds entity->entity linkage age in snapshots; None
    means unbounded.  By default historical edges chain consecutive
    active snapshots; `all_pairs` links every in-window pair instead.
    """
    if history_window is not None and history_window < 1:
        raise DdsError("history_window must be >= 1 (or None for unbounded)")
    part = set(int(v) for v in part_vertices)
    order_base = sorted(v for v in part if v < g.n_orders)
    entity_in_part = {v - g.n_orders for v in part if v >= g.n_orders}

    order_t = np.array([int(g.order_snapshots[o]) for o in order_base], dtype=np.int64)
    order_local = {o: i for i, o in enumerate(order_base)}

    # (order local, entity base, t) for every internal order-entity edge
    links: list[tuple[int, int, int]] = []
    active_sets: dict[int, set[int]] = {}
    for o, i in order_local.items():
        t = int(order_t[i])
        for e in g.order_entities[o]:
            e = int(e)
            if e in entity_in_part:
                links.append((i, e, t))
                active_sets.setdefault(e, set()).add(t)

    entity_active = {e: sorted(ts) for e, ts in sorted(active_sets.items())}
    entity_base_list: list[int] = []
    entity_t_list: list[int] = []
    entity_snap_id: dict[tuple[int, int], int] = {}
    for e, ts in entity_active.items():
        for t in ts:
            entity_snap_id[(e, t)] = len(entity_base_list)
            entity_base_list.append(e)
            entity_t_list.append(t)

    s2e_src, s2e_dst = [], []
    eff_src, eff_dst = [], []
    for i, e, t in links:
        es = entity_snap_id[(e, t)]
        s2e_src.append(i)
        s2e_dst.append(es)
        t_prev = latest_active_before(entity_active[e], t)
        if t_prev is not None:
            eff_src.append(entity_snap_id[(e, t_prev)])
            eff_dst.append(i)

    e2e_src, e2e_dst = [], []
    for e, ts in entity_active.items():
        for j, t in enumerate(ts):
            cur = entity_snap_id[(e, t)]
            e2e_src.append(cur)
            e2e_dst.append(cur)   # self-loop
            if all_pairs:
                for t_prev in ts[:j]:
                    if history_window is None or t - t_prev <= history_window:
                        e2e_src.append(entity_snap_id[(e, t_prev)])
                        e2e_dst.append(cur)
            elif j > 0:
                t_prev = ts[j - 1]
                if history_window is None or t - t_prev <= history_window:
                    e2e_src.append(entity_snap_id[(e, t_prev)])
                    e2e_dst.append(cur)

    def arr(x):
        return np.array(x, dtype=np.int64)

    return DdsGraph(
        history_window=history_window,
        order_base=arr(order_base),
        order_t=order_t,
        features=g.features[order_base] if order_base else np.zeros((0, g.feature_dim)),
        labels=g.labels[order_base] if order_base else np.zeros(0, dtype=np.int8),
        entity_base=arr(entity_base_list),
        entity_t=arr(entity_t_list),
        edges={
            SHADOW_TO_ENTITY: (arr(s2e_src), arr(s2e_dst)),
            ENTITY_TO_SHADOW: (arr(s2e_dst), arr(s2e_src)),
            ENTITY_TO_ENTITY: (arr(e2e_src), arr(e2e_dst)),
            EFFECTIVE_TO_ORDER: (arr(eff_src), arr(eff_dst)),
        },
        entity_active=entity_active,
        entity_snap_id=entity_snap_id,
    )


@dataclass
class AuditReport:
    ok: bool
    violations: list[tuple[int, int]]   # (order local id, offending global vertex id)
    n_checked: int = 0


def _global_ids(dds: DdsGraph):
    """Global vertex numbering: effective orders, then shadows, then
    entity snapshots.  Returns (snapshot per global id, reverse adjacency)."""
    m, k = dds.n_orders, dds.n_entity_snapshots
    snap = np.concatenate([dds.order_t, dds.order_t, dds.entity_t]) if m + k else np.zeros(0, dtype=np.int64)
    rev: list[list[int]] = [[] for _ in range(2 * m + k)]
    offsets = {
        SHADOW_TO_ENTITY: (m, 2 * m),
        ENTITY_TO_SHADOW: (2 * m, m),
        ENTITY_TO_ENTITY: (2 * m, 2 * m),
        EFFECTIVE_TO_ORDER: (2 * m, 0),
    }
    for kind, (src, dst) in dds.edges.items():
        off_s, off_d = offsets[kind]
        for s, d in zip(src, dst):
            rev[int(d) + off_d].append(int(s) + off_s)
    return snap, rev


def audit_no_future(dds: DdsGraph) -> AuditReport:
    """Reverse-reachability check: every message-passing ancestor of a
    labeled effective order must sit at a strictly earlier snapshot."""
    snap, rev = _global_ids(dds)
    violations: list[tuple[int, int]] = []
    n_checked = 0
    for i in range(dds.n_orders):
        if dds.labels[i] < 0:
            continue
        n_checked += 1
        t = int(dds.order_t[i])
        seen = {i}
        stack = list(rev[i])
        while stack:
            v = stack.pop()
            if v in seen:
                continue
            seen.add(v)
            if snap[v] >= t:
                violations.append((i, v))
                continue
            stack.extend(rev[v])
    return AuditReport(ok=not violations, violations=violations, n_checked=n_checked)


def export_text(dds: DdsGraph) -> str:
    """Stable text form, one edge per line: kind src_t src_base dst_t dst_base."""
    lines = []
    for kind in EDGE_KINDS:
        src, dst = dds.edges[kind]
        for s, d in zip(src, dst):
            if kind == SHADOW_TO_ENTITY:
                st, sb = dds.order_t[s], dds.order_base[s]
                dt, db = dds.entity_t[d], dds.entity_base[d]
            elif kind == ENTITY_TO_SHADOW:
                st, sb = dds.entity_t[s], dds.entity_base[s]
                dt, db = dds.order_t[d], dds.order_base[d]
            elif kind == ENTITY_TO_ENTITY:
                st, sb = dds.entity_t[s], dds.entity_base[s]
                dt, db = dds.entity_t[d], dds.entity_base[d]
            else:
                st, sb = dds.entity_t[s], dds.entity_base[s]
                dt, db = dds.order_t[d], dds.order_base[d]
            lines.append(f"{kind} {st} {sb} {dt} {db}")
    return "\n".join(sorted(lines)) + "\n"


def save_dds(dds: DdsGraph, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<H", _FORMAT_VERSION))
        h = -1 if dds.history_window is None else dds.history_window
        fh.write(struct.pack("<qQQQ", h, dds.n_orders, dds.n_entity_snapshots,
                             dds.features.shape[1]))
        fh.write(dds.order_base.astype("<i8").tobytes())
        fh.write(dds.order_t.astype("<i8").tobytes())
        fh.write(dds.features.astype("<f8").tobytes())
        fh.write(dds.labels.astype("<b").tobytes())
        fh.write(dds.entity_base.astype("<i8").tobytes())
        fh.write(dds.entity_t.astype("<i8").tobytes())
        for kind in EDGE_KINDS:
            src, dst = dds.edges[kind]
            fh.write(struct.pack("<Q", len(src)))
            fh.write(src.astype("<i8").tobytes())
            fh.write(dst.astype("<i8").tobytes())


def load_dds(path: str | Path) -> DdsGraph:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise DdsError("bad DDS file magic")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != _FORMAT_VERSION:
            raise DdsError(f"unsupported DDS format version {version}")
        h, m, k, dim = struct.unpack("<qQQQ", fh.read(32))

        def read_i8(n):
            return np.frombuffer(fh.read(8 * n), dtype="<i8").astype(np.int64)

        order_base = read_i8(m)
        order_t = read_i8(m)
        features = np.frombuffer(fh.read(8 * m * dim), dtype="<f8").reshape(m, dim).copy()
        labels = np.frombuffer(fh.read(m), dtype="<b").astype(np.int8)
        entity_base = read_i8(k)
        entity_t = read_i8(k)
        edges = {}
        for kind in EDGE_KINDS:
            (n_e,) = struct.unpack("<Q", fh.read(8))
            edges[kind] = (read_i8(n_e), read_i8(n_e))

    entity_active: dict[int, list[int]] = {}
    entity_snap_id: dict[tuple[int, int], int] = {}
    for i, (e, t) in enumerate(zip(entity_base, entity_t)):
        entity_active.setdefault(int(e), []).append(int(t))
        entity_snap_id[(int(e), int(t))] = i
    for ts in entity_active.values():
        ts.sort()
    return DdsGraph(
        history_window=None if h < 0 else int(h),
        order_base=order_base, order_t=order_t, features=features, labels=labels,
        entity_base=entity_base, entity_t=entity_t, edges=edges,
        entity_active=entity_active, entity_snap_id=entity_snap_id,
    )
