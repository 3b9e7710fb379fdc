"""Graph partitioning: power-iteration clustering into coarse communities,
then size-capped recursive bisection with move-based boundary refinement.

The coarse pass groups the bipartite graph into mini-communities; the
refinement pass guarantees every partition fits under a hard size cap so
each one can be trained as a single batch.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import StaticGraph

_MAGIC = b"DDSP"
_FORMAT_VERSION = 1


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class PicConfig:
    target_coarse_size: int = 2000
    max_power_iters: int = 200
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.tol <= 0 or self.max_power_iters < 1 or self.target_coarse_size < 1:
            raise PartitionError("invalid clustering config")


@dataclass(frozen=True)
class RefineConfig:
    size_cap: int = 1024
    n_kl_passes: int = 4

    def __post_init__(self):
        if self.size_cap < 2:
            raise PartitionError("size_cap must be >= 2")


@dataclass
class PartitionAssignment:
    part_of: np.ndarray     # (n_vertices,) int64
    n_parts: int

    def sizes(self) -> np.ndarray:
        return np.bincount(self.part_of, minlength=self.n_parts)

    def members(self, p: int) -> np.ndarray:
        return np.flatnonzero(self.part_of == p)

    def validate(self, n_vertices: int) -> None:
        if len(self.part_of) != n_vertices:
            raise PartitionError("assignment length != vertex count")
        if self.n_parts and (self.sizes() == 0).any():
            raise PartitionError("empty partition")


def _adjacency(g: StaticGraph) -> list[np.ndarray]:
    return [g.neighbors(v) for v in range(g.n_vertices)]


def pic_cluster(g: StaticGraph, cfg: PicConfig) -> PartitionAssignment:
    return pic_cluster_adj(_adjacency(g), cfg)


def pic_cluster_adj(adj: list[np.ndarray], cfg: PicConfig) -> PartitionAssignment:
    """Power iteration of the row-normalized adjacency from a seeded random
    vector, stopped when the step-size acceleration flattens, then 1-D
    k-means on the converged pseudo-eigenvector."""
    n = len(adj)
    if n == 0:
        raise PartitionError("empty graph")
    k = -(-n // cfg.target_coarse_size)   # ceil
    deg = np.array([len(a) for a in adj], dtype=np.float64)
    inv_deg = np.where(deg > 0, 1.0 / np.maximum(deg, 1.0), 0.0)

    rng = np.random.default_rng(cfg.seed)
    v = rng.random(n) + 0.1
    v /= np.abs(v).sum()
    prev_delta = None
    for _ in range(cfg.max_power_iters):
        new = np.zeros(n)
        for i, nbrs in enumerate(adj):
            if len(nbrs):
                new[i] = v[nbrs].sum() * inv_deg[i]
        norm = np.abs(new).sum()
        if norm == 0:
            break
        new /= norm
        delta = np.abs(new - v)
        if prev_delta is not None and np.max(np.abs(delta - prev_delta)) < cfg.tol:
            v = new
            break
        prev_delta = delta
        v = new

    labels = _kmeans_1d(v, k)
    return PartitionAssignment(part_of=labels, n_parts=int(labels.max()) + 1)


def _kmeans_1d(x: np.ndarray, k: int, n_iters: int = 100) -> np.ndarray:
    """Deterministic 1-D k-means: quantile init, ties to the lower center id.
    Empty clusters are dropped and ids renumbered compactly."""
    n = len(x)
    k = min(k, n)
    centers = np.quantile(x, (np.arange(k) + 0.5) / k)
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(n_iters):
        d = np.abs(x[:, None] - centers[None, :])
        new_labels = np.argmin(d, axis=1)   # argmin takes the lowest index on ties
        if (new_labels == labels).all() and _ != 0:
            break
        labels = new_labels
        for c in range(k):
            mask = labels == c
            if mask.any():
                centers[c] = x[mask].mean()
    # renumber in order of first appearance for determinism
    remap: dict[int, int] = {}
    out = np.zeros(n, dtype=np.int64)
    for i, lab in enumerate(labels):
        if lab not in remap:
            remap[int(lab)] = len(remap)
        out[i] = remap[int(lab)]
    return out


def edge_cut(g: StaticGraph, part_of: np.ndarray) -> int:
    return edge_cut_adj(_adjacency(g), part_of)


def edge_cut_adj(adj: list[np.ndarray], part_of: np.ndarray) -> int:
    cut = 0
    for v, nbrs in enumerate(adj):
        for u in nbrs:
            if u > v and part_of[v] != part_of[u]:
                cut += 1
    return cut


def refine_partition(g: StaticGraph, coarse: PartitionAssignment, cfg: RefineConfig) -> PartitionAssignment:
    return refine_partition_adj(_adjacency(g), coarse, cfg)


def refine_partition_adj(adj: list[np.ndarray], coarse: PartitionAssignment,
                         cfg: RefineConfig) -> PartitionAssignment:
    """Recursively bisect every over-cap coarse part (greedy growth plus
    move-based refinement passes that never increase the cut)."""
    coarse.validate(len(adj))
    out = np.full(len(adj), -1, dtype=np.int64)
    next_part = 0
    for p in range(coarse.n_parts):
        members = coarse.members(p)
        for block in _bisect_to_cap(adj, members, cfg):
            out[block] = next_part
            next_part += 1
    return PartitionAssignment(part_of=out, n_parts=next_part)


def _bisect_to_cap(full_adj, vertices: np.ndarray, cfg: RefineConfig) -> list[np.ndarray]:
    if len(vertices) <= cfg.size_cap:
        return [vertices]
    side = _bisect_once(full_adj, vertices, cfg.n_kl_passes)
    left = vertices[~side]
    right = vertices[side]
    return _bisect_to_cap(full_adj, left, cfg) + _bisect_to_cap(full_adj, right, cfg)


def _induced_adjacency(full_adj, vertices: np.ndarray) -> list[np.ndarray]:
    local = {int(v): i for i, v in enumerate(vertices)}
    adj: list[np.ndarray] = []
    for v in vertices:
        nbrs = [local[int(u)] for u in full_adj[int(v)] if int(u) in local]
        adj.append(np.array(sorted(nbrs), dtype=np.int64))
    return adj


def _bisect_once(full_adj, vertices: np.ndarray, n_passes: int) -> np.ndarray:
    """Balanced bisection of the induced subgraph.  Returns a boolean mask
    (True = right side) with right-side size == n // 2."""
    n = len(vertices)
    adj = _induced_adjacency(full_adj, vertices)
    target_left = -(-n // 2)

    # greedy growth: BFS from the lowest local id until the left side is full
    side = np.ones(n, dtype=bool)
    taken = 0
    visited = np.zeros(n, dtype=bool)
    frontier: list[int] = []
    cursor = 0
    while taken < target_left:
        if not frontier:
            while visited[cursor]:
                cursor += 1
            frontier.append(cursor)
            visited[cursor] = True
        v = frontier.pop(0)
        side[v] = False
        taken += 1
        for u in adj[v]:
            if not visited[u]:
                visited[u] = True
                frontier.append(u)

    for _ in range(n_passes):
        moved = _refine_pass(adj, side, target_left)
        if not moved:
            break
    return side


def _cut_of(adj, side) -> int:
    c = 0
    for v, nbrs in enumerate(adj):
        for u in nbrs:
            if u > v and side[u] != side[v]:
                c += 1
    return c


def _refine_pass(adj, side: np.ndarray, target_left: int, max_moves: int = 400) -> bool:
    """One move-based refinement pass: tentatively move best-gain vertices
    (each at most once) under a +/-1 balance band, then roll back to the
    best prefix.  The cut is never allowed to increase."""
    n = len(adj)
    gain = np.zeros(n, dtype=np.int64)
    for v, nbrs in enumerate(adj):
        for u in nbrs:
            gain[v] += 1 if side[u] != side[v] else -1
    locked = np.zeros(n, dtype=bool)
    left_size = int((~side).sum())
    lo, hi = target_left - 1, target_left + 1

    moves: list[int] = []
    cum = 0
    best_cum = 0
    best_prefix = 0
    for _ in range(min(n, max_moves)):
        best_v, best_g = -1, None
        for v in range(n):
            if locked[v]:
                continue
            new_left = left_size + (1 if side[v] else -1)
            if not (lo <= new_left <= hi):
                continue
            if best_g is None or gain[v] > best_g:
                best_v, best_g = v, gain[v]
        if best_v < 0:
            break
        v = best_v
        locked[v] = True
        side[v] = ~side[v]
        left_size += -1 if side[v] else 1
        cum += gain[v]
        gain[v] = -gain[v]
        for u in adj[v]:
            gain[u] += 2 if side[u] != side[v] else -2
        moves.append(v)
        if cum > best_cum:
            best_cum = cum
            best_prefix = len(moves)

    for v in reversed(moves[best_prefix:]):
        side[v] = ~side[v]
    return best_prefix > 0


@dataclass
class CommunityBatch:
    core: np.ndarray    # vertices whose loss/labels belong to this batch
    halo: np.ndarray    # read-only 1-hop entity frontier


def community_batches(g: StaticGraph, parts: PartitionAssignment, seed: int) -> list[CommunityBatch]:
    """One batch per partition: its vertices plus the entity frontier of its
    orders.  Batch order is a seed-deterministic shuffle."""
    parts.validate(g.n_vertices)
    batches = []
    for p in range(parts.n_parts):
        core = parts.members(p)
        in_core = np.zeros(g.n_vertices, dtype=bool)
        in_core[core] = True
        halo: set[int] = set()
        for v in core:
            if g.is_order_vertex(int(v)):
                for e in g.order_entities[int(v)]:
                    u = g.n_orders + int(e)
                    if not in_core[u]:
                        halo.add(u)
        batches.append(CommunityBatch(core=core, halo=np.array(sorted(halo), dtype=np.int64)))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def save_partition(parts: PartitionAssignment, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<H", _FORMAT_VERSION))
        fh.write(struct.pack("<QI", len(parts.part_of), parts.n_parts))
        fh.write(parts.part_of.astype("<u4").tobytes())


def load_partition(path: str | Path) -> PartitionAssignment:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise PartitionError("bad partition file magic")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != _FORMAT_VERSION:
            raise PartitionError(f"unsupported partition format version {version}")
        n, n_parts = struct.unpack("<QI", fh.read(12))
        part_of = np.frombuffer(fh.read(4 * n), dtype="<u4").astype(np.int64)
    return PartitionAssignment(part_of=part_of, n_parts=n_parts)
