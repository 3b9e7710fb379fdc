"""Synthetic transaction generator.

Legitimate traffic draws mostly fresh entities; fraud rings recycle a
small entity pool across several consecutive snapshots.  Raw features are
class-conditioned Gaussians with heavy overlap, so a features-only model
is deliberately weak and the label signal lives mainly in the shared
entity structure.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .records import ENTITY_TYPES, EntityType, TransactionRecord

# entity kinds attached to every generated order
_ORDER_ENTITY_TYPES = (
    EntityType.EMAIL,
    EntityType.IP_ADDRESS,
    EntityType.DEVICE_ID,
    EntityType.PAYMENT_TOKEN,
)

DAY = 86400


@dataclass(frozen=True)
class GenConfig:
    n_snapshots: int = 24
    legit_orders_per_snapshot: int = 50
    n_rings: int = 14
    ring_size: int = 20              # orders per ring
    ring_entity_pool: int = 6        # shared entity values per ring
    ring_span: int = 12              # snapshots a ring stays active
    entity_reuse_prob_legit: float = 0.15
    feature_dim: int = 16
    feature_noise_sigma: float = 1.0
    fraud_feature_shift: float = 0.4
    seed: int = 7

    def __post_init__(self):
        if not (0.0 <= self.entity_reuse_prob_legit <= 1.0):
            raise ValueError("entity_reuse_prob_legit must be in [0,1]")
        if min(self.n_snapshots, self.legit_orders_per_snapshot, self.n_rings,
               self.ring_size, self.ring_entity_pool, self.feature_dim) < 0:
            raise ValueError("counts must be >= 0")


def generate(cfg: GenConfig) -> list[TransactionRecord]:
    """Deterministic records, sorted by event time then order id."""
    rng = np.random.default_rng(cfg.seed)
    records: list[TransactionRecord] = []
    serial = 0

    # recent legit entity values, per type, available for reuse
    recent: dict[EntityType, list[str]] = {t: [] for t in _ORDER_ENTITY_TYPES}

    def fresh_value(etype: EntityType, tag: str) -> str:
        return f"{etype.value[:3]}-{tag}"

    for t in range(cfg.n_snapshots):
        for _ in range(cfg.legit_orders_per_snapshot):
            entities = {}
            for etype in _ORDER_ENTITY_TYPES:
                pool = recent[etype]
                if pool and rng.random() < cfg.entity_reuse_prob_legit:
                    value = pool[int(rng.integers(len(pool)))]
                else:
                    value = fresh_value(etype, f"l{serial}")
                    pool.append(value)
                    if len(pool) > 200:
                        del pool[0]
                entities[etype] = value
            records.append(_make_order(cfg, rng, serial, t, entities, label=0))
            serial += 1

    for ring in range(cfg.n_rings):
        # ring pool: values spread over the attached entity types
        pool = [
            (
                _ORDER_ENTITY_TYPES[k % len(_ORDER_ENTITY_TYPES)],
                fresh_value(_ORDER_ENTITY_TYPES[k % len(_ORDER_ENTITY_TYPES)], f"r{ring}.{k}"),
            )
            for k in range(cfg.ring_entity_pool)
        ]
        span = min(cfg.ring_span, cfg.n_snapshots)
        start_max = max(cfg.n_snapshots - span, 0)
        start = int(rng.integers(start_max + 1)) if start_max > 0 else 0
        for _ in range(cfg.ring_size):
            t = start + int(rng.integers(span)) if span > 0 else 0
            n_pick = min(len(pool), 2 + int(rng.integers(3)))
            picked = rng.choice(len(pool), size=n_pick, replace=False)
            entities: dict[EntityType, str] = {}
            for p in sorted(picked):
                etype, value = pool[p]
                entities[etype] = value   # one value per type; later picks overwrite
            records.append(_make_order(cfg, rng, serial, t, entities, label=1))
            serial += 1

    records.sort(key=lambda r: (r.event_time, r.order_id))
    return records


def _make_order(cfg, rng, serial, t, entities, label):
    shift = cfg.fraud_feature_shift if label == 1 else 0.0
    feats = shift + cfg.feature_noise_sigma * rng.standard_normal(cfg.feature_dim)
    jitter = int(rng.integers(DAY))
    return TransactionRecord(
        order_id=f"o{serial:06d}",
        event_time=t * DAY + jitter,
        entities=entities,
        features=tuple(float(x) for x in feats),
        label=label,
    )


@dataclass
class DatasetSummary:
    n_records: int = 0
    n_fraud: int = 0
    fraud_rate: float = 0.0
    snapshot_histogram: dict[int, int] = field(default_factory=dict)
    # per class: mean number of orders sharing each of this order's entities
    mean_entity_degree_legit: float = 0.0
    mean_entity_degree_fraud: float = 0.0
    distinct_entities: int = 0


def summarize(records: Sequence[TransactionRecord], duration: int = DAY) -> DatasetSummary:
    """Exact dataset statistics; invariant to record order."""
    s = DatasetSummary(n_records=len(records))
    if not records:
        return s
    origin = min(r.event_time for r in records)
    usage: Counter = Counter()
    for r in records:
        for key in r.entity_keys():
            usage[key] += 1
    s.distinct_entities = len(usage)
    degree_sum = {0: 0.0, 1: 0.0}
    degree_n = {0: 0, 1: 0}
    hist: Counter = Counter()
    for r in records:
        t = (r.event_time - origin) // duration
        hist[int(t)] += 1
        lab = r.label or 0
        if lab == 1:
            s.n_fraud += 1
        for key in r.entity_keys():
            degree_sum[lab] += usage[key]
            degree_n[lab] += 1
    s.fraud_rate = s.n_fraud / len(records)
    s.snapshot_histogram = dict(sorted(hist.items()))
    if degree_n[0]:
        s.mean_entity_degree_legit = degree_sum[0] / degree_n[0]
    if degree_n[1]:
        s.mean_entity_degree_fraud = degree_sum[1] / degree_n[1]
    return s
