"""Transaction records: the seven entity kinds, parsing, and writing.

A record is one checkout event.  Entity values are normalized (trimmed,
lowercased) identity strings; an absent value simply produces no edge in
the transaction graph later on.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional


class EntityType(Enum):
    SHIPPING_ADDRESS = "shipping_address"
    EMAIL = "email"
    IP_ADDRESS = "ip_address"
    DEVICE_ID = "device_id"
    PHONE = "phone"
    PAYMENT_TOKEN = "payment_token"
    ACCOUNT = "account"


ENTITY_TYPES = tuple(EntityType)
_ENTITY_BY_NAME = {e.value: e for e in EntityType}


class RecordError(ValueError):
    """A transaction file row that violates the record contract."""


@dataclass(frozen=True)
class EntityKey:
    """Identity of one entity vertex: (kind, normalized value)."""

    entity_type: EntityType
    value: str

    def __post_init__(self):
        if not self.value:
            raise RecordError("entity value must be non-empty")


def normalize_entity_value(raw: str) -> str:
    return raw.strip().lower()


@dataclass
class TransactionRecord:
    order_id: str
    event_time: int
    entities: dict[EntityType, str] = field(default_factory=dict)
    features: tuple[float, ...] = ()
    label: Optional[int] = None

    def entity_keys(self) -> list[EntityKey]:
        return [EntityKey(t, v) for t, v in sorted(self.entities.items(), key=lambda kv: kv[0].value)]


@dataclass
class ParseReport:
    """Per-row problems found while reading a transaction file."""

    errors: list[tuple[int, str]] = field(default_factory=list)

    @property
    def n_errors(self) -> int:
        return len(self.errors)


def _record_from_dict(obj: dict, line_no: int, feature_dim: Optional[int]) -> TransactionRecord:
    order_id = obj.get("order_id")
    if not order_id or not isinstance(order_id, str):
        raise RecordError(f"line {line_no}: missing order_id")
    try:
        event_time = int(obj["event_time"])
    except (KeyError, TypeError, ValueError):
        raise RecordError(f"line {line_no}: missing or non-integer event_time")
    entities: dict[EntityType, str] = {}
    for name, raw in (obj.get("entities") or {}).items():
        etype = _ENTITY_BY_NAME.get(name)
        if etype is None:
            raise RecordError(f"line {line_no}: unknown entity type {name!r}")
        if raw is None:
            continue
        value = normalize_entity_value(str(raw))
        if value:
            entities[etype] = value
    raw_features = obj.get("features") or []
    features = []
    for x in raw_features:
        if not isinstance(x, (int, float)) or isinstance(x, bool):
            raise RecordError(f"line {line_no}: non-numeric feature {x!r}")
        features.append(float(x))
    if feature_dim is not None and len(features) != feature_dim:
        raise RecordError(
            f"line {line_no}: feature length {len(features)} != declared dim {feature_dim}"
        )
    label = obj.get("label")
    if label is not None:
        label = int(label)
        if label not in (0, 1):
            raise RecordError(f"line {line_no}: label must be 0 or 1")
    return TransactionRecord(order_id, event_time, entities, tuple(features), label)


def parse_transactions(path: str | Path, fmt: str = "jsonl") -> tuple[list[TransactionRecord], ParseReport]:
    """Read a transaction file, collecting per-row errors instead of dying.

    The first valid row fixes the feature dimension; later rows must match.
    An unreadable file raises OSError (fatal by contract).
    """
    path = Path(path)
    if fmt == "jsonl":
        rows = _iter_jsonl(path)
    elif fmt == "csv":
        rows = _iter_csv(path)
    else:
        raise ValueError(f"unknown format {fmt!r}")

    records: list[TransactionRecord] = []
    report = ParseReport()
    feature_dim: Optional[int] = None
    for line_no, obj, err in rows:
        if err is not None:
            report.errors.append((line_no, err))
            continue
        try:
            rec = _record_from_dict(obj, line_no, feature_dim)
        except RecordError as exc:
            report.errors.append((line_no, str(exc)))
            continue
        if feature_dim is None:
            feature_dim = len(rec.features)
        records.append(rec)
    return records, report


def _iter_jsonl(path: Path):
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield line_no, json.loads(line), None
            except json.JSONDecodeError as exc:
                yield line_no, None, f"line {line_no}: bad JSON ({exc.msg})"


_CSV_FIXED = ("order_id", "event_time", "label")


def _iter_csv(path: Path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        feature_cols = [c for c in fields if c.startswith("f")]
        entity_cols = [c for c in fields if c in _ENTITY_BY_NAME]
        for line_no, row in enumerate(reader, start=2):
            try:
                obj = {
                    "order_id": row.get("order_id"),
                    "event_time": row.get("event_time"),
                    "entities": {c: row[c] for c in entity_cols if row.get(c)},
                    "features": [float(row[c]) for c in feature_cols],
                    "label": int(row["label"]) if row.get("label") not in (None, "") else None,
                }
            except ValueError as exc:
                yield line_no, None, f"line {line_no}: {exc}"
                continue
            yield line_no, obj, None


def write_transactions(records: Iterable[TransactionRecord], path: str | Path, fmt: str = "jsonl") -> None:
    path = Path(path)
    records = list(records)
    if fmt == "jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(record_to_json(rec) + "\n")
    elif fmt == "csv":
        dim = len(records[0].features) if records else 0
        cols = ["order_id", "event_time", "label"]
        cols += [e.value for e in ENTITY_TYPES]
        cols += [f"f{i}" for i in range(dim)]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            for rec in records:
                row = {"order_id": rec.order_id, "event_time": rec.event_time,
                       "label": "" if rec.label is None else rec.label}
                for etype, value in rec.entities.items():
                    row[etype.value] = value
                for i, x in enumerate(rec.features):
                    row[f"f{i}"] = repr(x)
                writer.writerow(row)
    else:
        raise ValueError(f"unknown format {fmt!r}")


def record_to_json(rec: TransactionRecord) -> str:
    return json.dumps(
        {
            "order_id": rec.order_id,
            "event_time": rec.event_time,
            "entities": {t.value: v for t, v in sorted(rec.entities.items(), key=lambda kv: kv[0].value)},
            "features": list(rec.features),
            "label": rec.label,
        },
        sort_keys=False,
        separators=(",", ":"),
    )
