import json

import numpy as np
import pytest

from ddsfraud.graph import (GraphError, SnapshotIndex, build_static_graph,
                            load_static_graph, save_static_graph, snapshot_of)
from ddsfraud.records import (EntityKey, EntityType, RecordError, TransactionRecord,
                              parse_transactions, write_transactions)


def _write_jsonl(path, rows):
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")


class TestParse:
    def test_single_row(self, tmp_path):
        f = tmp_path / "one.jsonl"
        _write_jsonl(f, [{"order_id": "o1", "event_time": 100,
                          "entities": {"email": "A@B.com "}, "features": [1.0, 2.0, 3.0],
                          "label": 0}])
        records, report = parse_transactions(f)
        assert report.n_errors == 0
        (rec,) = records
        assert rec.order_id == "o1"
        assert len(rec.features) == 3
        # normalization: trim + lowercase
        assert rec.entities[EntityType.EMAIL] == "a@b.com"

    def test_missing_order_id_rejected_with_line(self, tmp_path):
        f = tmp_path / "bad.jsonl"
        _write_jsonl(f, [{"event_time": 1, "features": []}])
        records, report = parse_transactions(f)
        assert records == []
        assert report.n_errors == 1
        line_no, msg = report.errors[0]
        assert line_no == 1 and "order_id" in msg

    def test_non_numeric_feature_rejected(self, tmp_path):
        f = tmp_path / "bad.jsonl"
        _write_jsonl(f, [{"order_id": "o1", "event_time": 1, "features": ["x"]}])
        _, report = parse_transactions(f)
        assert report.n_errors == 1

    def test_unknown_entity_type_rejected(self, tmp_path):
        f = tmp_path / "bad.jsonl"
        _write_jsonl(f, [{"order_id": "o1", "event_time": 1,
                          "entities": {"carrier_pigeon": "coo"}, "features": []}])
        _, report = parse_transactions(f)
        assert report.n_errors == 1

    def test_feature_dim_mismatch_rejected(self, tmp_path):
        f = tmp_path / "dim.jsonl"
        _write_jsonl(f, [
            {"order_id": "o1", "event_time": 1, "features": [1.0, 2.0]},
            {"order_id": "o2", "event_time": 2, "features": [1.0]},
        ])
        records, report = parse_transactions(f)
        assert len(records) == 1 and report.n_errors == 1

    def test_unreadable_file_fatal(self, tmp_path):
        with pytest.raises(OSError):
            parse_transactions(tmp_path / "nope.jsonl")

    def test_bad_label_rejected(self, tmp_path):
        f = tmp_path / "lab.jsonl"
        _write_jsonl(f, [{"order_id": "o1", "event_time": 1, "features": [], "label": 2}])
        _, report = parse_transactions(f)
        assert report.n_errors == 1

    @pytest.mark.parametrize("fmt", ["jsonl", "csv"])
    def test_roundtrip_datagen(self, tmp_path, small_records, fmt):
        f = tmp_path / f"data.{fmt}"
        write_transactions(small_records, f, fmt=fmt)
        back, report = parse_transactions(f, fmt=fmt)
        assert report.n_errors == 0
        assert back == small_records


class TestSnapshotOf:
    IDX = SnapshotIndex(origin_time=0, duration=86400)

    def test_origin_is_zero(self):
        assert snapshot_of(0, self.IDX) == 0

    def test_boundaries(self):
        assert snapshot_of(86399, self.IDX) == 0
        assert snapshot_of(86400, self.IDX) == 1

    def test_before_origin_errors(self):
        with pytest.raises(GraphError):
            snapshot_of(5, SnapshotIndex(origin_time=10, duration=100))

    def test_matches_integer_division_oracle(self, rng):
        idx = SnapshotIndex(origin_time=123, duration=3600)
        times = rng.integers(123, 10_000_000, size=1000)
        for t in times:
            assert snapshot_of(int(t), idx) == (int(t) - 123) // 3600


class TestBuildStaticGraph:
    def test_shared_email(self):
        recs = [
            TransactionRecord("o1", 0, {EntityType.EMAIL: "x@y"}, (1.0,), 0),
            TransactionRecord("o2", 86400, {EntityType.EMAIL: "x@y"}, (2.0,), 1),
        ]
        g = build_static_graph(recs)
        assert g.n_orders == 2 and g.n_entities == 1 and g.n_edges == 2

    def test_full_entity_order_has_degree_seven(self):
        entities = {t: f"v{t.value}" for t in EntityType}
        g = build_static_graph([TransactionRecord("o1", 0, entities, (0.0,), 0)])
        assert len(g.order_entities[0]) == 7

    def test_duplicate_order_id_fatal(self):
        recs = [TransactionRecord("o1", 0, {}, (), 0),
                TransactionRecord("o1", 1, {}, (), 0)]
        with pytest.raises(GraphError, match="o1"):
            build_static_graph(recs)

    def test_entity_count_matches_set_scan_oracle(self, small_records, small_graph):
        distinct = {EntityKey(t, v) for r in small_records for t, v in r.entities.items()}
        assert small_graph.n_entities == len(distinct)

    def test_bipartite_two_coloring(self, small_graph):
        g = small_graph
        for o in range(g.n_orders):
            for e in g.order_entities[o]:
                assert 0 <= e < g.n_entities   # edges only order -> entity

    def test_degree_conservation(self, small_graph):
        g = small_graph
        order_deg = sum(len(a) for a in g.order_entities)
        entity_deg = sum(len(a) for a in g.entity_orders)
        assert order_deg == entity_deg == g.n_edges

    def test_snapshot_ids_consistent(self, small_graph):
        g = small_graph
        for i in range(g.n_orders):
            assert g.order_snapshots[i] == snapshot_of(int(g.order_times[i]), g.idx)


class TestSerialization:
    def test_roundtrip(self, tmp_path, small_graph):
        p = tmp_path / "g.ddsg"
        save_static_graph(small_graph, p)
        g2 = load_static_graph(p)
        assert g2.order_ids == small_graph.order_ids
        assert np.array_equal(g2.features, small_graph.features)
        assert np.array_equal(g2.labels, small_graph.labels)
        assert g2.entity_keys == small_graph.entity_keys
        assert all(np.array_equal(a, b) for a, b in
                   zip(g2.order_entities, small_graph.order_entities))

    def test_deterministic_bytes(self, tmp_path, small_records):
        p1, p2 = tmp_path / "a.ddsg", tmp_path / "b.ddsg"
        save_static_graph(build_static_graph(small_records), p1)
        save_static_graph(build_static_graph(list(small_records)), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.ddsg"
        p.write_bytes(b"NOPE" + b"\0" * 64)
        with pytest.raises(GraphError, match="magic"):
            load_static_graph(p)


def test_empty_entity_value_invalid():
    with pytest.raises(RecordError):
        EntityKey(EntityType.EMAIL, "")
