import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scamsweeper.exceptions import IngestError, InvariantError
from scamsweeper.txgraph import (TemporalMultigraph, degree_stats,
                                 export_transactions, from_bytes, ingest, power_law_mle,
                                 read_graph, to_bytes, write_graph)


def addr(i: int) -> str:
    return "0x" + f"{i:040x}"


A, B, C, D = (addr(i) for i in range(1, 5))


def write_csv(path, rows, header="from,to,value,timestamp,block"):
    path.write_text(header + "\n" + "".join(",".join(map(str, r)) + "\n" for r in rows))
    return path


def random_graph(rng, n_nodes=200, n_edges=2000, t_max=10_000):
    ts = np.sort(rng.integers(0, t_max, size=n_edges))
    recs = []
    for t in ts:
        a, b = rng.choice(n_nodes, size=2, replace=False)
        recs.append((addr(a), addr(b), int(rng.integers(0, 10 ** 18)) * 100, int(t), int(t // 12)))
    return TemporalMultigraph.from_records(recs)


class TestIngest:
    def test_three_rows(self, tmp_path):
        p = write_csv(tmp_path / "tx.csv", [(A, B, 1, 10, 1), (B, C, 2, 20, 2), (A, C, 3, 30, 3)])
        g = ingest(p)
        assert (g.n_nodes, g.n_edges) == (3, 3)
        assert g.summary() == {"nodes": 3, "edges": 3, "labels": {"unknown": 3}}

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text("")
        g = ingest(p)
        assert g.n_nodes == 0 and g.n_edges == 0

    def test_header_only(self, tmp_path):
        g = ingest(write_csv(tmp_path / "h.csv", []))
        assert g.n_nodes == 0

    def test_column_order_is_free(self, tmp_path):
        p = tmp_path / "tx.csv"
        p.write_text(f"block,timestamp,value,to,from\n1,10,5,{B},{A}\n")
        g = ingest(p)
        e = g.edges[0]
        assert (g.accounts[e.src].address, g.accounts[e.dst].address, e.value) == (A, B, 5)

    def test_decreasing_timestamp_names_line(self, tmp_path):
        p = write_csv(tmp_path / "tx.csv", [(A, B, 1, 100, 1), (B, C, 1, 200, 2), (A, C, 1, 150, 3)])
        with pytest.raises(IngestError) as info:
            ingest(p)
        assert info.value.line == 4
        assert ":4:" in str(info.value)

    def test_equal_block_any_order_allowed(self, tmp_path):
        p = write_csv(tmp_path / "tx.csv", [(A, B, 1, 100, 5), (B, C, 1, 90, 5)])
        assert ingest(p).n_edges == 2

    @pytest.mark.parametrize("bad", [
        (A, B, -1, 10, 1), (A, B, "x", 10, 1), ("0x12", B, 1, 10, 1), (A, B, 1, 1.5, 1),
    ])
    def test_malformed_row_reports_line(self, tmp_path, bad):
        p = write_csv(tmp_path / "tx.csv", [(A, B, 1, 5, 1), bad])
        with pytest.raises(IngestError) as info:
            ingest(p)
        assert info.value.line == 3

    def test_missing_column(self, tmp_path):
        p = tmp_path / "tx.csv"
        p.write_text(f"from,to,value,timestamp\n{A},{B},1,2\n")
        with pytest.raises(IngestError, match="block"):
            ingest(p)

    def test_self_loops_dropped_by_default(self, tmp_path):
        p = write_csv(tmp_path / "tx.csv", [(A, A, 1, 10, 1), (A, B, 1, 11, 1)])
        assert ingest(p).n_edges == 1
        assert ingest(p, allow_self_loops=True).n_edges == 2

    def test_jsonl(self, tmp_path):
        p = tmp_path / "tx.jsonl"
        p.write_text(json.dumps({"from": A, "to": B, "value": str(10 ** 30), "timestamp": 7,
                                 "block": 1}) + "\n")
        g = ingest(p)
        assert g.edges[0].value == 10 ** 30

    def test_jsonl_bad_line(self, tmp_path):
        p = tmp_path / "tx.jsonl"
        p.write_text(json.dumps({"from": A, "to": B, "value": 1, "timestamp": 7, "block": 1})
                     + "\n{not json\n")
        with pytest.raises(IngestError) as info:
            ingest(p)
        assert info.value.line == 2

    def test_labels(self, tmp_path):
        p = write_csv(tmp_path / "tx.csv", [(A, B, 1, 10, 1)])
        lab = tmp_path / "labels.csv"
        lab.write_text(f"address,label\n{A},scam\n{D},phishing\n")
        g = ingest(p, labels_path=lab)
        assert g.accounts[g.id_of(A)].label == "scam"
        assert g.accounts[g.id_of(B)].label == "unknown"
        assert g.accounts[g.id_of(D)].label == "phishing"  # label-only account kept

    def test_conflicting_labels(self, tmp_path):
        p = write_csv(tmp_path / "tx.csv", [(A, B, 1, 10, 1)])
        lab = tmp_path / "labels.csv"
        lab.write_text(f"address,label\n{A},scam\n{A.upper().replace('0X', '0x')},normal\n")
        with pytest.raises(IngestError, match="conflict"):
            ingest(p, labels_path=lab)

    def test_unknown_label_value(self, tmp_path):
        p = write_csv(tmp_path / "tx.csv", [(A, B, 1, 10, 1)])
        lab = tmp_path / "labels.csv"
        lab.write_text(f"address,label\n{A},rugpull\n")
        with pytest.raises(IngestError):
            ingest(p, labels_path=lab)


class TestStructure:
    def test_parallel_edges_preserved(self):
        g = TemporalMultigraph.from_records([(A, B, 1, 5, 1), (A, B, 1, 5, 1), (A, B, 2, 6, 1)])
        assert g.n_edges == 3
        assert len(g.incident(0, "out")[0]) == 3

    def test_each_edge_once_per_endpoint(self):
        g = random_graph(np.random.default_rng(0), 50, 400)
        for direction, expect in (("out", 1), ("in", 1), ("both", 2)):
            allids = np.concatenate([g.incident(v, direction)[0] for v in range(g.n_nodes)])
            assert np.all(np.bincount(allids, minlength=g.n_edges) == expect)

    def test_adjacency_sorted(self):
        g = random_graph(np.random.default_rng(1), 50, 400)
        for v in range(g.n_nodes):
            eids, times = g.incident(v)
            keys = list(zip(times.tolist(), eids.tolist()))
            assert keys == sorted(keys)

    def test_unknown_node(self):
        g = TemporalMultigraph.from_records([(A, B, 1, 5, 1)])
        with pytest.raises(KeyError):
            g.neighbors_in_window(5, 0, 10)

    def test_window_covering_all_time(self):
        g = random_graph(np.random.default_rng(2), 30, 300)
        for v in range(g.n_nodes):
            assert [n.edge for n in g.neighbors_in_window(v, 0, 10 ** 9)] == \
                g.incident(v)[0].tolist()

    def test_empty_window(self):
        g = random_graph(np.random.default_rng(3), 30, 300)
        assert g.neighbors_in_window(0, 500, 500) == []
        with pytest.raises(ValueError):
            g.neighbors_in_window(0, 501, 500)

    def test_window_matches_brute_force(self):
        rng = np.random.default_rng(4)
        g = random_graph(rng, 200, 2000)
        for _ in range(1000):
            v = int(rng.integers(g.n_nodes))
            lo = int(rng.integers(0, 10_000))
            hi = lo + int(rng.integers(0, 3000))
            direction = ("in", "out", "both")[int(rng.integers(3))]
            got = [(n.node, n.edge, n.timestamp, n.value)
                   for n in g.neighbors_in_window(v, lo, hi, direction)]
            want = []
            for e, tx in enumerate(g.edges):
                if not lo <= tx.timestamp < hi:
                    continue
                if tx.src == v and direction in ("out", "both"):
                    want.append((tx.timestamp, e, tx.dst, tx.value))
                elif tx.dst == v and direction in ("in", "both"):
                    want.append((tx.timestamp, e, tx.src, tx.value))
            want = [(o, e, t, val) for t, e, o, val in sorted(want)]
            assert got == want


class TestSerialization:
    def test_binary_round_trip(self, tmp_path):
        g = random_graph(np.random.default_rng(5), 40, 300)
        write_graph(g, tmp_path / "g.ssgr")
        h = read_graph(tmp_path / "g.ssgr")
        assert h == g and h.digest() == g.digest()
        assert to_bytes(h) == to_bytes(g)

    def test_bad_magic(self):
        with pytest.raises(InvariantError):
            from_bytes(b"XXXX" + b"\0" * 20)

    def test_large_values_survive(self):
        g = TemporalMultigraph.from_records([(A, B, (1 << 127) + 12345, 5, 1)])
        assert from_bytes(to_bytes(g)).edges[0].value == (1 << 127) + 12345

    @pytest.mark.parametrize("fmt", ["csv", "jsonl"])
    def test_text_round_trip(self, tmp_path, fmt):
        g = random_graph(np.random.default_rng(6), 40, 300)
        export_transactions(g, tmp_path / f"tx.{fmt}", fmt)
        assert ingest(tmp_path / f"tx.{fmt}") == g

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(0, 1 << 100),
                              st.integers(0, 50)), max_size=30))
    def test_round_trip_property(self, rows):
        rows = sorted(rows, key=lambda r: r[3])
        recs = [(addr(a), addr(b), v, t, t) for a, b, v, t in rows]
        g = TemporalMultigraph.from_records(recs, {addr(1): "scam"})
        assert from_bytes(to_bytes(g)) == g


class TestDegrees:
    def test_star(self):
        g = TemporalMultigraph.from_records([(A, addr(100 + i), 1, i, i) for i in range(50)])
        deg = degree_stats(g)["degrees"]
        assert deg[g.id_of(A)] == 50
        assert sorted(set(deg.tolist()) - {50}) == [1]

    def test_chain_histogram(self):
        g = TemporalMultigraph.from_records([(A, B, 1, 1, 1), (B, C, 1, 2, 2)])
        assert degree_stats(g)["histogram"] == {1: 2, 2: 1}

    def test_parallel_edges_count_once(self):
        g = TemporalMultigraph.from_records([(A, B, 1, 1, 1), (B, A, 1, 2, 2), (A, B, 3, 4, 4)])
        assert degree_stats(g)["histogram"] == {1: 2}

    def test_empty_and_isolated(self):
        with pytest.raises(InvariantError):
            degree_stats(TemporalMultigraph([], []))
        lonely = TemporalMultigraph.from_records([], {A: "normal"})
        with pytest.raises(InvariantError):
            degree_stats(lonely)

    def test_mle_recovers_known_exponent(self):
        # discrete power law sampled by inverse transform of the continuous approximation
        rng = np.random.default_rng(0)
        alpha, k_min = 2.5, 3
        u = rng.random(200_000)
        k = np.floor((k_min - 0.5) * (1 - u) ** (-1 / (alpha - 1)) + 0.5)
        assert power_law_mle(k, k_min) == pytest.approx(alpha, abs=0.05)
