import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scamsweeper.encoder import (GatConfig, build_aligned, encode_batch, encode_sequence,
                                 gat_forward, init_gat_params, readout, star_adjacency,
                                 with_anchor)
from scamsweeper.features import D_IN, SubgraphFeaturizer
from scamsweeper.nn import ParamStore, Tensor, check_gradients, ops
from scamsweeper.strwalk import Subgraph, SubgraphSequence
from scamsweeper.txgraph import TemporalMultigraph


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def make_params(cfg, n_max=4, seed=0):
    store = init_gat_params(cfg, np.random.default_rng(seed))
    store.add("agg.W", np.random.default_rng(seed + 1).normal(size=n_max))
    store.xavier("nograph.W", cfg.d_in, cfg.hidden)
    store.zeros("nograph.b", (cfg.hidden,))
    return store


def identity_params(d=D_IN):
    cfg = GatConfig(d_in=d, hidden=d, heads=1)
    store = ParamStore()
    store.add("gat0.W", np.eye(d))
    store.zeros("gat0.a_src", (1, d, 1))
    store.zeros("gat0.a_dst", (1, d, 1))
    store.zeros("gat0.b", (d,))
    return cfg, store


def attention(x, adj, store, cfg):
    """Per-head attention matrix recomputed directly with numpy."""
    f = cfg.hidden // cfg.heads
    H = x @ store["gat0.W"].data
    out = []
    for k in range(cfg.heads):
        Hk = H[:, k * f:(k + 1) * f]
        s = Hk @ store["gat0.a_src"].data[k] + (Hk @ store["gat0.a_dst"].data[k]).T
        e = np.where(s > 0, s, cfg.attn_slope * s)
        e = np.where(adj, e, -np.inf)
        a = np.exp(e - e.max(axis=1, keepdims=True))
        out.append(a / a.sum(axis=1, keepdims=True))
    return out


class TestGat:
    def test_single_node_is_self_transform(self):
        cfg = GatConfig(hidden=8, heads=2)
        store = make_params(cfg)
        x = np.zeros((4, D_IN))
        x[0] = np.random.default_rng(1).normal(size=D_IN)
        mask = np.array([True, False, False, False])
        out = gat_forward(x, star_adjacency(mask), store, cfg, mask).data
        want = elu(x[0] @ store["gat0.W"].data + store["gat0.b"].data)
        assert np.allclose(out[0], want, atol=1e-12)
        assert not out[1:].any()

    def test_attention_rows_sum_to_one(self):
        cfg = GatConfig(hidden=8, heads=4)
        store = make_params(cfg)
        x = np.random.default_rng(2).normal(size=(5, D_IN))
        mask = np.array([True, True, True, False, False])
        for a in attention(x, star_adjacency(mask), store, cfg):
            assert np.allclose(a.sum(axis=1), 1.0, atol=1e-12)

    def test_matches_numpy_recomputation(self):
        cfg = GatConfig(hidden=8, heads=2)
        store = make_params(cfg, seed=4)
        x = np.random.default_rng(3).normal(size=(5, D_IN))
        mask = np.array([True, True, True, True, False])
        adj = star_adjacency(mask)
        H = x @ store["gat0.W"].data
        heads = [a @ H[:, k * 4:(k + 1) * 4] for k, a in enumerate(attention(x, adj, store, cfg))]
        want = elu(np.concatenate(heads, axis=1) + store["gat0.b"].data) * mask[:, None]
        assert np.allclose(gat_forward(x, adj, store, cfg, mask).data, want, atol=1e-12)

    def test_zero_attention_vector_is_uniform(self):
        cfg, store = identity_params()
        x = np.random.default_rng(5).normal(size=(3, D_IN))
        mask = np.ones(3, dtype=bool)
        out = gat_forward(x, star_adjacency(mask), store, cfg, mask).data
        assert np.allclose(out[0], elu(x.mean(axis=0)), atol=1e-12)
        assert np.allclose(out[1], elu((x[0] + x[1]) / 2), atol=1e-12)

    def test_mask_inferred_from_adjacency(self):
        cfg = GatConfig(hidden=8, heads=2)
        store = make_params(cfg)
        x = np.random.default_rng(6).normal(size=(4, D_IN))
        mask = np.array([True, True, False, False])
        adj = star_adjacency(mask)
        assert np.array_equal(gat_forward(x, adj, store, cfg).data,
                              gat_forward(x, adj, store, cfg, mask).data)

    def test_gradients(self):
        cfg = GatConfig(hidden=8, heads=2)
        store = make_params(cfg, n_max=3)
        rng = np.random.default_rng(7)
        x = rng.normal(size=(2, 3, 3, D_IN))
        node_mask = rng.random((2, 3, 3)) < 0.6
        full = with_anchor(node_mask)
        adj = star_adjacency(full)

        def loss():
            aligned = build_aligned(x, node_mask, store["agg.W"])
            return ops.sum(gat_forward(aligned, adj, store, cfg, full))

        params = [store[k] for k in ("gat0.W", "gat0.a_src", "gat0.a_dst", "gat0.b", "agg.W")]
        errs = check_gradients(loss, params)
        assert max(errs.values()) < 1e-4, errs


class TestMasking:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 4), st.integers(0, 2 ** 31))
    def test_padded_rows_do_not_matter(self, n, seed):
        rng = np.random.default_rng(seed)
        cfg = GatConfig(hidden=8, heads=2)
        store = make_params(cfg, seed=seed % 100)
        node_mask = np.arange(4) < n
        x = rng.normal(size=(4, D_IN)) * node_mask[:, None]
        noisy = x + rng.normal(size=(4, D_IN)) * (~node_mask)[:, None] * 100
        full = with_anchor(node_mask)
        a = gat_forward(build_aligned(x, node_mask, store["agg.W"]), star_adjacency(full),
                        store, cfg, full).data
        b = gat_forward(build_aligned(noisy, node_mask, store["agg.W"]), star_adjacency(full),
                        store, cfg, full).data
        assert np.array_equal(a, b)
        assert not a[n + 1:].any()

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(8)
        cfg = GatConfig(hidden=8, heads=2)
        store = make_params(cfg)
        store["agg.W"].data[:] = 0.0  # shared W is position-dependent by design
        x = rng.normal(size=(4, D_IN))
        node_mask = np.ones(4, dtype=bool)
        perm = np.array([2, 0, 3, 1])
        full = with_anchor(node_mask)

        def run(rows):
            return gat_forward(build_aligned(rows, node_mask, store["agg.W"]),
                               star_adjacency(full), store, cfg, full).data

        a, b = run(x), run(x[perm])
        assert np.allclose(a[0], b[0], atol=1e-12)
        assert np.allclose(a[1:][perm], b[1:], atol=1e-12)


class TestReadout:
    def test_anchor(self):
        h = Tensor(np.arange(12.0).reshape(3, 4))
        assert readout(h, np.ones(3, bool)).data.tolist() == [0, 1, 2, 3]

    def test_mean_identical_rows(self):
        h = Tensor(np.tile([1.5, -2.0], (3, 1)))
        assert readout(h, np.ones(3, bool), "mean").data.tolist() == [1.5, -2.0]

    def test_mean_distinct_rows(self):
        h = Tensor(np.array([[1.0, 0.0], [2.0, 3.0], [6.0, 6.0], [99.0, 99.0]]))
        assert readout(h, np.array([1, 1, 1, 0], bool), "mean").data.tolist() == [3.0, 3.0]

    def test_mean_needs_a_node(self):
        with pytest.raises(ValueError):
            readout(Tensor(np.zeros((2, 2))), np.zeros(2, bool), "mean")

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            readout(Tensor(np.zeros((2, 2))), np.ones(2, bool), "max")


def addr(i):
    return "0x" + f"{i:040x}"


@pytest.fixture()
def tiny():
    recs = [(addr(0), addr(1), 10 ** 18, 0, 0), (addr(2), addr(0), 3 * 10 ** 18, 50, 1),
            (addr(0), addr(3), 10 ** 17, 120, 2), (addr(0), addr(1), 10 ** 18, 250, 3),
            (addr(4), addr(0), 5 * 10 ** 18, 260, 4)]
    g = TemporalMultigraph.from_records(recs)

    def sg(eids, lo, hi):
        edges = tuple((int(g.src[e]), int(g.dst[e]), g.edges[e].value, int(g.ts[e])) for e in eids)
        nodes = (0,) + tuple(dict.fromkeys(d if s == 0 else s for s, d, _, _ in edges))
        return Subgraph(0, nodes, edges, tuple(eids)), (lo, hi)

    parts = [sg([0, 1], 0, 100), sg([2], 100, 200), sg([3, 4], 200, 300)]
    return g, parts


class TestEncodeSequence:
    def setup_method(self):
        self.cfg = GatConfig(hidden=8, heads=2)
        self.store = make_params(self.cfg, n_max=3)

    def test_empty(self, tiny):
        g, _ = tiny
        f = SubgraphFeaturizer(g, n_max=3, m_max=4).fit([])
        phi = encode_sequence(SubgraphSequence(0), f, self.store, self.cfg)
        assert phi.true_len == 0 and phi.Phi.shape == (1, 8) and not phi.Phi.any()

    def test_single(self, tiny):
        g, parts = tiny
        f = SubgraphFeaturizer(g, n_max=3, m_max=4).fit([])
        seq = SubgraphSequence(0, (parts[0][0],), (parts[0][1],))
        assert encode_sequence(seq, f, self.store, self.cfg).Phi.shape == (1, 8)

    def test_order_determinism(self, tiny):
        g, parts = tiny
        f = SubgraphFeaturizer(g, n_max=3, m_max=4).fit([])
        ordered = SubgraphSequence(0, tuple(p[0] for p in parts), tuple(p[1] for p in parts))
        shuffled = [parts[2], parts[0], parts[1]]
        scrambled = SubgraphSequence(0, tuple(p[0] for p in shuffled),
                                     tuple(p[1] for p in shuffled))
        a = encode_sequence(ordered, f, self.store, self.cfg)
        b = encode_sequence(scrambled, f, self.store, self.cfg)
        assert a.true_len == 3 and np.array_equal(a.Phi, b.Phi)

    def test_composes_row_by_row(self, tiny):
        g, parts = tiny
        f = SubgraphFeaturizer(g, n_max=3, m_max=4).fit([])
        seq = SubgraphSequence(0, tuple(p[0] for p in parts), tuple(p[1] for p in parts))
        phi = encode_sequence(seq, f, self.store, self.cfg).Phi
        for i, (sg, iv) in enumerate(parts):
            fb = f.transform([SubgraphSequence(0, (sg,), (iv,))])
            rows, nm = fb.x[0, 0], fb.node_mask[0, 0]
            n = int(nm.sum())
            w = np.exp(self.store["agg.W"].data[:n])
            anchor = (w / w.sum()) @ rows[:n]
            full = np.concatenate([[True], nm])
            aligned = np.vstack([anchor, rows])
            node_out = gat_forward(aligned, star_adjacency(full), self.store, self.cfg, full).data
            assert np.allclose(phi[i], node_out[0], atol=1e-12)

    def test_batch_zero_beyond_length(self, tiny):
        g, parts = tiny
        f = SubgraphFeaturizer(g, n_max=3, m_max=5).fit([])
        seq = SubgraphSequence(0, tuple(p[0] for p in parts), tuple(p[1] for p in parts))
        fb = f.transform([seq, SubgraphSequence(0)])
        for graph_layer in (True, False):
            phi = encode_batch(fb, self.store, self.cfg, graph_layer).data
            assert phi.shape == (2, 5, 8)
            assert not phi[0, 3:].any() and not phi[1].any()
