"""Acceptance criteria 1-7.

Every test prints one ``[PASS]``/``[FAIL]`` line with the measured numbers and
runtime; the lines are repeated in the pytest terminal summary. Criteria 4, 5
and 7 train the full model on the 2,000-account synthetic dataset through the
CLI and take a while on a single core.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import chisquare
from sklearn.metrics import f1_score

from scamsweeper.cli import main
from scamsweeper.features import D_IN, FeatureBatch, SubgraphFeaturizer
from scamsweeper.metrics import report_from_confusion
from scamsweeper.model import ModelConfig, ScamSweeperNet
from scamsweeper.nn import Tensor, check_gradients, ops
from scamsweeper.strwalk import WalkConfig, check_sequence, run_walk, temporal_step
from scamsweeper.txgraph import TemporalMultigraph
from test_nn_core import _KINKED, _away_from_kink, _op_cases

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "acceptance.conf"
RESULTS = []  # shown in the terminal summary by conftest.py


def report(tag, ok, detail, seconds, budget):
    within = seconds <= budget
    status = "PASS" if ok and within else "FAIL"
    line = f"[{status}] {tag}: {detail}; {seconds:.1f} s (budget {budget:.0f} s)"
    RESULTS.append(line)
    print("\n" + line)
    return ok and within


# -- 1. autodiff -----------------------------------------------------------------------

def _tiny_model_loss(seed):
    cfg = ModelConfig(n_max=3, hidden=4, heads=2, m_max=3, d_model=8, blocks=1, dropout=0.0)
    net = ScamSweeperNet(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    for p in net.params.values():
        p.data = p.data + rng.normal(scale=0.2, size=p.shape)
    S = 3
    node_mask = rng.random((S, 3, 3)) < 0.7
    node_mask[:, :, 0] = True
    interval_mask = np.array([[1, 1, 1], [1, 1, 0], [1, 0, 0]], bool)
    node_mask &= interval_mask[..., None]
    x = rng.normal(size=(S, 3, 3, D_IN)) * node_mask[..., None]
    batch = FeatureBatch(x, node_mask, interval_mask, interval_mask.sum(1), np.arange(S), S)
    y = rng.integers(0, cfg.n_classes, size=S)
    return (lambda: ops.cross_entropy(net.logits(batch), y)), list(net.params.values())


def test_c1_autodiff_correctness():
    t0 = time.perf_counter()
    seeds = range(20)
    worst_op, worst_name = 0.0, ""
    for seed in seeds:
        rng = np.random.default_rng(5000 + seed)
        for name, fn, shapes in _op_cases(rng):
            draws = [rng.normal(size=s) for s in shapes]
            if name in _KINKED:
                draws = [_away_from_kink(d) for d in draws]
            inputs = [Tensor(d) for d in draws]
            proj = np.random.default_rng(seed).normal(size=fn(*inputs).shape)
            err = max(check_gradients(lambda: ops.sum(ops.mul(fn(*inputs), proj)), inputs).values())
            if err > worst_op:
                worst_op, worst_name = err, name
    worst_model = 0.0
    for seed in seeds:
        loss, params = _tiny_model_loss(seed)
        worst_model = max(worst_model, max(check_gradients(loss, params).values()))
    ok = worst_op < 1e-4 and worst_model < 1e-4
    assert report("C1 autodiff", ok,
                  f"max rel err ops {worst_op:.2e} ({worst_name}), full model {worst_model:.2e} "
                  f"over {len(seeds)} seeds (< 1e-4)", time.perf_counter() - t0, 60)


# -- 2. sampler distribution -------------------------------------------------------------

def _addr(i):
    return "0x" + f"{i:040x}"


@pytest.mark.parametrize("deltas,tau", [((0, 50, 200), 100.0),
                                        ((0, 30, 60, 90, 400), 120.0)])
def test_c2_sampler_distribution(deltas, tau):
    t0 = time.perf_counter()
    t_cur = 1_000
    g = TemporalMultigraph.from_records(
        [(_addr(0), _addr(i + 1), 10 ** 18, t_cur + d, 1) for i, d in enumerate(deltas)])
    cfg = WalkConfig(tau=tau, direction="out")
    rng = np.random.default_rng(2024)
    n = 100_000
    counts = np.zeros(len(deltas))
    order = {e: i for i, e in enumerate(np.argsort([g.edges[e].timestamp for e in range(g.n_edges)]))}
    for _ in range(n):
        _, e = temporal_step(g, 0, t_cur, cfg, rng)
        counts[order[e]] += 1
    w = [math.exp(-d / tau) for d in deltas]
    expected = np.array([x / sum(w) for x in w])
    l1 = float(np.abs(counts / n - expected).sum())
    p = float(chisquare(counts, expected * n).pvalue)
    ok = l1 < 0.01 and p > 0.01
    assert report(f"C2 sampler ({len(deltas)} candidates)", ok,
                  f"L1 {l1:.4f} (< 0.01), chi-square p {p:.3f} (> 0.01) at {n} draws",
                  time.perf_counter() - t0, 30)


# -- 3. structural invariants --------------------------------------------------------------

def _random_case(rng):
    n_nodes = int(rng.integers(2, 16))
    n_edges = int(rng.integers(1, 60))
    span = int(rng.choice([3_600, 86_400, 10 * 86_400]))
    ts = np.sort(rng.integers(0, span, size=n_edges))
    recs = []
    for t in ts:
        a, b = rng.choice(n_nodes, size=2, replace=False)
        recs.append((_addr(a), _addr(b), int(rng.integers(0, 10 ** 6)) * 10 ** 14, int(t), 1))
    g = TemporalMultigraph.from_records(recs)
    cfg = WalkConfig(structural_window=int(rng.choice([5, 10])),
                     interval_width=int(rng.choice([600, 3_600, 21_600, 86_400])),
                     max_walk_len=int(rng.integers(1, 25)), max_intervals=int(rng.integers(1, 9)),
                     direction=str(rng.choice(["out", "both"])), seed=int(rng.integers(1 << 31)))
    return g, cfg, int(rng.integers(g.n_nodes))


def _check_case(g, cfg, v0, nets, rng):
    seq = run_walk(g, v0, cfg)
    check_sequence(seq, cfg)
    # monotonicity and caps, recomputed here rather than trusted
    last_t = -1
    prev_hi = None
    for sg, (lo, hi) in zip(seq.subgraphs, seq.interval_bounds):
        assert prev_hi is None or prev_hi <= lo
        prev_hi = hi
        times = [e[3] for e in sg.edges]
        assert min(times) >= last_t and all(lo <= t < hi for t in times)
        last_t = max(times)
        assert 1 <= len(sg.edges) <= cfg.structural_window
        assert len(sg.nodes) <= cfg.structural_window + 1
    net, m_max = nets[cfg.structural_window]
    fb = SubgraphFeaturizer(g, n_max=cfg.structural_window, m_max=m_max).fit([seq]).transform([seq])
    # padding purity
    assert not fb.x[~fb.node_mask].any()
    kept = seq.subgraphs[-m_max:]
    assert fb.interval_mask[0].tolist() == [i < len(kept) for i in range(m_max)]
    assert fb.node_mask[0].sum(1).tolist() == [len(s.edges) for s in kept] + [0] * (m_max - len(kept))
    # mask invariance of logits
    noisy = fb.x + rng.normal(scale=100.0, size=fb.x.shape) * (~fb.node_mask)[..., None]
    fb2 = FeatureBatch(noisy, fb.node_mask, fb.interval_mask, fb.lengths, fb.groups, fb.n_accounts)
    assert np.array_equal(net.logits(fb).data, net.logits(fb2).data)
    return len(seq), bool((fb.interval_mask[..., None] & ~fb.node_mask).any())


def test_c3_structural_invariants():
    t0 = time.perf_counter()
    m_max = 4
    nets = {w: (ScamSweeperNet(ModelConfig(n_max=w, hidden=8, heads=2, m_max=m_max, d_model=8,
                                           blocks=1, dropout=0.0), seed=w), m_max)
            for w in (5, 10)}
    rng = np.random.default_rng(77)
    for net, _ in nets.values():  # move off the zero/one initial values
        for p in net.params.values():
            p.data = p.data + rng.normal(scale=0.2, size=p.shape)
    n_cases, failures, first = 10_000, 0, None
    windows = {5: 0, 10: 0}
    nonempty = padded = 0
    for i in range(n_cases):
        g, cfg, v0 = _random_case(rng)
        windows[cfg.structural_window] += 1
        try:
            m, pad = _check_case(g, cfg, v0, nets, rng)
            nonempty += m > 0
            padded += pad
        except Exception as exc:  # counted and reported below
            failures += 1
            first = first or f"case {i}: {exc!r}"
    ok = failures == 0
    assert report("C3 structural invariants", ok,
                  f"{n_cases - failures}/{n_cases} cases hold (window 5: {windows[5]}, "
                  f"window 10: {windows[10]}; {nonempty} non-empty walks, {padded} with padded rows)"
                  + (f"; first failure {first}" if first else ""),
                  time.perf_counter() - t0, 120)


# -- 6. metric identity ------------------------------------------------------------------

def test_c6_metric_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(1000):
        C = int(rng.integers(2, 6))
        cm = rng.integers(0, 30, size=(C, C))
        cm[rng.integers(C), rng.integers(C)] += 1
        got = report_from_confusion(cm).weighted_f1
        y_true = np.repeat(np.repeat(np.arange(C), C), cm.ravel())
        y_pred = np.repeat(np.tile(np.arange(C), C), cm.ravel())
        want = f1_score(y_true, y_pred, labels=list(range(C)), average="weighted",
                        zero_division=0)
        worst = max(worst, abs(got - want))
    assert report("C6 metric identity", worst < 1e-12,
                  f"max |diff| vs independent recomputation {worst:.1e} over 1000 matrices "
                  f"(< 1e-12)", time.perf_counter() - t0, 60)


# -- 4, 5, 7. end-to-end on the synthetic dataset -----------------------------------------

@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    assert main(["synth", "--config", str(CONFIG), "--out", str(root / "data")]) == 0
    return root


def _train(root, name):
    t0 = time.perf_counter()
    code = main(["train", str(root / "data" / "graph.ssgr"), "--config", str(CONFIG),
                 "--out", str(root / name)])
    assert code == 0
    return time.perf_counter() - t0


@pytest.fixture(scope="module")
def first_run(dataset):
    return _train(dataset, "run1")


def test_c4_end_to_end_detection(dataset, first_run):
    metrics = json.loads((dataset / "run1" / "metrics.json").read_text())
    probe = json.loads((dataset / "run1" / "probe_metrics.json").read_text())
    f1, floor = metrics["weighted_f1"], probe["weighted_f1"]
    ok = f1 >= 0.90 and f1 - floor >= 0.15
    assert report("C4 end-to-end detection", ok,
                  f"weighted F1 {f1:.4f} (>= 0.90), probe {floor:.4f}, margin {f1 - floor:.4f} "
                  f"(>= 0.15)", first_run, 15 * 60)


def test_c7_determinism(dataset, first_run):
    seconds = _train(dataset, "run2")
    a = (dataset / "run1" / "metrics.json").read_bytes()
    b = (dataset / "run2" / "metrics.json").read_bytes()
    assert report("C7 determinism", a == b,
                  f"metrics JSON {'byte-identical' if a == b else 'differs'} across repeated runs "
                  f"({len(a)} bytes)", seconds, 15 * 60)


def test_c5_ablation_direction(dataset):
    t0 = time.perf_counter()
    assert main(["ablate", str(dataset / "data" / "graph.ssgr"), "--config", str(CONFIG),
                 "--out", str(dataset / "ablation")]) == 0
    seconds = time.perf_counter() - t0
    rows = json.loads((dataset / "ablation" / "ablation.json").read_text())["rows"]
    print("\n" + (dataset / "ablation" / "ablation.txt").read_text())
    lines, ok = [], True
    for w in (5, 10):
        for ab in ("no_graph_layer", "conventional_transformer"):
            wins = 0
            seeds = sorted({r["seed"] for r in rows if r["structural_window"] == w})
            for s in seeds:
                full = next(r for r in rows if (r["structural_window"], r["seed"], r["ablation"])
                            == (w, s, "none"))
                var = next(r for r in rows if (r["structural_window"], r["seed"], r["ablation"])
                           == (w, s, ab))
                wins += full["weighted_f1"] > var["weighted_f1"]
            ok &= len(seeds) == 3 and wins * 2 > len(seeds)
            lines.append(f"w{w} vs {ab}: full wins {wins}/{len(seeds)}")
    assert report("C5 ablation direction", ok, "; ".join(lines), seconds, 45 * 60)
