"""Structure-temporal random walks producing time-ordered subgraph sequences.

A walk alternates two moves. The *temporal step* leaves the current node
along an incident edge no earlier than the current time, favouring edges
close in time. The *structural step* collects, for the fixed-width time
bin that edge falls in, up to ``structural_window`` of the departing node's
edges in that bin. One subgraph is emitted per non-empty bin.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import ConfigError, InvariantError
from .txgraph import TemporalMultigraph

__all__ = [
    "WalkConfig", "Subgraph", "SubgraphSequence", "WalkSet", "temporal_step",
    "structural_step", "run_walk", "sample_dataset", "walk_seed", "check_sequence",
    "write_walk_cache", "read_walk_cache", "load_or_sample", "STRWalkSampler",
]

_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class WalkConfig:
    max_walk_len: int = 40
    structural_window: int = 10
    interval_width: int = 86_400
    tau: Optional[float] = None  # None: mean per-account inter-event gap
    max_intervals: int = 32
    seed: int = 0
    direction: str = "out"

    def __post_init__(self):
        for name in ("max_walk_len", "structural_window", "interval_width", "max_intervals"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.tau is not None and not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.direction not in ("out", "both"):
            raise ConfigError(f"direction must be 'out' or 'both', got {self.direction!r}")
        if not 0 <= int(self.seed) <= _U64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")

    def resolved(self, g: TemporalMultigraph) -> "WalkConfig":
        return self if self.tau is not None else replace(self, tau=g.mean_inter_event_gap())

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class Subgraph:
    anchor: int
    nodes: tuple
    edges: tuple  # (src, dst, value, timestamp)
    edge_ids: tuple = ()

    @property
    def n_neighbors(self) -> int:
        return len(self.nodes) - 1


@dataclass(frozen=True)
class SubgraphSequence:
    start: int
    subgraphs: tuple = ()
    interval_bounds: tuple = ()  # (t_lo, t_hi) per subgraph

    def __len__(self) -> int:
        return len(self.subgraphs)


@dataclass
class WalkSet:
    """Walk sequences plus, for each, the index of the account it belongs to."""

    sequences: list
    groups: np.ndarray
    accounts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def n_accounts(self) -> int:
        return len(self.accounts)


# -- the two steps ---------------------------------------------------------------------

def _draw(weights: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(weights)
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), len(cdf) - 1))


def temporal_step(g: TemporalMultigraph, v: int, t_cur: int, cfg: WalkConfig,
                  rng: np.random.Generator, exclude_edge: Optional[int] = None):
    """Pick the next ``(node, edge)`` or return None when no edge is left.

    Candidates are incident edges with ``timestamp >= t_cur``; edge ``j`` is
    chosen with probability ``softmax(-(t_j - t_cur) / tau)``.
    """
    eids, times = g.incident(v, cfg.direction)
    lo = np.searchsorted(times, t_cur, side="left")
    eids, times = eids[lo:], times[lo:]
    if exclude_edge is not None and eids.size:
        keep = eids != exclude_edge
        eids, times = eids[keep], times[keep]
    if eids.size == 0:
        return None
    tau = cfg.tau if cfg.tau is not None else g.mean_inter_event_gap()
    logits = -(times - t_cur).astype(np.float64) / tau
    w = np.exp(logits - logits.max())
    j = _draw(w, rng)
    e = int(eids[j])
    return g.other_end(v, e), e


def temporal_probabilities(g: TemporalMultigraph, v: int, t_cur: int, cfg: WalkConfig,
                           exclude_edge: Optional[int] = None):
    """Candidate edge ids and their selection probabilities (for inspection/tests)."""
    eids, times = g.incident(v, cfg.direction)
    lo = np.searchsorted(times, t_cur, side="left")
    eids, times = eids[lo:], times[lo:]
    if exclude_edge is not None:
        keep = eids != exclude_edge
        eids, times = eids[keep], times[keep]
    if eids.size == 0:
        return eids, np.zeros(0)
    tau = cfg.tau if cfg.tau is not None else g.mean_inter_event_gap()
    logits = -(times - t_cur).astype(np.float64) / tau
    w = np.exp(logits - logits.max())
    return eids, w / w.sum()


def structural_step(g: TemporalMultigraph, anchor: int, interval: tuple, cfg: WalkConfig,
                    rng: np.random.Generator) -> Subgraph:
    """Sample up to ``structural_window`` anchor edges inside ``[t_lo, t_hi)``.

    Sampling is without replacement with weights ``softmax(log1p(value_eth))``,
    i.e. proportional to ``1 + value_eth`` (Gumbel top-k).
    """
    t_lo, t_hi = interval
    if not t_lo < t_hi:
        raise ValueError(f"degenerate interval {interval}")
    cand = g.window_edges(anchor, t_lo, t_hi, "both")
    k = min(cfg.structural_window, cand.size)
    if k < cand.size:
        keys = np.log1p(g.value_eth[cand]) + rng.gumbel(size=cand.size)
        picked = np.sort(np.argsort(-keys, kind="stable")[:k])
        cand = cand[picked]
    nodes = [anchor]
    seen = {anchor}
    edges = []
    for e in cand:
        e = int(e)
        tx = g.edges[e]
        other = g.other_end(anchor, e)
        if other not in seen:
            seen.add(other)
            nodes.append(other)
        edges.append((tx.src, tx.dst, tx.value, tx.timestamp))
    return Subgraph(anchor, tuple(nodes), tuple(edges), tuple(int(e) for e in cand))


def run_walk(g: TemporalMultigraph, v0: int, cfg: WalkConfig,
             rng: Optional[np.random.Generator] = None) -> SubgraphSequence:
    """One STRWalk from ``v0``; deterministic in ``(graph, v0, cfg)`` when ``rng`` is None."""
    g._check_node(v0)
    cfg = cfg.resolved(g)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    eids, times = g.incident(v0, "both")
    if eids.size == 0:
        return SubgraphSequence(v0)

    t_first = int(times[0])
    width = int(cfg.interval_width)
    v, t_cur, last_edge = v0, t_first, None
    last_bin = -1
    subgraphs, bounds = [], []
    for _ in range(cfg.max_walk_len):
        if len(subgraphs) >= cfg.max_intervals:
            break
        step = temporal_step(g, v, t_cur, cfg, rng, exclude_edge=last_edge)
        if step is None:
            break
        nxt, e = step
        t_e = int(g.ts[e])
        b = (t_e - t_first) // width
        if b != last_bin:
            lo = t_first + b * width
            subgraphs.append(structural_step(g, v, (lo, lo + width), cfg, rng))
            bounds.append((lo, lo + width))
            last_bin = b
        v, t_cur, last_edge = nxt, t_e, e
    return SubgraphSequence(v0, tuple(subgraphs), tuple(bounds))


def walk_seed(seed: int, node: int, walk: int) -> int:
    h = hashlib.blake2b(f"{int(node)}:{int(walk)}".encode(), digest_size=8).digest()
    return (int(seed) ^ int.from_bytes(h, "little")) & _U64


def sample_dataset(g: TemporalMultigraph, starts: Sequence[int], cfg: WalkConfig,
                   walks_per_node: int = 5) -> list:
    """``walks_per_node`` walks per start, in ``(start, walk index)`` order."""
    starts = [int(s) for s in starts]
    if not starts:
        raise ValueError("sample_dataset needs at least one start node")
    for s in starts:
        g._check_node(s)
    cfg = cfg.resolved(g)
    out = []
    for s in starts:
        for w in range(walks_per_node):
            rng = np.random.default_rng(walk_seed(cfg.seed, s, w))
            out.append(run_walk(g, s, cfg, rng))
    return out


def check_sequence(seq: SubgraphSequence, cfg: WalkConfig) -> None:
    """Raise InvariantError unless ``seq`` satisfies the sequence invariants."""
    if len(seq.subgraphs) != len(seq.interval_bounds):
        raise InvariantError("subgraph / interval count mismatch")
    if len(seq) > cfg.max_intervals:
        raise InvariantError(f"{len(seq)} subgraphs exceed max_intervals={cfg.max_intervals}")
    prev_hi = None
    for sg, (lo, hi) in zip(seq.subgraphs, seq.interval_bounds):
        if not lo < hi:
            raise InvariantError(f"degenerate interval ({lo}, {hi})")
        if prev_hi is not None and prev_hi > lo:
            raise InvariantError("intervals are not strictly time-ordered")
        prev_hi = hi
        if not sg.nodes or sg.nodes[0] != sg.anchor:
            raise InvariantError("subgraph must list its anchor first")
        if len(sg.nodes) > cfg.structural_window + 1:
            raise InvariantError(f"subgraph has {len(sg.nodes)} nodes > window + 1")
        if not sg.edges:
            raise InvariantError("empty subgraph in sequence")
        node_set = set(sg.nodes)
        for src, dst, _, ts in sg.edges:
            if not lo <= ts < hi:
                raise InvariantError(f"edge at t={ts} outside interval [{lo}, {hi})")
            if src not in node_set or dst not in node_set:
                raise InvariantError("edge endpoint outside subgraph nodes")


# -- walk cache ---------------------------------------------------------------------------

def _seq_to_json(seq: SubgraphSequence) -> dict:
    return {
        "start": seq.start,
        "intervals": [list(b) for b in seq.interval_bounds],
        "subgraphs": [{"anchor": sg.anchor, "nodes": list(sg.nodes),
                       "edges": [[s, d, str(v), t] for s, d, v, t in sg.edges],
                       "edge_ids": list(sg.edge_ids)} for sg in seq.subgraphs],
    }


def _seq_from_json(obj: dict) -> SubgraphSequence:
    subs = tuple(Subgraph(int(s["anchor"]), tuple(s["nodes"]),
                          tuple((int(a), int(b), int(v), int(t)) for a, b, v, t in s["edges"]),
                          tuple(s.get("edge_ids", ())))
                 for s in obj["subgraphs"])
    return SubgraphSequence(int(obj["start"]), subs, tuple(tuple(b) for b in obj["intervals"]))


def write_walk_cache(path, sequences: Iterable[SubgraphSequence], cfg: WalkConfig,
                     walks_per_node: int, graph_digest: str = "",
                     extra: Optional[dict] = None) -> None:
    """JSONL: a header line with the config hash, then one sequence per line."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {"type": "header", "config_hash": cfg.digest(), "config": asdict(cfg),
                  "walks_per_node": walks_per_node, "graph": graph_digest, **(extra or {})}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for seq in sequences:
            fh.write(json.dumps(_seq_to_json(seq), sort_keys=True) + "\n")


def read_walk_cache(path):
    """Return ``(header, sequences)``."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first.strip():
            raise InvariantError(f"{path}: empty walk cache")
        header = json.loads(first)
        if header.get("type") != "header":
            raise InvariantError(f"{path}: missing walk-cache header")
        seqs = [_seq_from_json(json.loads(line)) for line in fh if line.strip()]
    return header, seqs


def load_or_sample(path, g: TemporalMultigraph, starts: Sequence[int], cfg: WalkConfig,
                   walks_per_node: int) -> list:
    """Reuse the cache at ``path`` when its config hash and graph match; else resample."""
    cfg = cfg.resolved(g)
    digest = g.digest()
    p = Path(path)
    if p.exists():
        try:
            header, seqs = read_walk_cache(p)
        except (InvariantError, json.JSONDecodeError, KeyError):
            header, seqs = {}, []
        wanted = [int(s) for s in starts]
        got = [s.start for s in seqs[::max(walks_per_node, 1)]] if walks_per_node else []
        if (header.get("config_hash") == cfg.digest() and header.get("graph") == digest
                and header.get("walks_per_node") == walks_per_node and got == wanted):
            return seqs
    seqs = sample_dataset(g, starts, cfg, walks_per_node)
    write_walk_cache(p, seqs, cfg, walks_per_node, digest)
    return seqs


# -- estimator -----------------------------------------------------------------------------

class STRWalkSampler(TransformerMixin, BaseEstimator):
    """Turn account ids into STRWalk subgraph sequences.

    ``transform(accounts)`` returns a :class:`WalkSet` holding
    ``walks_per_node`` sequences per account, with ``groups[i]`` the
    position of the owning account in the input.
    """

    def __init__(self, graph: Optional[TemporalMultigraph] = None, structural_window: int = 10,
                 interval_width: int = 86_400, max_walk_len: int = 40, max_intervals: int = 32,
                 tau: Optional[float] = None, direction: str = "out", walks_per_node: int = 5,
                 seed: int = 0):
        self.graph = graph
        self.structural_window = structural_window
        self.interval_width = interval_width
        self.max_walk_len = max_walk_len
        self.max_intervals = max_intervals
        self.tau = tau
        self.direction = direction
        self.walks_per_node = walks_per_node
        self.seed = seed

    def walk_config(self) -> WalkConfig:
        return WalkConfig(max_walk_len=self.max_walk_len, structural_window=self.structural_window,
                          interval_width=self.interval_width, tau=self.tau,
                          max_intervals=self.max_intervals, seed=self.seed,
                          direction=self.direction)

    def fit(self, X=None, y=None):
        if self.graph is None:
            raise ConfigError("STRWalkSampler needs a graph")
        if self.walks_per_node < 0:
            raise ConfigError("walks_per_node must be >= 0")
        self.config_ = self.walk_config().resolved(self.graph)
        return self

    def transform(self, X) -> WalkSet:
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "config_")
        accounts = np.asarray(X, dtype=np.int64).reshape(-1)
        seqs = sample_dataset(self.graph, accounts, self.config_, self.walks_per_node)
        groups = np.repeat(np.arange(accounts.size), self.walks_per_node)
        return WalkSet(seqs, groups, accounts)
