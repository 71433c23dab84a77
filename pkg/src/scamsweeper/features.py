"""Per-subgraph feature matrices and neighbour alignment.

Each sampled edge of a subgraph contributes one neighbour row made of the
counterparty's value statistics, its timing statistics and the edge's own
features, nine columns in all::

    [log_in, log_out, log_count | first_seen, last_seen, mean_gap | log_value, t_norm, outgoing]

Rows are min-max scaled per column, passed through LeakyReLU and
zero-padded to ``n_max`` rows. The anchor row is a learnable
softmax-weighted combination of the neighbour rows and is built inside the
model (see :func:`aggregate`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import ConfigError
from .strwalk import Subgraph, SubgraphSequence, WalkSet
from .txgraph import WEI_PER_ETH, TemporalMultigraph

__all__ = [
    "EDGE_COLUMNS", "NODE_VALUE_COLUMNS", "NODE_TIME_COLUMNS", "D_IN", "EdgeFeatures",
    "NodeFeatures", "FeatureBatch", "build_edge_features", "build_node_features",
    "aggregate", "masked_softmax_weights", "align_neighbors", "neighbor_rows",
    "SubgraphFeaturizer",
]

NODE_VALUE_COLUMNS = ("log_total_in", "log_total_out", "log_tx_count")
NODE_TIME_COLUMNS = ("first_seen", "last_seen", "mean_gap")
EDGE_COLUMNS = ("log_value", "t_norm", "outgoing")
D_IN = len(NODE_VALUE_COLUMNS) + len(NODE_TIME_COLUMNS) + len(EDGE_COLUMNS)


@dataclass
class EdgeFeatures:
    E: np.ndarray  # (n, 3)

    @property
    def n(self) -> int:
        return self.E.shape[0]


@dataclass
class NodeFeatures:
    X_f: np.ndarray  # (n, 3) value-derived
    X_t: np.ndarray  # (n, 3) time-derived

    @property
    def n(self) -> int:
        return self.X_f.shape[0]


def build_edge_features(sg: Subgraph, interval: tuple) -> EdgeFeatures:
    t_lo, t_hi = interval
    width = float(t_hi - t_lo)
    rows = np.zeros((len(sg.edges), len(EDGE_COLUMNS)))
    for i, (src, _dst, value, ts) in enumerate(sg.edges):
        rows[i, 0] = np.log10(1.0 + value / WEI_PER_ETH)
        rows[i, 1] = (ts - t_lo) / width
        rows[i, 2] = 1.0 if src == sg.anchor else 0.0
    return EdgeFeatures(rows)


def build_node_features(g: TemporalMultigraph, sg: Subgraph, interval: tuple) -> NodeFeatures:
    """Counterparty statistics over its whole activity inside ``interval``.

    One row per sampled edge (the edge's non-anchor endpoint), so rows line
    up with :func:`build_edge_features`.
    """
    t_lo, t_hi = interval
    width = float(t_hi - t_lo)
    n = len(sg.edges)
    X_f = np.zeros((n, len(NODE_VALUE_COLUMNS)))
    X_t = np.zeros((n, len(NODE_TIME_COLUMNS)))
    cache: dict[int, tuple] = {}
    for i, (src, dst, _value, _ts) in enumerate(sg.edges):
        nb = dst if src == sg.anchor else src
        if nb not in cache:
            eids = g.window_edges(nb, t_lo, t_hi, "both")
            times = g.ts[eids]
            vals = g.value_eth[eids]
            incoming = g.dst[eids] == nb
            outgoing = g.src[eids] == nb
            gaps = np.diff(times)
            cache[nb] = (
                np.log10(1.0 + vals[incoming].sum()),
                np.log10(1.0 + vals[outgoing].sum()),
                np.log10(1.0 + eids.size),
                (times[0] - t_lo) / width if eids.size else 0.0,
                (times[-1] - t_lo) / width if eids.size else 0.0,
                gaps.mean() / width if gaps.size else 0.0,
            )
        s = cache[nb]
        X_f[i] = s[:3]
        X_t[i] = s[3:]
    return NodeFeatures(X_f, X_t)


def neighbor_rows(nf: NodeFeatures, ef: EdgeFeatures) -> np.ndarray:
    if nf.n != ef.n:
        raise ValueError(f"node rows ({nf.n}) and edge rows ({ef.n}) disagree")
    return np.concatenate([nf.X_f, nf.X_t, ef.E], axis=1)


def masked_softmax_weights(W: np.ndarray, n: int) -> np.ndarray:
    """softmax(W[:n]) padded with zeros to ``len(W)``."""
    W = np.asarray(W, dtype=np.float64)
    out = np.zeros_like(W)
    if n > 0:
        z = W[:n] - W[:n].max()
        e = np.exp(z)
        out[:n] = e / e.sum()
    return out


def aggregate(W: np.ndarray, M: np.ndarray) -> np.ndarray:
    """``softmax(W[:n]) @ M`` for the ``n`` rows of ``M``; a zero row when ``n == 0``."""
    M = np.asarray(M, dtype=np.float64)
    n = M.shape[0]
    if n > len(W):
        raise ValueError(f"{n} rows exceed n_max={len(W)}")
    if n == 0:
        return np.zeros((1, M.shape[1]))
    return masked_softmax_weights(W, n)[:n][None, :] @ M


def _minmax(rows: np.ndarray, lo: Optional[np.ndarray] = None,
            hi: Optional[np.ndarray] = None) -> np.ndarray:
    if rows.shape[0] == 0:
        return rows
    lo = rows.min(axis=0) if lo is None else lo
    hi = rows.max(axis=0) if hi is None else hi
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, np.clip((rows - lo) / safe, 0.0, 1.0), 0.0)


def _leaky(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def align_neighbors(nf: NodeFeatures, ef: EdgeFeatures, n_max: int,
                    W: Optional[np.ndarray] = None, slope: float = 0.01,
                    col_range: Optional[tuple] = None) -> np.ndarray:
    """Fixed-shape ``(n_max + 1, D_IN)`` matrix for one subgraph.

    Neighbour rows are min-max scaled per column (over this subgraph, or over
    ``col_range=(lo, hi)`` when given), LeakyReLU-activated and zero-padded.
    Row 0 is the anchor: ``aggregate(W, rows)``, with uniform weights when
    ``W`` is None. With no neighbours every row is zero.
    """
    rows = neighbor_rows(nf, ef)
    n = rows.shape[0]
    if n > n_max:
        raise ValueError(f"{n} neighbour rows exceed n_max={n_max}")
    lo, hi = col_range if col_range is not None else (None, None)
    rows = _leaky(_minmax(rows, lo, hi), slope)
    out = np.zeros((n_max + 1, D_IN))
    out[1:n + 1] = rows
    W = np.zeros(n_max) if W is None else np.asarray(W, dtype=np.float64)
    out[0] = aggregate(W, rows)[0] if n else 0.0
    return out


@dataclass
class FeatureBatch:
    """Padded neighbour rows for a set of walks.

    x : (S, m_max, n_max, D_IN) aligned neighbour rows (anchor row excluded)
    node_mask : (S, m_max, n_max) true neighbour rows
    interval_mask : (S, m_max) true subgraphs
    lengths : (S,) true subgraph count after truncation
    groups : (S,) owning account position
    """

    x: np.ndarray
    node_mask: np.ndarray
    interval_mask: np.ndarray
    lengths: np.ndarray
    groups: np.ndarray
    n_accounts: int

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def pad_mask(self) -> np.ndarray:
        """Interval mask with row 0 forced true for empty walks."""
        m = self.interval_mask.copy()
        m[self.lengths == 0, 0] = True
        return m

    def take(self, idx) -> "FeatureBatch":
        idx = np.asarray(idx)
        return FeatureBatch(self.x[idx], self.node_mask[idx], self.interval_mask[idx],
                            self.lengths[idx], self.groups[idx], self.n_accounts)

    def select_accounts(self, accounts: Sequence[int]) -> "FeatureBatch":
        """Walks of the given account positions, regrouped to ``0..len(accounts)-1``."""
        accounts = np.asarray(accounts, dtype=np.int64)
        remap = -np.ones(self.n_accounts, dtype=np.int64)
        remap[accounts] = np.arange(accounts.size)
        keep = np.flatnonzero(remap[self.groups] >= 0)
        out = self.take(keep)
        out.groups = remap[self.groups[keep]]
        out.n_accounts = int(accounts.size)
        return out


class SubgraphFeaturizer(TransformerMixin, BaseEstimator):
    """Turn a :class:`WalkSet` into a :class:`FeatureBatch`.

    Parameters
    ----------
    graph : TemporalMultigraph
    n_max : int
        Neighbour rows per subgraph; the structural window.
    m_max : int
        Subgraphs kept per walk (the most recent ones).
    normalization : {"subgraph", "global"}
        Scope of the min-max scaling. ``"global"`` learns column ranges in
        :meth:`fit`.
    slope : float
        LeakyReLU slope.
    """

    def __init__(self, graph: Optional[TemporalMultigraph] = None, n_max: int = 10,
                 m_max: int = 32, normalization: str = "subgraph", slope: float = 0.01):
        self.graph = graph
        self.n_max = n_max
        self.m_max = m_max
        self.normalization = normalization
        self.slope = slope

    def _raw(self, sg: Subgraph, interval) -> np.ndarray:
        return neighbor_rows(build_node_features(self.graph, sg, interval),
                             build_edge_features(sg, interval))

    def _iter_subgraphs(self, walks):
        seqs = walks.sequences if isinstance(walks, WalkSet) else walks
        for seq in seqs:
            for sg, iv in zip(seq.subgraphs[-self.m_max:], seq.interval_bounds[-self.m_max:]):
                yield sg, iv

    def fit(self, X, y=None):
        if self.graph is None:
            raise ConfigError("SubgraphFeaturizer needs a graph")
        if self.normalization not in ("subgraph", "global"):
            raise ConfigError(f"normalization must be 'subgraph' or 'global', "
                              f"got {self.normalization!r}")
        if self.normalization == "global":
            lo = np.full(D_IN, np.inf)
            hi = np.full(D_IN, -np.inf)
            for sg, iv in self._iter_subgraphs(X):
                r = self._raw(sg, iv)
                if r.size:
                    lo = np.minimum(lo, r.min(axis=0))
                    hi = np.maximum(hi, r.max(axis=0))
            lo[~np.isfinite(lo)] = 0.0
            hi[~np.isfinite(hi)] = 0.0
            self.col_range_ = (lo, hi)
        else:
            self.col_range_ = None
        return self

    def transform(self, X) -> FeatureBatch:
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "col_range_")
        if isinstance(X, WalkSet):
            seqs, groups, n_acc = X.sequences, np.asarray(X.groups), X.n_accounts
        else:
            seqs = list(X)
            groups, n_acc = np.arange(len(seqs)), len(seqs)
        S = len(seqs)
        x = np.zeros((S, self.m_max, self.n_max, D_IN))
        node_mask = np.zeros((S, self.m_max, self.n_max), dtype=bool)
        interval_mask = np.zeros((S, self.m_max), dtype=bool)
        lengths = np.zeros(S, dtype=np.int64)
        for s, seq in enumerate(seqs):
            subs = seq.subgraphs[-self.m_max:]
            ivs = seq.interval_bounds[-self.m_max:]
            lengths[s] = len(subs)
            for i, (sg, iv) in enumerate(zip(subs, ivs)):
                r = self._raw(sg, iv)
                n = r.shape[0]
                if n > self.n_max:
                    raise ValueError(f"subgraph with {n} edges exceeds n_max={self.n_max}")
                lo, hi = self.col_range_ if self.col_range_ is not None else (None, None)
                x[s, i, :n] = _leaky(_minmax(r, lo, hi), self.slope)
                node_mask[s, i, :n] = True
                interval_mask[s, i] = True
        return FeatureBatch(x, node_mask, interval_mask, lengths, groups, n_acc)
