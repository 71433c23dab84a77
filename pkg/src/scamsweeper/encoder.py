"""Graph-attention encoding of subgraphs into the sequence feature ``Phi``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .features import D_IN, FeatureBatch, SubgraphFeaturizer
from .nn import ParamStore, Tensor, ops
from .strwalk import SubgraphSequence

__all__ = [
    "GatConfig", "SequenceFeature", "init_gat_params", "star_adjacency", "with_anchor",
    "build_aligned", "gat_forward", "no_graph_forward", "readout", "encode_batch",
    "encode_sequence",
]


@dataclass(frozen=True)
class GatConfig:
    d_in: int = D_IN
    hidden: int = 64
    heads: int = 4
    layers: int = 1
    attn_slope: float = 0.2
    readout: str = "anchor"

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError(f"hidden={self.hidden} not divisible by heads={self.heads}")
        if self.readout not in ("anchor", "mean"):
            raise ValueError(f"readout must be 'anchor' or 'mean', got {self.readout!r}")


@dataclass
class SequenceFeature:
    Phi: np.ndarray  # (m, D); one zero row when true_len == 0
    true_len: int


def init_gat_params(cfg: GatConfig, rng: Optional[np.random.Generator] = None,
                    store: Optional[ParamStore] = None, prefix: str = "gat") -> ParamStore:
    store = store if store is not None else ParamStore(rng)
    f = cfg.hidden // cfg.heads
    d = cfg.d_in
    for l in range(cfg.layers):
        store.xavier(f"{prefix}{l}.W", d, cfg.hidden, gain=1.414)
        store.xavier(f"{prefix}{l}.a_src", f, 1, gain=1.414, shape=(cfg.heads, f, 1))
        store.xavier(f"{prefix}{l}.a_dst", f, 1, gain=1.414, shape=(cfg.heads, f, 1))
        store.zeros(f"{prefix}{l}.b", (cfg.hidden,))
        d = cfg.hidden
    return store


def star_adjacency(node_mask: np.ndarray) -> np.ndarray:
    """Anchor (row 0) linked to every true node, plus self-loops everywhere.

    Padded nodes only see themselves, which keeps their softmax finite; their
    outputs are zeroed afterwards.
    """
    m = np.asarray(node_mask, dtype=bool)
    n = m.shape[-1]
    eye = np.eye(n, dtype=bool)
    hub = np.zeros((n, n), dtype=bool)
    hub[0, :] = True
    hub[:, 0] = True
    return eye | (hub & m[..., :, None] & m[..., None, :])


def with_anchor(node_mask: np.ndarray) -> np.ndarray:
    """Prepend an always-true anchor column to a neighbour mask."""
    shape = node_mask.shape[:-1] + (1,)
    return np.concatenate([np.ones(shape, dtype=bool), node_mask], axis=-1)


def build_aligned(rows, node_mask: np.ndarray, W: Tensor) -> Tensor:
    """Prepend the learnable anchor row ``softmax(W[:n]) @ rows`` to ``rows``.

    rows : (..., n_max, d) aligned neighbour rows; padded rows are zeroed here.
    """
    rows = rows if isinstance(rows, Tensor) else Tensor(rows)
    rows = ops.masked_fill(rows, node_mask[..., None], 0.0)
    has_any = node_mask.any(axis=-1, keepdims=True)
    # empty neighbourhoods: any finite weights over the zeroed rows give a zero anchor
    mask = node_mask | ~has_any
    n_max = node_mask.shape[-1]
    logits = ops.reshape(W, (1,) * (node_mask.ndim - 1) + (1, n_max))
    weights = ops.softmax(ops.add(logits, np.zeros(node_mask.shape[:-1] + (1, n_max))),
                          axis=-1, mask=mask[..., None, :])
    anchor = ops.matmul(weights, rows)
    return ops.concat([anchor, rows], axis=-2)


def gat_forward(x, adj: np.ndarray, params: ParamStore, cfg: GatConfig,
                node_mask: Optional[np.ndarray] = None, prefix: str = "gat") -> Tensor:
    """Multi-head GAT over ``(..., N, d_in)`` node rows with adjacency ``(..., N, N)``.

    Attention logits ``LeakyReLU(a_src.Wh_i + a_dst.Wh_j)`` are softmaxed over
    each node's neighbourhood, heads are concatenated and passed through ELU.
    Rows outside ``node_mask`` come out as exact zeros. Without a mask, a
    node counts as real when it links to anything besides itself; row 0 is
    always real.
    """
    h = x if isinstance(x, Tensor) else Tensor(x)
    adj = np.asarray(adj, dtype=bool)
    if node_mask is None:
        real = adj.sum(axis=-1) > 1
        real[..., 0] = True
    else:
        real = np.asarray(node_mask, dtype=bool)
    f = cfg.hidden // cfg.heads
    for l in range(cfg.layers):
        W = params[f"{prefix}{l}.W"]
        H = ops.matmul(h, W)
        lead = H.shape[:-1]
        Hh = ops.swapaxes(ops.reshape(H, lead + (cfg.heads, f)), -3, -2)  # (..., heads, N, f)
        s_src = ops.matmul(Hh, params[f"{prefix}{l}.a_src"])  # (..., heads, N, 1)
        s_dst = ops.swapaxes(ops.matmul(Hh, params[f"{prefix}{l}.a_dst"]), -1, -2)
        e = ops.leaky_relu(ops.add(s_src, s_dst), cfg.attn_slope)
        alpha = ops.softmax(e, axis=-1, mask=adj[..., None, :, :])
        out = ops.matmul(alpha, Hh)  # (..., heads, N, f)
        out = ops.reshape(ops.swapaxes(out, -3, -2), lead + (cfg.hidden,))
        out = ops.elu(ops.add(out, params[f"{prefix}{l}.b"]))
        h = ops.masked_fill(out, real[..., None], 0.0)
    return h


def no_graph_forward(x, node_mask: np.ndarray, params: ParamStore,
                     prefix: str = "nograph") -> Tensor:
    """Ablation: masked mean of the node rows followed by a linear map."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    m = node_mask.astype(np.float64)[..., None]
    pooled = ops.div(ops.sum(ops.mul(x, m), axis=-2), np.maximum(m.sum(axis=-2), 1.0))
    return ops.linear(pooled, params[f"{prefix}.W"], params[f"{prefix}.b"])


def readout(nodes: Tensor, node_mask: np.ndarray, mode: str = "anchor") -> Tensor:
    """Subgraph vector from node embeddings ``(..., N, D)``."""
    if mode == "anchor":
        return nodes[..., 0, :]
    if mode == "mean":
        m = np.asarray(node_mask, dtype=np.float64)[..., None]
        if np.any(m.sum(axis=-2) == 0):
            raise ValueError("mean readout needs at least one true node")
        return ops.div(ops.sum(ops.mul(nodes, m), axis=-2), m.sum(axis=-2))
    raise ValueError(f"unknown readout mode {mode!r}")


def encode_batch(batch: FeatureBatch, params: ParamStore, cfg: GatConfig,
                 graph_layer: bool = True) -> Tensor:
    """``Phi`` for every walk: ``(S, m_max, D)``, zero rows beyond each walk's length."""
    full_mask = with_anchor(batch.node_mask)
    aligned = build_aligned(batch.x, batch.node_mask, params["agg.W"])
    if graph_layer:
        nodes = gat_forward(aligned, star_adjacency(full_mask), params, cfg, full_mask)
        h = readout(nodes, full_mask, cfg.readout)
    else:
        h = no_graph_forward(aligned, full_mask, params)
    return ops.masked_fill(h, batch.interval_mask[..., None], 0.0)


def encode_sequence(seq: SubgraphSequence, featurizer: SubgraphFeaturizer,
                    params: ParamStore, cfg: GatConfig, graph_layer: bool = True) -> SequenceFeature:
    """``Phi`` of one walk, rows in interval order (no padding)."""
    order = np.argsort([b[0] for b in seq.interval_bounds], kind="stable")
    seq = SubgraphSequence(seq.start, tuple(seq.subgraphs[i] for i in order),
                           tuple(seq.interval_bounds[i] for i in order))
    m = min(len(seq), featurizer.m_max)
    if m == 0:
        return SequenceFeature(np.zeros((1, cfg.hidden)), 0)
    batch = featurizer.transform([seq])
    phi = encode_batch(batch, params, cfg, graph_layer).data[0, :m]
    return SequenceFeature(phi, m)
