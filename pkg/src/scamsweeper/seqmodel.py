"""Transformer classifiers over the subgraph feature sequence ``Phi``.

Two token layouts share the attention blocks and the classification head:

* ``transposed``: each of the ``D`` feature channels is a token, embedded
  from its length-``m_max`` temporal profile; attention runs across channels.
* ``conventional``: each interval is a token (``D -> d`` projection plus
  sinusoidal positions); attention runs across time under the pad mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .nn import ParamStore, Tensor, ops

__all__ = [
    "SeqConfig", "init_seq_params", "pad_sequence", "attention", "attention_block",
    "forward_transposed", "forward_conventional", "classification_head",
    "sinusoidal_positions",
]


@dataclass(frozen=True)
class SeqConfig:
    D: int = 64
    m_max: int = 32
    d: int = 64
    blocks: int = 2
    ffn_mult: int = 4
    head_depth: int = 1
    n_classes: int = 3
    mode: str = "transposed"
    dropout: float = 0.1
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.mode not in ("transposed", "conventional"):
            raise ValueError(f"mode must be 'transposed' or 'conventional', got {self.mode!r}")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")


def init_seq_params(cfg: SeqConfig, rng: Optional[np.random.Generator] = None,
                    store: Optional[ParamStore] = None) -> ParamStore:
    store = store if store is not None else ParamStore(rng)
    d = cfg.d
    if cfg.mode == "transposed":
        store.xavier("embed.W", cfg.m_max, d)
        n_tokens = cfg.D
    else:
        store.xavier("embed.W", cfg.D, d)
        n_tokens = cfg.m_max
    store.zeros("embed.b", (d,))
    for b in range(cfg.blocks):
        p = f"block{b}."
        store.ones(p + "ln1.g", (d,))
        store.zeros(p + "ln1.b", (d,))
        store.xavier(p + "Wq", d, d)
        store.xavier(p + "Wk", d, d)
        store.xavier(p + "Wv", d, d)
        store.ones(p + "ln2.g", (d,))
        store.zeros(p + "ln2.b", (d,))
        store.xavier(p + "ffn.W1", d, cfg.ffn_mult * d)
        store.zeros(p + "ffn.b1", (cfg.ffn_mult * d,))
        store.xavier(p + "ffn.W2", cfg.ffn_mult * d, d)
        store.zeros(p + "ffn.b2", (d,))
    store.ones("ln_f.g", (d,))
    store.zeros("ln_f.b", (d,))
    if cfg.mode == "transposed":
        store.add("tokens.w", np.full(n_tokens, 1.0 / n_tokens))
        store.zeros("tokens.b", (d,))
    for i in range(cfg.head_depth):
        store.xavier(f"deep{i}.W", d, d)
        store.zeros(f"deep{i}.b", (d,))
    store.xavier("proj.W1", d, d)
    store.zeros("proj.b1", (d,))
    store.xavier("proj.W2", d, cfg.n_classes)
    store.zeros("proj.b2", (cfg.n_classes,))
    return store


def pad_sequence(Phi: np.ndarray, m_max: int):
    """Fixed ``(m_max, D)`` view of a variable-length ``Phi`` plus its row mask.

    Longer sequences keep their most recent ``m_max`` rows. An empty sequence
    becomes one zero row marked true, so every item has a real position.
    """
    Phi = np.asarray(Phi, dtype=np.float64)
    m, D = Phi.shape
    out = np.zeros((m_max, D))
    mask = np.zeros(m_max, dtype=bool)
    if m == 0:
        mask[0] = True
        return out, mask
    keep = Phi[-m_max:]
    out[:keep.shape[0]] = keep
    mask[:keep.shape[0]] = True
    return out, mask


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10_000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def attention(q: Tensor, k: Tensor, v: Tensor, key_mask: Optional[np.ndarray] = None):
    """Scaled dot-product attention; returns ``(output, weights)``.

    ``key_mask`` is ``(B, T)`` with True for keys that may be attended.
    """
    d = q.shape[-1]
    scores = ops.mul(ops.matmul(q, ops.swapaxes(k, -1, -2)), 1.0 / math.sqrt(d))
    mask = None if key_mask is None else np.asarray(key_mask, dtype=bool)[..., None, :]
    weights = ops.softmax(scores, axis=-1, mask=mask)
    return ops.matmul(weights, v), weights


def attention_block(tokens: Tensor, key_mask: Optional[np.ndarray], params: ParamStore,
                    index: int, cfg: SeqConfig, training: bool = False,
                    rng: Optional[np.random.Generator] = None) -> Tensor:
    """Pre-norm block: LN -> self-attention -> residual, LN -> FFN -> residual."""
    p = f"block{index}."
    h = ops.layer_norm(tokens, params[p + "ln1.g"], params[p + "ln1.b"], cfg.ln_eps)
    q = ops.matmul(h, params[p + "Wq"])
    k = ops.matmul(h, params[p + "Wk"])
    v = ops.matmul(h, params[p + "Wv"])
    att, _ = attention(q, k, v, key_mask)
    x = ops.add(tokens, ops.dropout(att, cfg.dropout, rng, training))
    h = ops.layer_norm(x, params[p + "ln2.g"], params[p + "ln2.b"], cfg.ln_eps)
    h = ops.gelu(ops.linear(h, params[p + "ffn.W1"], params[p + "ffn.b1"]))
    h = ops.linear(h, params[p + "ffn.W2"], params[p + "ffn.b2"])
    return ops.add(x, ops.dropout(h, cfg.dropout, rng, training))


def classification_head(z: Tensor, params: ParamStore, cfg: SeqConfig) -> Tensor:
    """Hidden nonlinear layer(s) then the two-layer projection to class logits."""
    for i in range(cfg.head_depth):
        z = ops.gelu(ops.linear(z, params[f"deep{i}.W"], params[f"deep{i}.b"]))
    z = ops.gelu(ops.linear(z, params["proj.W1"], params["proj.b1"]))
    return ops.linear(z, params["proj.W2"], params["proj.b2"])


def forward_transposed(Phi_pad, mask: np.ndarray, params: ParamStore, cfg: SeqConfig,
                       training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Class logits ``(B, C)`` from ``Phi_pad (B, m_max, D)`` and pad mask ``(B, m_max)``."""
    Phi = Phi_pad if isinstance(Phi_pad, Tensor) else Tensor(Phi_pad)
    Phi = ops.masked_fill(Phi, np.asarray(mask, dtype=bool)[..., None], 0.0)
    channels = ops.swapaxes(Phi, -1, -2)  # (B, D, m_max)
    tok = ops.linear(channels, params["embed.W"], params["embed.b"])  # (B, D, d)
    for b in range(cfg.blocks):
        tok = attention_block(tok, None, params, b, cfg, training, rng)
    tok = ops.layer_norm(tok, params["ln_f.g"], params["ln_f.b"], cfg.ln_eps)
    # learnable linear aggregation across channel tokens
    w = ops.reshape(params["tokens.w"], (1, 1, cfg.D))
    z = ops.add(ops.reshape(ops.matmul(w, tok), (tok.shape[0], cfg.d)), params["tokens.b"])
    return classification_head(z, params, cfg)


def forward_conventional(Phi_pad, mask: np.ndarray, params: ParamStore, cfg: SeqConfig,
                         training: bool = False,
                         rng: Optional[np.random.Generator] = None) -> Tensor:
    """Temporal-token Transformer ablation with masked mean pooling."""
    Phi = Phi_pad if isinstance(Phi_pad, Tensor) else Tensor(Phi_pad)
    mask = np.asarray(mask, dtype=bool)
    tok = ops.linear(Phi, params["embed.W"], params["embed.b"])  # (B, m_max, d)
    tok = ops.add(tok, sinusoidal_positions(cfg.m_max, cfg.d))
    for b in range(cfg.blocks):
        tok = attention_block(tok, mask, params, b, cfg, training, rng)
    tok = ops.layer_norm(tok, params["ln_f.g"], params["ln_f.b"], cfg.ln_eps)
    m = mask.astype(np.float64)[..., None]
    tok = ops.masked_fill(tok, mask[..., None], 0.0)
    z = ops.div(ops.sum(tok, axis=-2), m.sum(axis=-2))
    return classification_head(z, params, cfg)
