"""The full network, its checkpoint format and the scikit-learn classifier."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .encoder import GatConfig, encode_batch, init_gat_params
from .exceptions import ConfigError
from .features import D_IN, FeatureBatch
from .metrics import weighted_f1
from .nn import Adam, ParamStore, Tape, Tensor, backward, ops
from .seqmodel import SeqConfig, forward_conventional, forward_transposed, init_seq_params

__all__ = ["ModelConfig", "ScamSweeperNet", "ScamSweeperClassifier", "save_checkpoint",
           "load_checkpoint", "ABLATIONS", "apply_ablation"]

ABLATIONS = ("none", "no_graph_layer", "conventional_transformer")


@dataclass(frozen=True)
class ModelConfig:
    n_max: int = 10
    d_in: int = D_IN
    hidden: int = 64
    heads: int = 4
    gat_layers: int = 1
    readout: str = "anchor"
    graph_layer: bool = True
    m_max: int = 32
    d_model: int = 64
    blocks: int = 2
    ffn_mult: int = 4
    head_depth: int = 1
    n_classes: int = 3
    mode: str = "transposed"
    dropout: float = 0.1
    attn_slope: float = 0.2

    def gat(self) -> GatConfig:
        return GatConfig(self.d_in, self.hidden, self.heads, self.gat_layers,
                         self.attn_slope, self.readout)

    def seq(self) -> SeqConfig:
        return SeqConfig(D=self.hidden, m_max=self.m_max, d=self.d_model, blocks=self.blocks,
                         ffn_mult=self.ffn_mult, head_depth=self.head_depth,
                         n_classes=self.n_classes, mode=self.mode, dropout=self.dropout)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def apply_ablation(cfg: ModelConfig, ablation: str) -> ModelConfig:
    if ablation == "none":
        return cfg
    if ablation == "no_graph_layer":
        return replace(cfg, graph_layer=False)
    if ablation == "conventional_transformer":
        return replace(cfg, mode="conventional")
    raise ConfigError(f"unknown ablation {ablation!r}; expected one of {ABLATIONS}")


class ScamSweeperNet:
    """Parameters plus the forward pass: features -> GAT -> Phi -> logits."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.params = ParamStore(np.random.default_rng(seed))
        self.params.zeros("agg.W", (cfg.n_max,))
        if cfg.graph_layer:
            init_gat_params(cfg.gat(), store=self.params)
        else:
            self.params.xavier("nograph.W", cfg.d_in, cfg.hidden)
            self.params.zeros("nograph.b", (cfg.hidden,))
        init_seq_params(cfg.seq(), store=self.params)

    def phi(self, batch: FeatureBatch) -> Tensor:
        return encode_batch(batch, self.params, self.cfg.gat(), self.cfg.graph_layer)

    def logits(self, batch: FeatureBatch, training: bool = False,
               rng: Optional[np.random.Generator] = None) -> Tensor:
        phi = self.phi(batch)
        fwd = forward_transposed if self.cfg.mode == "transposed" else forward_conventional
        return fwd(phi, batch.pad_mask, self.params, self.cfg.seq(), training, rng)

    def predict_walks(self, batch: FeatureBatch, chunk: int = 256) -> np.ndarray:
        """Class probabilities per walk, ``(S, C)``."""
        out = np.zeros((len(batch), self.cfg.n_classes))
        for lo in range(0, len(batch), chunk):
            part = batch.take(np.arange(lo, min(lo + chunk, len(batch))))
            out[lo:lo + len(part)] = ops.softmax(self.logits(part), axis=-1).data
        return out

    def round_to_f32(self) -> None:
        for t in self.params.values():
            t.data = t.data.astype(np.float32).astype(np.float64)


# -- checkpoint -------------------------------------------------------------------

_CKPT_MAGIC = b"SSCK"
_CKPT_VERSION = 1


def save_checkpoint(path, net: ScamSweeperNet, meta: Optional[dict] = None) -> None:
    """``SSCK`` magic, u32 header length, JSON header, then f32 little-endian blobs.

    The header records the config, parameter names and shapes in blob order,
    and any caller metadata (classes, walk/featurizer config, RNG state).
    """
    specs, blobs, offset = [], [], 0
    for name, t in net.params.items():
        blob = t.data.astype("<f4").tobytes()
        specs.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {"version": _CKPT_VERSION, "model_config": asdict(net.cfg),
              "config_hash": net.cfg.digest(), "params": specs, "meta": meta or {}}
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC + struct.pack("<I", len(hbytes)) + hbytes)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path, expected: Optional[ModelConfig] = None):
    """Return ``(net, header)``; raise ConfigError on a malformed file or mismatch."""
    buf = Path(path).read_bytes()
    if buf[:4] != _CKPT_MAGIC:
        raise ConfigError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack_from("<I", buf, 4)
    header = json.loads(buf[8:8 + hlen].decode("utf-8"))
    if header.get("version") != _CKPT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {header.get('version')}")
    cfg = ModelConfig.from_dict(header["model_config"])
    if expected is not None and expected != cfg:
        diff = {k: (v, getattr(cfg, k)) for k, v in asdict(expected).items()
                if getattr(cfg, k) != v}
        raise ConfigError(f"checkpoint/config mismatch: {diff}")
    net = ScamSweeperNet(cfg)
    body = buf[8 + hlen:]
    declared = [s["name"] for s in header["params"]]
    if declared != list(net.params):
        raise ConfigError(f"{path}: parameter list does not match config")
    for spec in header["params"]:
        t = net.params[spec["name"]]
        if tuple(spec["shape"]) != t.shape:
            raise ConfigError(f"{path}: shape mismatch for {spec['name']}")
        raw = np.frombuffer(body, dtype="<f4", count=int(np.prod(t.shape)), offset=spec["offset"])
        t.data = raw.astype(np.float64).reshape(t.shape)
    return net, header


# -- estimator ----------------------------------------------------------------------

def _balanced_weights(y: np.ndarray, n_classes: int) -> np.ndarray:
    counts = np.bincount(y, minlength=n_classes).astype(np.float64)
    w = np.where(counts > 0, counts.sum() / (n_classes * np.maximum(counts, 1)), 0.0)
    return w / w[counts > 0].mean()


def aggregate_by_group(walk_proba: np.ndarray, groups: np.ndarray, n_groups: int) -> np.ndarray:
    """Mean walk probability per account; accounts without walks get uniform rows."""
    C = walk_proba.shape[1]
    sums = np.zeros((n_groups, C))
    np.add.at(sums, groups, walk_proba)
    counts = np.bincount(groups, minlength=n_groups)[:, None].astype(np.float64)
    return np.where(counts > 0, sums / np.maximum(counts, 1), 1.0 / C)


class ScamSweeperClassifier(ClassifierMixin, BaseEstimator):
    """Account classifier over featurised STRWalk sequences.

    ``X`` is a :class:`~scamsweeper.features.FeatureBatch`; ``y`` holds one
    label per account (``X.n_accounts``). Walk-level probabilities are
    averaged per account before the argmax.

    Parameters
    ----------
    structural_window, m_max, hidden, heads, gat_layers, readout, graph_layer,
    mode, d_model, blocks, head_depth, dropout :
        Network shape; see :class:`ModelConfig`.
    lr, betas, epochs, batch_size :
        Adam settings and schedule.
    class_weight : {"balanced", None} or array of shape (n_classes,)
        Loss weights; "balanced" uses inverse class frequency over accounts.
    patience : int
        Epochs without validation improvement before stopping; only used when
        ``fit`` receives ``eval_set``. The best epoch's weights are restored.
    stop_metric : {"weighted_f1", "log_loss"}
        Validation score that drives early stopping, computed per account.
    seed : int
        Seeds initialisation, batch order and dropout.
    """

    def __init__(self, structural_window: int = 10, m_max: int = 32, hidden: int = 64,
                 heads: int = 4, gat_layers: int = 1, readout: str = "anchor",
                 graph_layer: bool = True, mode: str = "transposed", d_model: int = 64,
                 blocks: int = 2, head_depth: int = 1, dropout: float = 0.1, lr: float = 1e-3,
                 betas: tuple = (0.9, 0.999), epochs: int = 200, batch_size: int = 32,
                 class_weight="balanced", patience: int = 10, stop_metric: str = "weighted_f1",
                 seed: int = 0,
                 classes: Optional[Sequence] = None, verbose: int = 0):
        self.structural_window = structural_window
        self.m_max = m_max
        self.hidden = hidden
        self.heads = heads
        self.gat_layers = gat_layers
        self.readout = readout
        self.graph_layer = graph_layer
        self.mode = mode
        self.d_model = d_model
        self.blocks = blocks
        self.head_depth = head_depth
        self.dropout = dropout
        self.lr = lr
        self.betas = betas
        self.epochs = epochs
        self.batch_size = batch_size
        self.class_weight = class_weight
        self.patience = patience
        self.stop_metric = stop_metric
        self.seed = seed
        self.classes = classes
        self.verbose = verbose

    def model_config(self, n_classes: int) -> ModelConfig:
        return ModelConfig(n_max=self.structural_window, hidden=self.hidden, heads=self.heads,
                           gat_layers=self.gat_layers, readout=self.readout,
                           graph_layer=self.graph_layer, m_max=self.m_max,
                           d_model=self.d_model, blocks=self.blocks, head_depth=self.head_depth,
                           n_classes=n_classes, mode=self.mode, dropout=self.dropout)

    def _encode_labels(self, y) -> np.ndarray:
        lookup = {c: i for i, c in enumerate(self.classes_)}
        try:
            return np.array([lookup[v] for v in np.asarray(y).tolist()], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"label {exc.args[0]!r} not among classes {list(self.classes_)}") \
                from None

    def _check_batch(self, X) -> FeatureBatch:
        if not isinstance(X, FeatureBatch):
            raise TypeError(f"expected a FeatureBatch, got {type(X).__name__}")
        if X.x.shape[1:] != (self.m_max, self.structural_window, D_IN):
            raise ValueError(f"feature shape {X.x.shape[1:]} does not match "
                             f"(m_max={self.m_max}, structural_window={self.structural_window}, "
                             f"{D_IN})")
        return X

    def fit(self, X: FeatureBatch, y, eval_set: Optional[tuple] = None):
        X = self._check_batch(X)
        y = np.asarray(y)
        if y.shape[0] != X.n_accounts:
            raise ValueError(f"{y.shape[0]} labels for {X.n_accounts} accounts")
        self.classes_ = np.array(sorted(set(y.tolist())) if self.classes is None
                                 else list(self.classes))
        yi = self._encode_labels(y)
        C = len(self.classes_)
        if len(np.unique(yi)) < 2:
            raise ValueError("training data needs at least two classes")
        if len(X) == 0:
            raise ValueError("no training walks")
        if self.stop_metric not in ("weighted_f1", "log_loss"):
            raise ConfigError(f"unknown stop_metric {self.stop_metric!r}")

        if isinstance(self.class_weight, str):
            if self.class_weight != "balanced":
                raise ConfigError(f"unknown class_weight {self.class_weight!r}")
            weights = _balanced_weights(yi, C)
        elif self.class_weight is None:
            weights = np.ones(C)
        else:
            weights = np.asarray(self.class_weight, dtype=np.float64)

        self.net_ = ScamSweeperNet(self.model_config(C), seed=self.seed)
        opt = Adam(self.net_.params.values(), lr=self.lr, betas=self.betas)
        rng = np.random.default_rng(self.seed + 1)
        y_walk = yi[X.groups]
        S = len(X)
        self.loss_curve_ = []
        self.val_curve_ = []
        best, best_state, stale = -np.inf, None, 0
        for epoch in range(self.epochs):
            order = rng.permutation(S)
            total = 0.0
            for lo in range(0, S, self.batch_size):
                idx = order[lo:lo + self.batch_size]
                part = X.take(idx)
                opt.zero_grad()
                with Tape():
                    loss = ops.cross_entropy(self.net_.logits(part, True, rng), y_walk[idx], weights)
                backward(loss)
                opt.step()
                total += loss.item() * len(idx)
            self.loss_curve_.append(total / S)
            if eval_set is not None:
                Xv, yv = eval_set
                yv = self._encode_labels(yv)
                proba = self.predict_proba(Xv)
                f1 = weighted_f1(yv, np.argmax(proba, axis=1), C)
                nll = float(-np.mean(np.log(np.clip(proba[np.arange(len(yv)), yv], 1e-12, 1))))
                self.val_curve_.append(f1)
                score = f1 if self.stop_metric == "weighted_f1" else -nll
                if score > best:
                    best, best_state, stale = score, self.net_.params.state(), 0
                else:
                    stale += 1
                if self.verbose:
                    print(f"epoch {epoch:3d} loss {self.loss_curve_[-1]:.4f} val wF1 {f1:.4f} "
                          f"val nll {nll:.4f}")
                if stale >= self.patience:
                    break
            elif self.verbose:
                print(f"epoch {epoch:3d} loss {self.loss_curve_[-1]:.4f}")
        if best_state is not None:
            self.net_.params.load_state(best_state)
        self.n_epochs_ = len(self.loss_curve_)
        # checkpoints hold f32; keep in-memory predictions identical to reloaded ones
        self.net_.round_to_f32()
        return self

    def predict_walk_proba(self, X: FeatureBatch) -> np.ndarray:
        check_is_fitted(self, "net_")
        return self.net_.predict_walks(self._check_batch(X))

    def predict_proba(self, X: FeatureBatch) -> np.ndarray:
        proba = self.predict_walk_proba(X)
        return aggregate_by_group(proba, X.groups, X.n_accounts)

    def predict(self, X: FeatureBatch) -> np.ndarray:
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    @classmethod
    def from_net(cls, net: ScamSweeperNet, classes: Sequence, **kwargs) -> "ScamSweeperClassifier":
        c = net.cfg
        clf = cls(structural_window=c.n_max, m_max=c.m_max, hidden=c.hidden, heads=c.heads,
                  gat_layers=c.gat_layers, readout=c.readout, graph_layer=c.graph_layer,
                  mode=c.mode, d_model=c.d_model, blocks=c.blocks, head_depth=c.head_depth,
                  dropout=c.dropout, classes=list(classes), **kwargs)
        clf.classes_ = np.array(list(classes))
        clf.net_ = net
        return clf
