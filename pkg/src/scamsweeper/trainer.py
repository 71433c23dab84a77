"""Dataset assembly, account-level splits, training, evaluation and ablations."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import train_test_split
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from .exceptions import ConfigError, InvariantError
from .features import SubgraphFeaturizer
from .metrics import MetricsReport, classification_report
from .model import (ABLATIONS, ModelConfig, ScamSweeperClassifier, apply_ablation,
                    load_checkpoint, save_checkpoint)
from .strwalk import WalkConfig, WalkSet, load_or_sample, sample_dataset
from .txgraph import CLASS_LABELS, TemporalMultigraph

__all__ = [
    "LabeledDataset", "TrainConfig", "Split", "split_accounts", "check_split_hygiene",
    "TrainResult", "train", "evaluate", "save_result", "metrics_json", "probe_features",
    "degree_value_probe", "run_ablation", "ablation_table", "sample_walks",
]


def _sha(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class LabeledDataset:
    """Labelled accounts of one graph; ``accounts`` are node ids."""

    graph: TemporalMultigraph
    accounts: tuple
    labels: tuple

    def __post_init__(self):
        if len(self.accounts) != len(self.labels):
            raise ValueError("accounts and labels differ in length")
        if len(set(self.accounts)) != len(self.accounts):
            raise InvariantError("duplicate accounts in dataset")
        bad = set(self.labels) - set(CLASS_LABELS)
        if bad:
            raise ValueError(f"labels outside {CLASS_LABELS}: {sorted(bad)}")

    def __len__(self) -> int:
        return len(self.accounts)

    def digest(self) -> str:
        return _sha({"graph": self.graph.digest(), "accounts": list(map(int, self.accounts)),
                     "labels": list(self.labels)})

    @classmethod
    def from_graph(cls, g: TemporalMultigraph, normal_ratio: float = 1.0,
                   seed: int = 0) -> "LabeledDataset":
        """Every phishing/scam account plus a uniform sample of normal ones.

        The normal sample holds ``normal_ratio`` times the larger malicious
        class, capped at what is available; accounts without transactions are
        skipped.
        """
        labels = g.labels()
        active = np.array([g.incident(v)[0].size > 0 for v in range(g.n_nodes)])
        by_class = {c: [v for v in range(g.n_nodes) if labels[v] == c and active[v]]
                    for c in CLASS_LABELS}
        malicious = max(len(by_class["phishing"]), len(by_class["scam"]))
        n_norm = min(len(by_class["normal"]), int(round(normal_ratio * malicious)))
        rng = np.random.default_rng(seed)
        normals = sorted(rng.choice(by_class["normal"], size=n_norm, replace=False).tolist()) \
            if n_norm else []
        accounts = sorted(normals + by_class["phishing"] + by_class["scam"])
        return cls(g, tuple(int(a) for a in accounts), tuple(labels[a] for a in accounts))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    test_frac: float = 0.2
    val_frac: float = 0.15
    class_weight: str = "balanced"
    patience: int = 10
    stop_metric: str = "weighted_f1"
    ablation: str = "none"
    walks_per_node: int = 5
    normalization: str = "subgraph"

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; expected one of {ABLATIONS}")
        if not 0 < self.test_frac < 1 or not 0 <= self.val_frac < 1 \
                or self.test_frac + self.val_frac >= 1:
            raise ConfigError("split fractions must be in (0, 1) and sum below 1")
        if self.epochs < 1 or self.batch_size < 1 or self.walks_per_node < 1:
            raise ConfigError("epochs, batch_size and walks_per_node must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")


@dataclass(frozen=True)
class Split:
    """Positions into a :class:`LabeledDataset`, disjoint by construction."""

    train: tuple
    val: tuple
    test: tuple

    def as_dict(self) -> dict:
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test)}


def split_accounts(labels: Sequence[str], test_frac: float = 0.2, val_frac: float = 0.15,
                   seed: int = 0) -> Split:
    """Stratified account-level train/val/test split."""
    idx = np.arange(len(labels))
    y = np.asarray(labels)
    rest, test = train_test_split(idx, test_size=test_frac, stratify=y, random_state=seed)
    if val_frac > 0:
        train, val = train_test_split(rest, test_size=val_frac / (1 - test_frac),
                                      stratify=y[rest], random_state=seed)
    else:
        train, val = rest, np.array([], dtype=int)
    split = Split(tuple(sorted(map(int, train))), tuple(sorted(map(int, val))),
                  tuple(sorted(map(int, test))))
    check_split_hygiene(split)
    return split


def check_split_hygiene(split: Split, accounts: Optional[Sequence[int]] = None) -> None:
    """No account may sit in two partitions (by position, and by id if given)."""
    parts = [("train", split.train), ("val", split.val), ("test", split.test)]
    for keyed in ([p for _, p in parts],
                  [[accounts[i] for i in p] for _, p in parts] if accounts is not None else []):
        seen: dict = {}
        for (name, _), members in zip(parts, keyed):
            for a in members:
                if a in seen:
                    raise InvariantError(f"account {a} appears in both {seen[a]} and {name}")
                seen[a] = name


@dataclass
class TrainResult:
    classifier: ScamSweeperClassifier
    featurizer: SubgraphFeaturizer
    walk_config: WalkConfig
    train_config: TrainConfig
    split: Split
    report: MetricsReport
    metrics: dict
    loss_curve: list = field(default_factory=list)

    @property
    def model_config(self) -> ModelConfig:
        return self.classifier.net_.cfg


def _config_hash(walk_cfg: WalkConfig, model_cfg: ModelConfig, train_cfg: TrainConfig) -> str:
    return _sha({"walk": asdict(walk_cfg), "model": asdict(model_cfg), "train": asdict(train_cfg)})


def metrics_json(report: MetricsReport, config_hash: str, dataset_hash: str, seed: int) -> str:
    """Canonical metrics document; identical inputs give identical bytes."""
    doc = report.to_dict()
    doc.update({"config_hash": config_hash, "dataset_hash": dataset_hash, "seed": int(seed)})
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _walks_for(ds: LabeledDataset, positions: Sequence[int], all_walks: list,
               walks_per_node: int) -> WalkSet:
    seqs, groups = [], []
    for k, p in enumerate(positions):
        for w in range(walks_per_node):
            seqs.append(all_walks[p * walks_per_node + w])
            groups.append(k)
    return WalkSet(list(seqs), np.asarray(groups, dtype=np.int64),
                   np.asarray([ds.accounts[p] for p in positions], dtype=np.int64))


def sample_walks(ds: LabeledDataset, walk_cfg: WalkConfig, walks_per_node: int,
                 cache: Optional[str] = None) -> list:
    """Walks for every dataset account, ordered ``(account position, walk index)``."""
    if cache is not None:
        return load_or_sample(cache, ds.graph, ds.accounts, walk_cfg, walks_per_node)
    return sample_dataset(ds.graph, ds.accounts, walk_cfg, walks_per_node)


def train(ds: LabeledDataset, walk_cfg: WalkConfig, model_params: Optional[dict] = None,
          train_cfg: TrainConfig = TrainConfig(), walks: Optional[list] = None,
          split: Optional[Split] = None, verbose: int = 0) -> TrainResult:
    """Fit on the train split (early stopping on val) and report on test.

    ``model_params`` are extra :class:`ScamSweeperClassifier` arguments
    (``hidden``, ``d_model``, ...); the ablation in ``train_cfg`` is applied on
    top. ``walks`` may be supplied to share sampling across runs.
    """
    model_params = dict(model_params or {})
    walk_cfg = walk_cfg.resolved(ds.graph)
    if split is None:
        split = split_accounts(ds.labels, train_cfg.test_frac, train_cfg.val_frac, train_cfg.seed)
    check_split_hygiene(split, ds.accounts)
    if walks is None:
        walks = sample_walks(ds, walk_cfg, train_cfg.walks_per_node)
    wpn = train_cfg.walks_per_node
    if len(walks) != len(ds) * wpn:
        raise ValueError(f"expected {len(ds) * wpn} walks, got {len(walks)}")
    labels = np.asarray(ds.labels)
    m_max = model_params.get("m_max", 32)

    ws_train = _walks_for(ds, split.train, walks, wpn)
    feat = SubgraphFeaturizer(ds.graph, n_max=walk_cfg.structural_window, m_max=m_max,
                              normalization=train_cfg.normalization).fit(ws_train)
    X_train = feat.transform(ws_train)
    eval_set = None
    if split.val:
        eval_set = (feat.transform(_walks_for(ds, split.val, walks, wpn)), labels[list(split.val)])

    base = ScamSweeperClassifier(structural_window=walk_cfg.structural_window, **model_params)
    cfg = apply_ablation(base.model_config(len(CLASS_LABELS)), train_cfg.ablation)
    clf = ScamSweeperClassifier(
        structural_window=cfg.n_max, m_max=cfg.m_max, hidden=cfg.hidden, heads=cfg.heads,
        gat_layers=cfg.gat_layers, readout=cfg.readout, graph_layer=cfg.graph_layer,
        mode=cfg.mode, d_model=cfg.d_model, blocks=cfg.blocks, head_depth=cfg.head_depth,
        dropout=cfg.dropout, lr=train_cfg.lr, betas=tuple(train_cfg.betas),
        epochs=train_cfg.epochs, batch_size=train_cfg.batch_size,
        class_weight=train_cfg.class_weight, patience=train_cfg.patience,
        stop_metric=train_cfg.stop_metric, seed=train_cfg.seed,
        classes=list(CLASS_LABELS), verbose=verbose)
    clf.fit(X_train, labels[list(split.train)], eval_set=eval_set)

    X_test = feat.transform(_walks_for(ds, split.test, walks, wpn))
    report = classification_report(
        _codes(labels[list(split.test)]), _codes(clf.predict(X_test)), CLASS_LABELS)
    chash = _config_hash(walk_cfg, clf.net_.cfg, train_cfg)
    metrics = json.loads(metrics_json(report, chash, ds.digest(), train_cfg.seed))
    return TrainResult(clf, feat, walk_cfg, train_cfg, split, report, metrics,
                       list(clf.loss_curve_))


def _norm(v):
    return list(v) if isinstance(v, (tuple, list)) else v


def _codes(y) -> np.ndarray:
    lookup = {c: i for i, c in enumerate(CLASS_LABELS)}
    return np.array([lookup[v] for v in np.asarray(y).tolist()], dtype=np.int64)


def save_result(path, result: TrainResult, ds: LabeledDataset,
                extra_meta: Optional[dict] = None) -> None:
    """Checkpoint with everything :func:`evaluate` needs to rebuild the pipeline."""
    col = result.featurizer.col_range_
    meta = {
        "classes": list(CLASS_LABELS),
        "walk_config": asdict(result.walk_config),
        "featurizer": {"n_max": result.featurizer.n_max, "m_max": result.featurizer.m_max,
                       "normalization": result.featurizer.normalization,
                       "slope": result.featurizer.slope,
                       "col_range": None if col is None else [c.tolist() for c in col]},
        "train_config": asdict(result.train_config),
        "split": result.split.as_dict(),
        "dataset_hash": ds.digest(),
        "config_hash": result.metrics["config_hash"],
        **(extra_meta or {}),
    }
    save_checkpoint(path, result.classifier.net_, meta)


def evaluate(checkpoint, ds: LabeledDataset, split: str = "test",
             walks: Optional[list] = None, expected: Optional[dict] = None) -> tuple:
    """Rebuild the pipeline from a checkpoint and score one partition.

    ``expected`` maps walk, train or model config keys to the values the
    caller assumes; any disagreement with the checkpoint raises ConfigError.
    Returns ``(report, metrics_json_text)``.
    """
    net, header = load_checkpoint(checkpoint)
    meta = header["meta"]
    if expected:
        stored = {**header["model_config"], **meta["train_config"], **meta["walk_config"]}
        stored["structural_window"] = meta["walk_config"]["structural_window"]
        diff = {k: (v, stored[k]) for k, v in expected.items()
                if k in stored and k not in ("seed", "tau")
                and _norm(v) != _norm(stored[k])}
        if diff:
            raise ConfigError("checkpoint/config mismatch: " + ", ".join(
                f"{k} requested {a!r} but checkpoint has {b!r}" for k, (a, b) in sorted(diff.items())))
    if meta.get("dataset_hash") != ds.digest():
        raise ConfigError("checkpoint was trained on a different dataset")
    if split not in ("train", "val", "test"):
        raise ConfigError(f"unknown split {split!r}")
    positions = meta["split"][split]
    if not positions:
        raise ConfigError(f"split {split!r} is empty")
    wc = dict(meta["walk_config"])
    walk_cfg = WalkConfig(**wc)
    tc = meta["train_config"]
    tc["betas"] = tuple(tc["betas"])
    train_cfg = TrainConfig(**tc)
    wpn = train_cfg.walks_per_node
    if walks is None:
        walks = sample_walks(ds, walk_cfg, wpn)
    fm = meta["featurizer"]
    feat = SubgraphFeaturizer(ds.graph, n_max=fm["n_max"], m_max=fm["m_max"],
                              normalization=fm["normalization"], slope=fm["slope"])
    feat.col_range_ = None if fm["col_range"] is None else tuple(np.array(c) for c in
                                                                 fm["col_range"])
    clf = ScamSweeperClassifier.from_net(net, meta["classes"])
    X = feat.transform(_walks_for(ds, positions, walks, wpn))
    labels = np.asarray(ds.labels)[positions]
    report = classification_report(_codes(labels), _codes(clf.predict(X)), CLASS_LABELS)
    return report, metrics_json(report, meta["config_hash"], ds.digest(), train_cfg.seed)


# -- baseline -----------------------------------------------------------------------

def probe_features(g: TemporalMultigraph, accounts: Sequence[int]) -> np.ndarray:
    """Per-account ``log1p`` of in/out transfer counts and in/out ETH totals."""
    n = g.n_nodes
    in_cnt = np.bincount(g.dst, minlength=n)
    out_cnt = np.bincount(g.src, minlength=n)
    in_val = np.bincount(g.dst, weights=g.value_eth, minlength=n)
    out_val = np.bincount(g.src, weights=g.value_eth, minlength=n)
    a = np.asarray(accounts, dtype=np.int64)
    return np.log1p(np.stack([in_cnt[a], out_cnt[a], in_val[a], out_val[a]], axis=1))


def degree_value_probe(ds: LabeledDataset, split: Split, seed: int = 0) -> MetricsReport:
    """Balanced logistic regression on degree and value totals; scored on test."""
    X = probe_features(ds.graph, ds.accounts)
    y = _codes(ds.labels)
    fit_idx = list(split.train) + list(split.val)
    clf = make_pipeline(StandardScaler(),
                        LogisticRegression(class_weight="balanced", max_iter=2000,
                                           random_state=seed))
    clf.fit(X[fit_idx], y[fit_idx])
    test = list(split.test)
    return classification_report(y[test], clf.predict(X[test]), CLASS_LABELS)


# -- ablations ----------------------------------------------------------------------

def run_ablation(ds: LabeledDataset, walk_cfg: WalkConfig, model_params: Optional[dict] = None,
                 train_cfg: TrainConfig = TrainConfig(), seeds: Sequence[int] = (0,),
                 ablations: Sequence[str] = ABLATIONS, walks: Optional[list] = None,
                 verbose: int = 0) -> list:
    """Train each ablation under shared walks and per-seed shared splits.

    Returns one row per (seed, ablation) with the test weighted F1 and its
    difference from the full model under the same seed.
    """
    if "none" not in ablations:
        ablations = ("none",) + tuple(ablations)
    walk_cfg = walk_cfg.resolved(ds.graph)
    if walks is None:
        walks = sample_walks(ds, walk_cfg, train_cfg.walks_per_node)
    rows = []
    for seed in seeds:
        tc = replace(train_cfg, seed=int(seed))
        split = split_accounts(ds.labels, tc.test_frac, tc.val_frac, tc.seed)
        scores = {}
        for ab in ablations:
            res = train(ds, walk_cfg, model_params, replace(tc, ablation=ab), walks=walks,
                        split=split, verbose=verbose)
            scores[ab] = res.report.weighted_f1
        for ab in ablations:
            rows.append({"seed": int(seed), "ablation": ab,
                         "structural_window": walk_cfg.structural_window,
                         "weighted_f1": scores[ab], "delta_vs_full": scores[ab] - scores["none"]})
    return rows


def ablation_table(rows: Sequence[dict]) -> str:
    lines = [f"{'window':>6} {'seed':>4} {'ablation':<26} {'weighted_f1':>11} {'delta':>8}"]
    for r in rows:
        lines.append(f"{r['structural_window']:>6} {r['seed']:>4} {r['ablation']:<26} "
                     f"{r['weighted_f1']:>11.4f} {r['delta_vs_full']:>+8.4f}")
    return "\n".join(lines)
