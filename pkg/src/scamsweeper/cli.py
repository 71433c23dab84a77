"""Command-line entry point: ``scamsweeper {synth,ingest,sample,train,eval,ablate}``.

Every command writes into ``--out`` through a staging directory that is
moved into place only after the command succeeds, together with a
``manifest.json`` describing the run. Failures print one JSON line on
stderr and exit with 2 (missing file), 3 (configuration) or 4 (data
invariant violated).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import shutil
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .exceptions import ConfigError, InvariantError
from .strwalk import WalkConfig, write_walk_cache
from .synthgen import SynthConfig, export, generate
from .trainer import (LabeledDataset, TrainConfig, ablation_table, degree_value_probe, evaluate,
                      metrics_json, run_ablation, sample_walks, save_result, split_accounts,
                      train)
from .txgraph import degree_stats, ingest, read_graph, write_graph

EXIT_OK, EXIT_MISSING, EXIT_CONFIG, EXIT_INVARIANT = 0, 2, 3, 4

_MODEL_KEYS = {"hidden": int, "heads": int, "gat_layers": int, "readout": str, "m_max": int,
               "d_model": int, "blocks": int, "head_depth": int, "dropout": float}
_WALK_KEYS = ("structural_window", "interval_width", "max_walk_len", "max_intervals", "tau",
              "direction")
_EXTRA_KEYS = {"normal_ratio": float, "dataset_seed": int, "seeds": "ints",
               "windows": "ints", "format": str, "split": str}


# -- configuration ------------------------------------------------------------------

def _coerce(key: str, raw: str, kind):
    try:
        if kind == "ints":
            return tuple(int(x) for x in raw.replace(",", " ").split())
        if kind in (tuple, "floats"):
            return tuple(float(x) for x in raw.replace(",", " ").split())
        if kind is bool:
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
        if raw.lower() == "none":
            return None
        return kind(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r}") from None


def _field_kinds(cls) -> dict:
    kinds = {}
    for f in fields(cls):
        default = f.default
        kinds[f.name] = type(default) if default is not None else float
    return kinds


def known_keys() -> dict:
    kinds = dict(_EXTRA_KEYS)
    kinds.update(_MODEL_KEYS)
    kinds.update({k: v for k, v in _field_kinds(WalkConfig).items() if k in _WALK_KEYS})
    kinds.update(_field_kinds(TrainConfig))
    kinds.update({k: v for k, v in _field_kinds(SynthConfig).items() if k != "seed"})
    kinds["seed"] = int
    kinds["tau"] = float
    return kinds


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    kinds = known_keys()
    out = {}
    for no, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{no}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in kinds:
            raise ConfigError(f"{p}:{no}: unknown config key {key!r}")
        out[key] = _coerce(key, raw, kinds[key])
    return out


@dataclass
class Settings:
    values: dict = field(default_factory=dict)

    def get(self, key, default=None):
        return self.values.get(key, default)

    def pick(self, keys) -> dict:
        return {k: self.values[k] for k in keys if k in self.values}

    def walk_config(self) -> WalkConfig:
        kw = self.pick(_WALK_KEYS)
        return WalkConfig(seed=int(self.get("seed", 0)), **kw)

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        kw = self.pick(names)
        if "betas" in kw:
            kw["betas"] = tuple(kw["betas"])
        return TrainConfig(**kw)

    def model_params(self) -> dict:
        return self.pick(_MODEL_KEYS)

    def synth_config(self) -> SynthConfig:
        names = {f.name for f in fields(SynthConfig)}
        kw = self.pick(names)
        for k in ("layer_depth", "split_factor"):
            if k in kw:
                kw[k] = tuple(int(x) for x in kw[k])
        if "sweep_days" in kw:
            kw["sweep_days"] = tuple(kw["sweep_days"])
        return SynthConfig(**kw)


def resolve_settings(args) -> Settings:
    values = read_config(args.config) if args.config else {}
    for flag, key in (("seed", "seed"), ("structural_window", "structural_window"),
                      ("interval_width", "interval_width"),
                      ("walks_per_node", "walks_per_node"), ("ablation", "ablation")):
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    settings = Settings(values)
    # fail fast on any invalid value, whichever command would have used it
    settings.walk_config()
    settings.train_config()
    settings.synth_config()
    return settings


# -- outputs ------------------------------------------------------------------------

def _file_sha(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """What ran, on which inputs, with which settings.

    ``run_hash`` covers the command, resolved settings, tool version and the
    bytes of every input file, so reruns of the same job share it. JSON
    artifacts carry it under ``run_hash``; the manifest in turn lists the
    sha256 of every output.
    """

    command: str
    argv: list
    settings: dict
    config_path: Optional[str] = None
    seed: int = 0
    version: str = __version__
    python: str = platform.python_version()
    numpy: str = np.__version__
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    run_hash: str = ""
    started_at: str = ""
    finished_at: str = ""
    seconds: float = 0.0

    def seal(self, input_files) -> str:
        digests = {str(p): _file_sha(Path(p)) for p in input_files if Path(p).is_file()}
        self.inputs = {"files": digests}
        blob = json.dumps({"command": self.command, "settings": self.settings,
                           "version": self.version, "inputs": sorted(digests.values())},
                          sort_keys=True, default=_jsonable)
        self.run_hash = hashlib.sha256(blob.encode()).hexdigest()[:16]
        return self.run_hash

    def write(self, directory: Path) -> None:
        self.outputs = {p.name: _file_sha(p) for p in sorted(directory.iterdir()) if p.is_file()}
        text = json.dumps(asdict(self), sort_keys=True, indent=2, default=_jsonable)
        (directory / "manifest.json").write_text(text + "\n", encoding="utf-8")


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (tuple, set)):
        return list(o)
    return str(o)


class _Staging:
    """Write into a temp dir beside ``out``; move it into place on success only."""

    def __init__(self, out: Path):
        self.out = out

    def __enter__(self) -> Path:
        parent = self.out.parent
        parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=f".{self.out.name}.", dir=parent))
        return self.tmp

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return
        if self.out.exists():
            if self.out.is_dir():
                for item in self.tmp.iterdir():
                    dest = self.out / item.name
                    if dest.is_dir():
                        shutil.rmtree(dest)
                    os.replace(item, dest)
                shutil.rmtree(self.tmp)
                return
            raise ConfigError(f"--out {self.out} exists and is not a directory")
        os.replace(self.tmp, self.out)


# -- graph loading -------------------------------------------------------------------

def load_graph(path):
    """Accept a ``.ssgr`` file, a transactions CSV/JSONL, or a directory holding either."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"input not found: {p}")
    if p.is_dir():
        for name in ("graph.ssgr", "transactions.csv", "transactions.jsonl"):
            if (p / name).exists():
                return load_graph(p / name)
        raise FileNotFoundError(f"no graph.ssgr or transactions file in {p}")
    if p.suffix == ".ssgr":
        return read_graph(p)
    labels = p.parent / "labels.csv"
    return ingest(p, labels_path=labels if labels.exists() else None)


def _dataset(graph, settings: Settings) -> LabeledDataset:
    return LabeledDataset.from_graph(graph, normal_ratio=float(settings.get("normal_ratio", 1.0)),
                                     seed=int(settings.get("dataset_seed", 0)))


def _write_json(path: Path, obj, run_hash: str) -> None:
    if isinstance(obj, dict):
        obj = {**obj, "run_hash": run_hash}
    else:
        obj = {"rows": obj, "run_hash": run_hash}
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n",
                    encoding="utf-8")


# -- commands -----------------------------------------------------------------------

def _metrics_text(text: str, run_hash: str) -> str:
    doc = json.loads(text)
    doc["run_hash"] = run_hash
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def cmd_synth(args, settings: Settings, out: Path, man: RunManifest) -> None:
    cfg = settings.synth_config()
    g, motif_log = generate(cfg)
    export(g, out, settings.get("format", "csv"), motif_log)
    write_graph(g, out / "graph.ssgr")
    man.results = {"summary": g.summary(), "graph_digest": g.digest(),
                   "degree_exponent": degree_stats(g)["exponent"], "synth_config": asdict(cfg)}


def cmd_ingest(args, settings: Settings, out: Path, man: RunManifest) -> None:
    g = ingest(args.input, labels_path=args.labels)
    write_graph(g, out / "graph.ssgr")
    summary = g.summary()
    _write_json(out / "summary.json", summary, man.run_hash)
    man.results = {"summary": summary, "graph_digest": g.digest()}


def cmd_sample(args, settings: Settings, out: Path, man: RunManifest) -> None:
    g = load_graph(args.graph)
    ds = _dataset(g, settings)
    wcfg = settings.walk_config().resolved(g)
    wpn = settings.train_config().walks_per_node
    walks = sample_walks(ds, wcfg, wpn)
    write_walk_cache(out / "walks.jsonl", walks, wcfg, wpn, g.digest(),
                     extra={"run_hash": man.run_hash})
    lengths = [len(w) for w in walks]
    man.results = {"walks": len(walks), "accounts": len(ds), "walk_config": asdict(wcfg),
                   "graph_digest": g.digest(),
                   "mean_length": float(np.mean(lengths)) if lengths else 0.0}


def cmd_train(args, settings: Settings, out: Path, man: RunManifest) -> None:
    g = load_graph(args.graph)
    ds = _dataset(g, settings)
    tcfg = settings.train_config()
    result = train(ds, settings.walk_config(), settings.model_params(), tcfg,
                   verbose=args.verbose)
    save_result(out / "model.ssck", result, ds, extra_meta={"run_hash": man.run_hash})
    text = metrics_json(result.report, result.metrics["config_hash"], ds.digest(), tcfg.seed)
    (out / "metrics.json").write_text(_metrics_text(text, man.run_hash), encoding="utf-8")
    probe = degree_value_probe(ds, result.split, tcfg.seed)
    _write_json(out / "probe_metrics.json", probe.to_dict(), man.run_hash)
    _write_json(out / "loss_curve.json", {"loss": result.loss_curve,
                                          "val_weighted_f1": result.classifier.val_curve_},
                man.run_hash)
    print(result.report.table())
    man.results = {"weighted_f1": result.report.weighted_f1,
                   "probe_weighted_f1": probe.weighted_f1, "epochs": len(result.loss_curve),
                   "graph_digest": g.digest(), "dataset_hash": ds.digest(),
                   "config_hash": result.metrics["config_hash"]}


_EVAL_CHECKED = _WALK_KEYS + ("walks_per_node", "normalization") + tuple(_MODEL_KEYS)


def cmd_eval(args, settings: Settings, out: Path, man: RunManifest) -> None:
    if not Path(args.checkpoint).is_file():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    g = load_graph(args.graph)
    ds = _dataset(g, settings)
    expected = settings.pick(_EVAL_CHECKED)
    report, text = evaluate(args.checkpoint, ds, settings.get("split", args.split),
                            expected=expected)
    (out / "metrics.json").write_text(_metrics_text(text, man.run_hash), encoding="utf-8")
    print(report.table())
    man.results = {"weighted_f1": report.weighted_f1}


def cmd_ablate(args, settings: Settings, out: Path, man: RunManifest) -> None:
    g = load_graph(args.graph)
    ds = _dataset(g, settings)
    tcfg = settings.train_config()
    seeds = settings.get("seeds", (tcfg.seed,))
    base = settings.walk_config()
    windows = settings.get("windows", (base.structural_window,))
    rows = []
    for w in windows:
        wcfg = WalkConfig(**{**asdict(base), "structural_window": int(w)})
        rows.extend(run_ablation(ds, wcfg, settings.model_params(), tcfg, seeds,
                                 verbose=args.verbose))
    _write_json(out / "ablation.json", rows, man.run_hash)
    table = ablation_table(rows)
    (out / "ablation.txt").write_text(f"{table}\nrun_hash {man.run_hash}\n", encoding="utf-8")
    print(table)
    man.results = {"rows": len(rows), "graph_digest": g.digest()}


def _input_files(args) -> list:
    files = [getattr(args, k, None) for k in ("input", "labels", "graph", "checkpoint", "config")]
    out = []
    for f in files:
        if f is None:
            continue
        p = Path(f)
        if p.is_dir():
            out.extend(sorted(x for x in p.iterdir() if x.is_file()))
        else:
            out.append(p)
    return out


COMMANDS = {"synth": cmd_synth, "ingest": cmd_ingest, "sample": cmd_sample,
            "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate}


# -- argument parsing ----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"usage: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("--seed", type=int)
    common.add_argument("--structural-window", dest="structural_window", type=int)
    common.add_argument("--interval-width", dest="interval_width", type=int)
    common.add_argument("--walks-per-node", dest="walks_per_node", type=int)
    common.add_argument("--ablation")
    common.add_argument("--threads", type=int, default=None,
                        help="cap BLAS/OpenMP threads")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = _Parser(prog="scamsweeper", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("synth", parents=[common], help="generate a labelled synthetic network")
    p = sub.add_parser("ingest", parents=[common], help="parse transactions into graph.ssgr")
    p.add_argument("input")
    p.add_argument("--labels")
    for name, helptext in (("sample", "sample STRWalk sequences"), ("train", "train a model"),
                           ("ablate", "compare the full model with its ablations")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("graph")
    p = sub.add_parser("eval", parents=[common], help="score a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("graph")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    return parser


def _fail(code: int, kind: str, message: str) -> int:
    line = json.dumps({"status": "error", "code": code, "kind": kind,
                       "message": " ".join(str(message).split())})
    print(line, file=sys.stderr)
    return code


def main(argv: Optional[list] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        settings = resolve_settings(args)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        from threadpoolctl import threadpool_limits

        started = time.perf_counter()
        man = RunManifest(args.command, argv, dict(settings.values), config_path=args.config,
                          seed=int(settings.get("seed", 0)), started_at=_now())
        man.seal(_input_files(args))
        with threadpool_limits(limits=args.threads):
            with _Staging(Path(args.out)) as stage:
                COMMANDS[args.command](args, settings, stage, man)
                man.seconds = round(time.perf_counter() - started, 3)
                man.finished_at = _now()
                man.write(stage)
        return EXIT_OK
    except FileNotFoundError as exc:
        return _fail(EXIT_MISSING, "missing_file", exc)
    except InvariantError as exc:
        return _fail(EXIT_INVARIANT, "invariant", exc)
    except (ConfigError, TypeError) as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except ValueError as exc:
        return _fail(EXIT_CONFIG, "config", exc)


if __name__ == "__main__":
    sys.exit(main())
