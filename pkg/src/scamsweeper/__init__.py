"""Web3 scam and phishing account detection on temporal transaction graphs."""

__version__ = "0.1.0"

from .exceptions import ConfigError, IngestError, InvariantError, ScamSweeperError  # noqa: E402
from .txgraph import TemporalMultigraph, degree_stats, ingest, read_graph, write_graph  # noqa: E402
from .strwalk import STRWalkSampler, WalkConfig, run_walk, sample_dataset  # noqa: E402
from .features import FeatureBatch, SubgraphFeaturizer  # noqa: E402
from .model import ModelConfig, ScamSweeperClassifier, load_checkpoint, save_checkpoint  # noqa: E402
from .metrics import MetricsReport, classification_report, weighted_f1  # noqa: E402
from .trainer import LabeledDataset, TrainConfig, evaluate, run_ablation, train  # noqa: E402
from .synthgen import SynthConfig, generate  # noqa: E402

__all__ = [
    "__version__", "ConfigError", "IngestError", "InvariantError", "ScamSweeperError",
    "TemporalMultigraph", "degree_stats", "ingest", "read_graph", "write_graph",
    "STRWalkSampler", "WalkConfig", "run_walk", "sample_dataset", "FeatureBatch",
    "SubgraphFeaturizer", "ModelConfig", "ScamSweeperClassifier", "load_checkpoint",
    "save_checkpoint", "MetricsReport", "classification_report", "weighted_f1",
    "LabeledDataset", "TrainConfig", "evaluate", "run_ablation", "train", "SynthConfig",
    "generate",
]
