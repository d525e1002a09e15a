"""Continuous selective state-space models for link prediction on continuous-time dynamic graphs."""
__version__ = "0.1.0"

from .config import RunConfig, TrainConfig, load_config, parse_config  # noqa: E402
from .graph import TemporalGraph, chronological_split, load_dataset, load_events, synthetic_graph  # noqa: E402
from .metrics import auc_roc, average_precision  # noqa: E402
from .model import DyGMamba, DyGMambaNodeClassifier, ModelConfig  # noqa: E402
from .training import EvalReport, evaluate, evaluate_edgebank, run_ablation, train  # noqa: E402

__all__ = [
    "DyGMamba", "DyGMambaNodeClassifier", "EvalReport", "ModelConfig", "RunConfig", "TemporalGraph",
    "TrainConfig", "auc_roc", "average_precision", "chronological_split", "evaluate", "evaluate_edgebank",
    "load_config", "load_dataset", "load_events", "parse_config", "run_ablation", "synthetic_graph", "train",
]
