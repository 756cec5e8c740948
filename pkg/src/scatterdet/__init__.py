"""Scattering-based multivariate time-series anomaly detection on temporal graphs."""
from .data import SyntheticSpec, TimeSeriesDataset, generate_synthetic, load_csv
from .detector import ModelState, ScoreConfig, TrainConfig, anomaly_score, score_series, threshold, train
from .encoders import Encoder, EncoderConfig
from .graph import TemporalGraph, TopologyConfig, build_graph, build_lookback
from .metrics import MetricReport, evaluate
from .objective import EmaConfig, ScatterCenter, init_center

__version__ = "0.1.0"

__all__ = [
    "EmaConfig",
    "Encoder",
    "EncoderConfig",
    "MetricReport",
    "ModelState",
    "ScatterCenter",
    "ScoreConfig",
    "SyntheticSpec",
    "TemporalGraph",
    "TimeSeriesDataset",
    "TopologyConfig",
    "TrainConfig",
    "anomaly_score",
    "build_graph",
    "build_lookback",
    "evaluate",
    "generate_synthetic",
    "init_center",
    "load_csv",
    "score_series",
    "threshold",
    "train",
]
