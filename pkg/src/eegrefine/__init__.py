"""Two-stage EEG connectivity graphs: a learned edge predictor followed by
judge-driven edge refinement, with baselines and graph-level metrics."""

__version__ = "0.1.0"

from .exceptions import ConfigError, DataError, EegRefineError, InvariantError, JudgeError  # noqa: E402
from .graph import Graph, ProbGraph, threshold_edges  # noqa: E402
from .montage import Lobe, Montage, standard_montage  # noqa: E402
from .signals import EegWindow, SynthSpec, generate_synthetic, slice_windows  # noqa: E402

__all__ = [
    "ConfigError", "DataError", "EegRefineError", "InvariantError", "JudgeError",
    "Graph", "ProbGraph", "threshold_edges",
    "Lobe", "Montage", "standard_montage",
    "EegWindow", "SynthSpec", "generate_synthetic", "slice_windows",
]
