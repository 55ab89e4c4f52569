"""Streaming personalized classification over feature vectors, with simulated
consumption-pattern benchmarks and a sequential evaluation harness."""

from .core import (
    ConsumptionPattern,
    DataError,
    LabeledObservation,
    NumericalError,
    cosine_similarity,
    l2_normalize,
    softmax,
)
from .simgen import SimConfig, food101_shape_config, generate_benchmark, make_benchmark, vfn_shape_config
from .classify import PersonalClassifierState, WindowConfig, make_classifier, observe, predict
from .bench import MethodSpec, parse_method, run_benchmark, run_benchmark_full, run_pattern

__version__ = "0.1.0"

__all__ = [
    "ConsumptionPattern",
    "DataError",
    "LabeledObservation",
    "MethodSpec",
    "NumericalError",
    "PersonalClassifierState",
    "SimConfig",
    "WindowConfig",
    "cosine_similarity",
    "food101_shape_config",
    "generate_benchmark",
    "l2_normalize",
    "make_benchmark",
    "make_classifier",
    "observe",
    "parse_method",
    "predict",
    "run_benchmark",
    "run_benchmark_full",
    "run_pattern",
    "softmax",
    "vfn_shape_config",
    "__version__",
]
