"""Model compression engine: computation-graph IR, FP16/INT8 lowering,
a deterministic reference runtime, and an edge-inference benchmark
suite for binary image classifiers."""

from .ir import (
    DType,
    Graph,
    GraphBuilder,
    Node,
    OpKind,
    QuantParams,
    TensorSpec,
    op_histogram,
    topo_sort,
    validate,
)
from .executor import ExecOptions, Executor, TensorValue, run
from .mobilenet import build_mobilenet_v2
from .model_io import deserialize, load_model, save_model, serialize
from .quant import (
    CalibrationTable,
    PrecisionPolicy,
    calibrate,
    default_policy,
    insert_casts,
    lower_fp16,
    quantize_int8,
    size_report,
)
from .metrics import ConfusionMatrix, MetricsReport, confusion, map_label, metrics, roc_auc
from .splits import FoldAssignment, holdout_split, stratified_kfold
from .bench import BenchRow, bench_latency, bench_throughput, make_report
from .power import PowerStats, TraceSampler, power_delta_ratio, sample_power

__version__ = "0.1.0"

__all__ = [
    "DType", "Graph", "GraphBuilder", "Node", "OpKind", "QuantParams", "TensorSpec",
    "op_histogram", "topo_sort", "validate",
    "ExecOptions", "Executor", "TensorValue", "run",
    "build_mobilenet_v2",
    "deserialize", "load_model", "save_model", "serialize",
    "CalibrationTable", "PrecisionPolicy", "calibrate", "default_policy",
    "insert_casts", "lower_fp16", "quantize_int8", "size_report",
    "ConfusionMatrix", "MetricsReport", "confusion", "map_label", "metrics", "roc_auc",
    "FoldAssignment", "holdout_split", "stratified_kfold",
    "BenchRow", "bench_latency", "bench_throughput", "make_report",
    "PowerStats", "TraceSampler", "power_delta_ratio", "sample_power",
    "__version__",
]
