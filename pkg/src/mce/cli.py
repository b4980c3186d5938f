"""Command-line surface: build, compress, run, evaluate, benchmark, inspect.

Exit codes: 0 success, 1 usage error, 2 data/model error. Diagnostics go
to stderr; machine-readable JSON/CSV goes to stdout or the file named by
``--out``/``--report``. ``MCE_LOG`` (error|info|debug) sets verbosity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import model_io, quant, tensor_io
from .executor import ExecError, ExecOptions, Executor
from .ir import DType, GraphError, histogram_by_name
from .metrics import MetricsError, confusion, label_to_binary, metrics, roc_auc
from .mobilenet import build_mobilenet_v2
from .power import PowerError, TraceSampler, trace_power_stats
from .splits import SplitError

log = logging.getLogger("mce")

_DATA_ERRORS = (
    GraphError, ExecError, quant.QuantError, MetricsError, SplitError,
    bench_mod.BenchError, PowerError, model_io.ModelFormatError,
    tensor_io.TensorFileError, tensor_io.DatasetError,
    OSError, ValueError, KeyError,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1, not argparse's default 2
        raise _UsageError(message)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_build_zoo(args) -> int:
    graph = build_mobilenet_v2(args.res, args.width, num_outputs=1, seed=args.seed)
    model_io.save_model(graph, args.out)
    log.info("wrote %s (%d nodes)", args.out, len(graph.nodes))
    sys.stdout.write(json.dumps(model_io.manifest(graph), indent=2, sort_keys=True) + "\n")
    return 0


def _load_calibration(graph, calib: str, method: str):
    path = Path(calib)
    if path.is_file() and path.suffix == ".json":
        return quant.CalibrationTable.from_json(path.read_text())
    files = tensor_io.list_dataset(path)
    batches = (tensor_io.load_tensor(f) for f in files)
    return quant.calibrate(graph, batches, method=method)


def cmd_compress(args) -> int:
    if args.precision == "int8" and not args.calib:
        raise _UsageError("--calib DIR (or a .json table) is required for INT8")
    graph = model_io.load_model(args.model)
    target = DType.FP16 if args.precision == "fp16" else DType.INT8
    policy = (quant.PrecisionPolicy.from_file(args.policy, target)
              if args.policy else quant.default_policy(target))
    if target is DType.FP16:
        compressed = quant.lower_fp16(graph, policy)
    else:
        table = _load_calibration(graph, args.calib, args.calib_method)
        compressed = quant.quantize_int8(graph, table, policy)
        Path(f"{args.out}.calib.json").write_text(table.to_json())
    model_io.save_model(compressed, args.out)
    report = quant.size_report(args.model, args.out)
    log.info("compressed %s -> %s (ratio %.3f)", args.model, args.out, report.ratio)
    sys.stdout.write(json.dumps(report.as_dict(), indent=2) + "\n")
    return 0


def cmd_run(args) -> int:
    graph = model_io.load_model(args.model)
    data = tensor_io.load_tensor(args.input)
    spec = graph.spec(graph.inputs[0])
    if data.ndim == len(spec.shape) - 1:
        data = data[None, ...]
    result = Executor(graph, ExecOptions(check_shapes=True)).run(
        {graph.input_names[0]: data})
    values = {name: tv.data for name, tv in result.outputs.items()}
    if args.out:
        tensor_io.save_tensor(args.out, values["output_0"])
        return 0
    payload = {name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
               for name, arr in values.items()}
    sys.stdout.write(json.dumps(payload) + "\n")
    return 0


def _read_csv_pairs(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if len(row) >= 2:
                out[row[0]] = row[1]
    if not out:
        raise ValueError(f"{path}: no rows")
    return out


def cmd_eval(args) -> int:
    score_rows = _read_csv_pairs(args.scores)
    label_rows = _read_csv_pairs(args.labels)
    scores: list[float] = []
    labels: list[int] = []
    for filename in sorted(set(score_rows) & set(label_rows)):
        try:
            score = float(score_rows[filename])
        except ValueError:
            continue  # header row
        scores.append(score)
        labels.append(label_to_binary(label_rows[filename]))
    if not scores:
        raise ValueError("no overlapping filenames between scores and labels")
    cm = confusion(scores, labels, threshold=args.threshold)
    try:
        auc = roc_auc(scores, labels)
    except MetricsError:
        auc = None  # single-class evaluation set
    report = metrics(cm, auc=auc)
    if args.out and args.out.endswith(".csv"):
        from .metrics import METRICS_CSV_HEADER, metrics_csv_row
        _emit(METRICS_CSV_HEADER + "\n" + metrics_csv_row(report) + "\n", args.out)
    else:
        _emit(report.to_json(), args.out)
    if args.out:
        sys.stdout.write(report.to_json())
    return 0


def cmd_bench(args) -> int:
    rows = []
    trace = TraceSampler(args.power_trace) if args.power_trace else None
    durations = {}
    for model_path in args.model:
        graph = model_io.load_model(model_path)
        latency = bench_mod.bench_latency(model_path, args.data, args.batch,
                                          args.warmup, args.reps)
        throughput = bench_mod.bench_throughput(model_path, args.data, args.batch)
        durations[graph.precision] = throughput.total_seconds
        power = trace_power_stats(trace, throughput.total_seconds) if trace else None
        rows.append(bench_mod.BenchRow(
            precision=graph.precision,
            size_bytes=Path(model_path).stat().st_size,
            mean_latency_ms=latency.mean_s * 1e3,
            throughput_ips=throughput.images_per_second,
            power=power,
        ))
    report = bench_mod.make_report(rows, metadata={"run_seconds": durations,
                                                   "batch_size": args.batch})
    if args.report:
        Path(args.report).write_text(report.to_csv())
        Path(args.report).with_suffix(".json").write_text(report.to_json())
    sys.stdout.write(report.to_json())
    return 0


def cmd_inspect(args) -> int:
    graph = model_io.load_model(args.model)
    payload = {
        "name": graph.name,
        "precision": graph.precision,
        "histogram": histogram_by_name(graph),
        "nodes": len(graph.nodes),
        "inputs": list(graph.input_names),
        "outputs": len(graph.outputs),
    }
    sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="mce", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-zoo", help="build the MobileNetV2 classifier graph")
    p.add_argument("--res", type=int, default=224, help="input resolution (multiple of 32)")
    p.add_argument("--width", type=float, default=1.0, help="width multiplier")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output .mce path")
    p.set_defaults(func=cmd_build_zoo)

    p = sub.add_parser("compress", help="lower a model to FP16 or INT8")
    p.add_argument("--model", required=True)
    p.add_argument("--precision", required=True, choices=("fp16", "int8"))
    p.add_argument("--calib", help="calibration dataset dir or saved .json table")
    p.add_argument("--calib-method", default="minmax", choices=("minmax", "percentile"))
    p.add_argument("--policy", help="JSON file with keep_fp32 roles")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("run", help="execute a model on one tensor file")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="input .mct tensor")
    p.add_argument("--out", help="write output tensor here instead of JSON on stdout")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="classification metrics from score/label CSVs")
    p.add_argument("--scores", required=True, help="CSV of filename,score")
    p.add_argument("--labels", required=True, help="CSV of filename,label")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", help="write metrics JSON (or CSV if path ends in .csv)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="size/latency/throughput/power benchmark")
    p.add_argument("--model", required=True, action="append",
                   help="model file; repeat to compare precision variants")
    p.add_argument("--data", required=True, help="dataset directory of .mct files")
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--reps", type=int, default=10, help="timed batches for latency")
    p.add_argument("--power-trace", help="timestamp_s,watts CSV replayed for power stats")
    p.add_argument("--report", help="write CSV report here (JSON mirror alongside)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect", help="print a model's manifest")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("MCE_LOG", "error").upper()
    logging.basicConfig(stream=sys.stderr,
                        level=getattr(logging, level, logging.ERROR),
                        format="%(name)s %(levelname)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except _DATA_ERRORS as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
