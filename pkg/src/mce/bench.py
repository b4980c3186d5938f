"""Benchmark harness: model size, latency, throughput, and power rows.

Latency is executor wall time only, excluding model load and file I/O
but including any pre/post precision casts the compressed graph carries.
Timing uses the monotonic high-resolution counter on a single thread;
images are visited in sorted filename order so different precision
variants of a model see the identical batch schedule.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model_io, tensor_io
from .executor import ExecOptions, Executor
from .power import PowerStats

PRECISION_ORDER = ("original", "fp32", "fp16", "int8")

REPORT_COLUMNS = ("precision", "size_bytes", "mean_latency_ms", "throughput_ips",
                  "power_mean_w", "power_delta_w", "power_ratio")


class BenchError(Exception):
    pass


@dataclass(frozen=True)
class LatencyStats:
    """Per-batch wall-clock samples (seconds) with warmup excluded, and
    summary per-image latencies derived as batch time / batch size."""

    batch_seconds: tuple[float, ...]
    batch_size: int
    warmup_batches: int

    def __post_init__(self) -> None:
        if not self.batch_seconds:
            raise BenchError("no timed batches")
        if min(self.batch_seconds) <= 0:
            raise BenchError("non-positive batch timing")

    @property
    def per_image_seconds(self) -> np.ndarray:
        return np.asarray(self.batch_seconds, dtype=np.float64) / self.batch_size

    @property
    def mean_s(self) -> float:
        return float(np.mean(self.per_image_seconds))

    @property
    def median_s(self) -> float:
        return float(np.median(self.per_image_seconds))

    @property
    def p95_s(self) -> float:
        return float(np.percentile(self.per_image_seconds, 95))


@dataclass(frozen=True)
class ThroughputStats:
    images: int
    total_seconds: float
    invocations: int

    @property
    def images_per_second(self) -> float:
        return self.images / self.total_seconds


def _load_runner(model_path: str | Path):
    graph = model_io.load_model(model_path)
    executor = Executor(graph, ExecOptions(check_shapes=True))
    name = graph.input_names[0]
    return graph, executor, name


def bench_latency(model_path: str | Path, data_dir: str | Path, batch_size: int = 32,
                  warmup_batches: int = 2, timed_batches: int = 10,
                  clock=time.perf_counter) -> LatencyStats:
    """Run warmup then timed batches, cycling the dataset as needed."""
    if warmup_batches < 0 or timed_batches < 1:
        raise BenchError("warmup must be >= 0 and timed batches >= 1")
    _, executor, input_name = _load_runner(model_path)
    files = tensor_io.list_dataset(data_dir)
    batches = tensor_io.iter_batches(files, batch_size, cycle=True)
    samples: list[float] = []
    for i in range(warmup_batches + timed_batches):
        batch = next(batches)
        start = clock()
        executor.run({input_name: batch})
        elapsed = clock() - start
        if i >= warmup_batches:
            samples.append(elapsed)
    return LatencyStats(tuple(samples), batch_size, warmup_batches)


def bench_throughput(model_path: str | Path, data_dir: str | Path,
                     batch_size: int = 32, clock=time.perf_counter) -> ThroughputStats:
    """Process every dataset image exactly once; the final partial batch
    executes at its true size."""
    _, executor, input_name = _load_runner(model_path)
    files = tensor_io.list_dataset(data_dir)
    total = 0.0
    images = 0
    invocations = 0
    for batch in tensor_io.iter_batches(files, batch_size, cycle=False):
        start = clock()
        executor.run({input_name: batch})
        total += clock() - start
        images += batch.shape[0]
        invocations += 1
    return ThroughputStats(images=images, total_seconds=total, invocations=invocations)


@dataclass(frozen=True)
class BenchRow:
    precision: str
    size_bytes: int
    mean_latency_ms: float
    throughput_ips: float
    power: PowerStats | None = None

    def cells(self) -> list:
        p = self.power
        return [self.precision, self.size_bytes, self.mean_latency_ms, self.throughput_ips,
                None if p is None else p.mean_w,
                None if p is None or p.delta_w is None else p.delta_w,
                None if p is None else p.ratio]


@dataclass
class BenchReport:
    rows: list[BenchRow]
    metadata: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in self.rows:
            writer.writerow(["" if v is None else (v if isinstance(v, str) else repr(v))
                             for v in row.cells()])
        return buf.getvalue()

    def to_json(self) -> str:
        payload = {
            "rows": [dict(zip(REPORT_COLUMNS, row.cells())) for row in self.rows],
            "metadata": self.metadata,
        }
        return json.dumps(payload, indent=2) + "\n"


def make_report(rows: list[BenchRow], metadata: dict | None = None) -> BenchReport:
    """Order rows by precision, enforce uniqueness, and fill power ratios
    against the ``original`` row when one is present."""
    if not rows:
        raise BenchError("report needs at least one row")
    seen = set()
    for row in rows:
        if row.precision in seen:
            raise BenchError(f"duplicate precision row {row.precision!r}")
        seen.add(row.precision)
    ordered = sorted(rows, key=lambda r: (PRECISION_ORDER.index(r.precision)
                                          if r.precision in PRECISION_ORDER else len(PRECISION_ORDER)))
    reference = next((r.power.mean_w for r in ordered
                      if r.precision == "original" and r.power is not None), None)
    if reference is not None:
        filled = []
        for row in ordered:
            power = row.power
            if power is not None and power.ratio is None:
                power = PowerStats(power.mean_w, power.idle_w, power.delta_w,
                                   power.mean_w / reference)
            filled.append(BenchRow(row.precision, row.size_bytes, row.mean_latency_ms,
                                   row.throughput_ips, power))
        ordered = filled
    meta = {"timer_resolution_s": time.get_clock_info("perf_counter").resolution}
    meta.update(metadata or {})
    return BenchReport(rows=ordered, metadata=meta)


def parse_report_csv(text: str) -> list[dict]:
    """Parse a report CSV back into row dicts (numbers typed, blanks None)."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != REPORT_COLUMNS:
        raise BenchError(f"unexpected report header {header}")
    rows = []
    for cells in reader:
        row: dict = {}
        for key, cell in zip(REPORT_COLUMNS, cells):
            if key == "precision":
                row[key] = cell
            elif cell == "":
                row[key] = None
            elif key == "size_bytes":
                row[key] = int(cell)
            else:
                row[key] = float(cell)
        rows.append(row)
    return rows
