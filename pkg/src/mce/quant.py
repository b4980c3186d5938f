"""Compression passes: FP16 lowering, INT8 post-training quantization
with streaming calibration, mixed-precision cast insertion, and size
reporting.

Scheme: weights are quantized symmetrically per tensor (codes in
[-127, 127], zero_point 0); activations get affine per-tensor params
derived from observed ranges mapped onto [-127, 127]. Graph inputs and
outputs always stay FP32; by default the global Mean reduction does
too, which puts exactly four Cast nodes into a compressed classifier
(after the input, around the Mean, and before the output).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from . import model_io
from .executor import ExecOptions, Executor, FP16_MAX
from .ir import (
    DType,
    Graph,
    Node,
    OpKind,
    QuantParams,
    TensorSpec,
    op_histogram,
    topo_sort,
)

SCALE_FLOOR = 1e-12
HIST_BINS = 2048

KEEP_ROLES = ("inputs", "outputs", "mean")


class QuantError(Exception):
    pass


class CalibrationError(QuantError):
    pass


@dataclass(frozen=True)
class PrecisionPolicy:
    """Target precision plus the structural roles pinned to FP32.

    Graph inputs and outputs are always pinned; callers may additionally
    pin the Mean reduction (the default policy does).
    """

    target: DType
    keep_fp32: frozenset[str] = frozenset(KEEP_ROLES)

    def __post_init__(self) -> None:
        if self.target not in (DType.FP16, DType.INT8, DType.FP32):
            raise QuantError(f"unsupported target precision {self.target}")
        unknown = set(self.keep_fp32) - set(KEEP_ROLES)
        if unknown:
            raise QuantError(f"unknown keep_fp32 roles {sorted(unknown)}")
        object.__setattr__(self, "keep_fp32",
                           frozenset(self.keep_fp32) | {"inputs", "outputs"})

    @property
    def keep_mean(self) -> bool:
        return "mean" in self.keep_fp32

    @classmethod
    def from_file(cls, path: str | Path, target: DType) -> "PrecisionPolicy":
        raw = json.loads(Path(path).read_text())
        return cls(target, frozenset(raw.get("keep_fp32", KEEP_ROLES)))


def default_policy(target: DType) -> PrecisionPolicy:
    return PrecisionPolicy(target=target)


def weight_params(values: np.ndarray) -> QuantParams:
    """Symmetric per-tensor params: scale = max|w| / 127, zero_point 0."""
    peak = float(np.max(np.abs(values))) if values.size else 0.0
    return QuantParams(max(peak / 127.0, SCALE_FLOOR), 0)


def activation_params(lo: float, hi: float) -> QuantParams:
    """Affine per-tensor params mapping [lo, hi] onto codes [-127, 127]."""
    lo, hi = min(lo, 0.0), max(hi, 0.0)  # keep real zero representable
    if hi == lo:
        return QuantParams(SCALE_FLOOR, 0)  # all-zero tensor
    scale = max((hi - lo) / 254.0, SCALE_FLOOR)
    zero_point = int(np.clip(round(-127.0 - lo / scale), -128, 127))
    return QuantParams(scale, zero_point)


@dataclass(frozen=True)
class CalibEntry:
    tensor_id: int
    min: float
    max: float
    params: QuantParams
    kind: str  # "weight" | "activation"


@dataclass
class CalibrationTable:
    entries: dict[int, CalibEntry]
    method: str = "minmax"

    def __contains__(self, tensor_id: int) -> bool:
        return tensor_id in self.entries

    def params(self, tensor_id: int) -> QuantParams:
        try:
            return self.entries[tensor_id].params
        except KeyError:
            raise QuantError(f"missing calibration entry for tensor {tensor_id}") from None

    def to_json(self) -> str:
        rows = [
            {
                "tensor_id": e.tensor_id,
                "min": e.min,
                "max": e.max,
                "scale": e.params.scale,
                "zero_point": e.params.zero_point,
                "kind": e.kind,
            }
            for e in sorted(self.entries.values(), key=lambda e: e.tensor_id)
        ]
        return json.dumps(rows, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CalibrationTable":
        entries = {}
        for row in json.loads(text):
            entry = CalibEntry(int(row["tensor_id"]), float(row["min"]), float(row["max"]),
                               QuantParams(float(row["scale"]), int(row["zero_point"])),
                               str(row["kind"]))
            entries[entry.tensor_id] = entry
        return cls(entries)


class _StreamingHist:
    """Fixed-bin histogram whose range grows by proportional rebinning,
    so calibration memory stays constant per tensor."""

    def __init__(self, bins: int = HIST_BINS):
        self.bins = bins
        self.counts: np.ndarray | None = None
        self.lo = 0.0
        self.hi = 0.0

    def update(self, values: np.ndarray) -> None:
        vmin = float(values.min())
        vmax = float(values.max())
        if self.counts is None:
            span = vmax - vmin
            pad = span * 1e-6 if span > 0 else max(abs(vmin), 1.0) * 1e-6
            self.lo, self.hi = vmin - pad, vmax + pad
            self.counts = np.zeros(self.bins, dtype=np.int64)
        elif vmin < self.lo or vmax > self.hi:
            self._grow(min(vmin, self.lo), max(vmax, self.hi))
        hist, _ = np.histogram(values, bins=self.bins, range=(self.lo, self.hi))
        self.counts += hist

    def _grow(self, new_lo: float, new_hi: float) -> None:
        old_edges = np.linspace(self.lo, self.hi, self.bins + 1)
        new_edges = np.linspace(new_lo, new_hi, self.bins + 1)
        new_counts = np.zeros(self.bins, dtype=np.float64)
        width = old_edges[1] - old_edges[0]
        for i, count in enumerate(self.counts):
            if count == 0:
                continue
            a, b = old_edges[i], old_edges[i + 1]
            first = np.searchsorted(new_edges, a, side="right") - 1
            last = np.searchsorted(new_edges, b, side="left") - 1
            first = max(first, 0)
            last = min(last, self.bins - 1)
            for j in range(first, last + 1):
                overlap = min(b, new_edges[j + 1]) - max(a, new_edges[j])
                if overlap > 0:
                    new_counts[j] += count * overlap / width
        self.counts = new_counts
        self.lo, self.hi = new_lo, new_hi

    def central_range(self, p: float) -> tuple[float, float]:
        """Range covering the central p% of observed mass (clipping
        (100-p)/2 percent from each tail)."""
        total = float(self.counts.sum())
        if total <= 0:
            return self.lo, self.hi
        tail = (1.0 - p / 100.0) / 2.0
        cum = np.cumsum(self.counts) / total
        edges = np.linspace(self.lo, self.hi, self.bins + 1)
        lo_idx = int(np.searchsorted(cum, tail, side="left"))
        hi_idx = int(np.searchsorted(cum, 1.0 - tail, side="left"))
        return float(edges[min(lo_idx, self.bins)]), float(edges[min(hi_idx + 1, self.bins)])


def calibrate(graph: Graph, data: Iterable[np.ndarray], method: str = "minmax",
              percentile: float = 99.9) -> CalibrationTable:
    """Observe activation ranges over calibration batches and read weight
    ranges exactly; derive quant params for every tensor in the graph.

    ``data`` yields input batches for the graph's single input. Ranges
    stream as running min/max; the percentile method additionally keeps
    a bounded histogram per activation tensor.
    """
    if graph.precision not in ("original", "fp32"):
        raise CalibrationError(f"calibration needs an FP32 graph, got {graph.precision}")
    names = graph.input_names
    if len(names) != 1:
        raise CalibrationError(f"calibration supports single-input graphs, got {len(names)}")

    use_hist = method == "percentile"
    if method not in ("minmax", "percentile"):
        raise CalibrationError(f"unknown calibration method {method!r}")

    executor = Executor(graph, ExecOptions(check_shapes=True))
    weight_ids = {nid for nid, node in graph.nodes.items()
                  if node.kind is OpKind.CONST and not graph.is_input(nid)}

    mins: dict[int, float] = {}
    maxs: dict[int, float] = {}
    hists: dict[int, _StreamingHist] = {}
    batches = 0
    for batch in data:
        arr = np.asarray(batch, dtype=np.float32)
        if arr.ndim == len(graph.spec(graph.inputs[0]).shape) - 1:
            arr = arr[None, ...]
        values = executor.run_all({names[0]: arr})
        for nid, tv in values.items():
            if nid in weight_ids:
                continue
            flat = tv.data
            if not np.all(np.isfinite(flat)):
                raise CalibrationError(f"non-finite activation at tensor {nid}")
            lo = float(flat.min())
            hi = float(flat.max())
            mins[nid] = min(mins.get(nid, lo), lo)
            maxs[nid] = max(maxs.get(nid, hi), hi)
            if use_hist:
                hists.setdefault(nid, _StreamingHist()).update(
                    flat.astype(np.float64, copy=False).ravel())
        batches += 1
    if batches == 0:
        raise CalibrationError("empty calibration set")

    entries: dict[int, CalibEntry] = {}
    for nid in mins:
        lo, hi = mins[nid], maxs[nid]
        if use_hist:
            lo, hi = hists[nid].central_range(percentile)
        entries[nid] = CalibEntry(nid, lo, hi, activation_params(lo, hi), "activation")
    for nid in weight_ids:
        w = graph.const_value(nid).astype(np.float32)
        entries[nid] = CalibEntry(nid, float(w.min()), float(w.max()),
                                  weight_params(w), "weight")
    tag = f"percentile({percentile:g})" if use_hist else "minmax"
    return CalibrationTable(entries, tag)


def _quantizable_nodes(graph: Graph, policy: PrecisionPolicy) -> set[int]:
    """Non-Const nodes whose output the policy converts off FP32."""
    out = set()
    for nid, node in graph.nodes.items():
        if node.kind is OpKind.CONST:
            continue
        if node.kind is OpKind.MEAN and policy.keep_mean:
            continue
        out.add(nid)
    return out


def lower_fp16(graph: Graph, policy: PrecisionPolicy | None = None) -> Graph:
    """Re-encode weights as FP16 (round-to-nearest-even, saturating) and
    retag activations, inserting casts at policy boundaries."""
    if graph.precision not in ("original", "fp32"):
        raise QuantError(f"lower_fp16 needs an FP32 source graph, got {graph.precision}")
    policy = policy or default_policy(DType.FP16)

    nodes = dict(graph.nodes)
    specs = dict(graph.specs)
    convert = _quantizable_nodes(graph, policy)
    for nid, node in graph.nodes.items():
        if node.kind is OpKind.CONST and not graph.is_input(nid):
            w = graph.const_value(nid).astype(np.float32)
            encoded = np.clip(w, -FP16_MAX, FP16_MAX).astype(np.float16)
            nodes[nid] = Node(nid, node.kind, node.inputs, node.attrs, encoded.tobytes())
            specs[nid] = TensorSpec(specs[nid].shape, DType.FP16)
        elif nid in convert:
            specs[nid] = TensorSpec(specs[nid].shape, DType.FP16)

    lowered = Graph(nodes, graph.inputs, graph.outputs, specs,
                    name=graph.name, precision="fp16")
    return insert_casts(lowered, policy)


def quantize_int8(graph: Graph, table: CalibrationTable,
                  policy: PrecisionPolicy | None = None) -> Graph:
    """Store weights as symmetric INT8 codes and attach affine params to
    activation specs; kept-FP32 roles are bridged with casts."""
    if graph.precision not in ("original", "fp32"):
        raise QuantError(f"quantize_int8 needs an FP32 source graph, got {graph.precision}")
    policy = policy or default_policy(DType.INT8)

    nodes = dict(graph.nodes)
    specs = dict(graph.specs)
    for nid, node in graph.nodes.items():
        if node.kind is OpKind.CONST and not graph.is_input(nid):
            params = table.params(nid)
            if not (params.scale > 0 and np.isfinite(params.scale)):
                raise QuantError(f"scale underflow for weight tensor {nid}")
            w = graph.const_value(nid).astype(np.float64)
            codes = np.clip(np.rint(w / params.scale), -127, 127).astype(np.int8)
            nodes[nid] = Node(nid, node.kind, node.inputs, node.attrs, codes.tobytes())
            specs[nid] = TensorSpec(specs[nid].shape, DType.INT8, params)
    for nid in _quantizable_nodes(graph, policy):
        specs[nid] = TensorSpec(specs[nid].shape, DType.INT8, table.params(nid))

    quantized = Graph(nodes, graph.inputs, graph.outputs, specs,
                      name=graph.name, precision="int8")
    return insert_casts(quantized, policy, table)


def insert_casts(graph: Graph, policy: PrecisionPolicy,
                 table: CalibrationTable | None = None) -> Graph:
    """Insert a Cast at every edge whose producer/consumer dtypes differ,
    plus output-boundary casts back to FP32. One cast is shared per
    (source, target dtype) pair; applying the pass twice is a no-op."""
    nodes = dict(graph.nodes)
    specs = dict(graph.specs)
    next_id = max(nodes) + 1 if nodes else 0
    made: dict[tuple[int, DType], int] = {}

    def cast_to(src: int, target: DType) -> int:
        nonlocal next_id
        key = (src, target)
        if key in made:
            return made[key]
        quant = None
        if target is DType.INT8:
            if table is None:
                raise QuantError(f"cast to INT8 at tensor {src} requires a calibration table")
            quant = table.params(src)
        nid = next_id
        next_id += 1
        nodes[nid] = Node(nid, OpKind.CAST, (src,), {"target": target.value})
        specs[nid] = TensorSpec(specs[src].shape, target, quant)
        made[key] = nid
        return nid

    for nid in topo_sort(graph):
        node = graph.nodes[nid]
        if node.kind in (OpKind.CONST, OpKind.CAST):
            continue
        required = specs[nid].dtype
        rewired = []
        changed = False
        for src in node.inputs:
            if specs[src].dtype != required:
                rewired.append(cast_to(src, required))
                changed = True
            else:
                rewired.append(src)
        if changed:
            nodes[nid] = Node(nid, node.kind, tuple(rewired), node.attrs)

    outputs = []
    for out in graph.outputs:
        if specs[out].dtype is not DType.FP32:
            outputs.append(cast_to(out, DType.FP32))
        else:
            outputs.append(out)

    return Graph(nodes, graph.inputs, tuple(outputs), specs,
                 name=graph.name, precision=graph.precision)


@dataclass(frozen=True)
class SizeReport:
    bytes_before: int
    bytes_after: int
    weight_bytes_before: int
    weight_bytes_after: int

    @property
    def ratio(self) -> float:
        return self.bytes_after / self.bytes_before

    @property
    def weight_ratio(self) -> float:
        return self.weight_bytes_after / self.weight_bytes_before

    def as_dict(self) -> dict:
        return {
            "bytes_before": self.bytes_before,
            "bytes_after": self.bytes_after,
            "weight_bytes_before": self.weight_bytes_before,
            "weight_bytes_after": self.weight_bytes_after,
            "ratio": self.ratio,
            "weight_ratio": self.weight_ratio,
        }


def size_report(before: str | Path, after: str | Path) -> SizeReport:
    """Byte-count comparison of two serialized model files."""
    before_bytes = Path(before).read_bytes()
    after_bytes = Path(after).read_bytes()
    return SizeReport(
        bytes_before=len(before_bytes),
        bytes_after=len(after_bytes),
        weight_bytes_before=model_io.weight_payload_bytes(before_bytes),
        weight_bytes_after=model_io.weight_payload_bytes(after_bytes),
    )


def histogram_delta(before: Graph, after: Graph) -> dict:
    """Sanity helper: compression must change only the Cast count."""
    hb = op_histogram(before)
    ha = op_histogram(after)
    return {kind: ha.get(kind, 0) - hb.get(kind, 0)
            for kind in set(hb) | set(ha)
            if ha.get(kind, 0) != hb.get(kind, 0)}
