"""Computation-graph IR: typed nodes, validation, ordering, and op statistics.

The graph is a DAG over exactly ten operation kinds. Weights live on
``Const`` nodes as raw little-endian byte payloads; every node has one
output tensor whose :class:`TensorSpec` is tracked by id in the graph.
Graph inputs are represented as ``Const`` nodes with an empty payload
(the runtime binds them to caller-supplied tensors by name), which keeps
the op set closed while giving the dataflow an explicit source.

Graphs are immutable once constructed: compression passes produce new
graphs rather than editing in place, so concurrent readers are safe.
"""

from __future__ import annotations

import heapq
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

import numpy as np


class GraphError(Exception):
    """Structural problem that prevents an operation on a graph."""


class CycleError(GraphError):
    """The graph contains a directed cycle."""


class DType(Enum):
    FP32 = "fp32"
    FP16 = "fp16"
    INT8 = "int8"
    INT32 = "int32"

    @property
    def size(self) -> int:
        """Width of one element in bytes."""
        return _DTYPE_SIZE[self]

    @property
    def np(self) -> np.dtype:
        return _DTYPE_NP[self]


_DTYPE_SIZE = {DType.FP32: 4, DType.FP16: 2, DType.INT8: 1, DType.INT32: 4}
_DTYPE_NP = {
    DType.FP32: np.dtype("<f4"),
    DType.FP16: np.dtype("<f2"),
    DType.INT8: np.dtype("i1"),
    DType.INT32: np.dtype("<i4"),
}


@dataclass(frozen=True)
class QuantParams:
    """Affine mapping real = scale * (q - zero_point) for INT8 tensors.

    Weight tensors are quantized symmetrically, so their zero_point is 0.
    """

    scale: float
    zero_point: int = 0

    def __post_init__(self) -> None:
        if not (self.scale > 0.0 and np.isfinite(self.scale)):
            raise ValueError(f"quant scale must be positive and finite, got {self.scale}")
        if not -128 <= self.zero_point <= 127:
            raise ValueError(f"zero_point {self.zero_point} outside [-128, 127]")

    def quantize(self, values: np.ndarray, lo: int = -128, hi: int = 127) -> np.ndarray:
        """Round-to-nearest-even quantization with saturation to [lo, hi]."""
        q = np.rint(np.asarray(values, dtype=np.float64) / self.scale) + self.zero_point
        return np.clip(q, lo, hi).astype(np.int8)

    def dequantize(self, codes: np.ndarray) -> np.ndarray:
        return ((codes.astype(np.int32) - self.zero_point) * self.scale).astype(np.float32)


@dataclass(frozen=True)
class TensorSpec:
    """Shape/dtype descriptor for one tensor.

    Activations are NHWC, conv weights HWIO, depthwise weights (H, W, C).
    The leading dim of activation shapes is a nominal batch size; the
    executor accepts any batch, validating only the trailing dims.
    """

    shape: tuple[int, ...]
    dtype: DType
    quant: QuantParams | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        if len(self.shape) > 4:
            raise ValueError(f"rank {len(self.shape)} exceeds 4")
        if any(d < 1 for d in self.shape):
            raise ValueError(f"non-positive dim in shape {self.shape}")
        if (self.dtype is DType.INT8) != (self.quant is not None):
            raise ValueError("quant params are required for INT8 and only for INT8")

    @property
    def num_elements(self) -> int:
        n = 1
        for d in self.shape:
            n *= d
        return n

    @property
    def num_bytes(self) -> int:
        return self.num_elements * self.dtype.size


class OpKind(Enum):
    CONV2D = "Conv2D"
    DEPTHWISE_CONV2D = "DepthwiseConv2dNative"
    MATMUL = "MatMul"
    RELU6 = "Relu6"
    MEAN = "Mean"
    MUL = "Mul"
    ADDV2 = "AddV2"
    CONST = "Const"
    PAD = "Pad"
    CAST = "Cast"


# Fixed input arity per kind; Const takes none.
OP_ARITY = {
    OpKind.CONV2D: 2,
    OpKind.DEPTHWISE_CONV2D: 2,
    OpKind.MATMUL: 2,
    OpKind.MUL: 2,
    OpKind.ADDV2: 2,
    OpKind.RELU6: 1,
    OpKind.MEAN: 1,
    OpKind.PAD: 1,
    OpKind.CAST: 1,
    OpKind.CONST: 0,
}

PRECISION_TAGS = ("original", "fp32", "fp16", "int8")

# Attr key used on input-anchor Const nodes.
INPUT_NAME_ATTR = "input_name"


@dataclass(frozen=True)
class Node:
    """One graph operation. ``attrs`` hold kind-specific parameters
    (strides/padding for convs, pad amounts, Mean axes, Cast target);
    ``payload`` holds raw weight bytes and exists only on Const nodes.
    """

    id: int
    kind: OpKind
    inputs: tuple[int, ...] = ()
    attrs: Mapping[str, object] = field(default_factory=dict)
    payload: bytes | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", tuple(int(i) for i in self.inputs))
        object.__setattr__(self, "attrs", dict(self.attrs))


@dataclass(frozen=True)
class Graph:
    """Immutable computation graph plus per-node output tensor specs."""

    nodes: Mapping[int, Node]
    inputs: tuple[int, ...]
    outputs: tuple[int, ...]
    specs: Mapping[int, TensorSpec]
    name: str = "graph"
    precision: str = "original"

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", dict(self.nodes))
        object.__setattr__(self, "specs", dict(self.specs))
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        if self.precision not in PRECISION_TAGS:
            raise ValueError(f"unknown precision tag {self.precision!r}")

    def node(self, node_id: int) -> Node:
        return self.nodes[node_id]

    def spec(self, node_id: int) -> TensorSpec:
        return self.specs[node_id]

    def is_input(self, node_id: int) -> bool:
        return node_id in self.inputs

    @property
    def input_names(self) -> tuple[str, ...]:
        names = []
        for i, nid in enumerate(self.inputs):
            names.append(str(self.nodes[nid].attrs.get(INPUT_NAME_ATTR, f"input_{i}")))
        return tuple(names)

    def const_value(self, node_id: int) -> np.ndarray:
        """Decode a Const payload into a read-only ndarray."""
        node = self.nodes[node_id]
        if node.kind is not OpKind.CONST:
            raise GraphError(f"node {node_id} is {node.kind.value}, not Const")
        spec = self.specs[node_id]
        return np.frombuffer(node.payload, dtype=spec.dtype.np).reshape(spec.shape)

    def consumers(self) -> dict[int, list[int]]:
        """Map node id -> ids of nodes that read it, in ascending order."""
        out: dict[int, list[int]] = {nid: [] for nid in self.nodes}
        for nid in sorted(self.nodes):
            for src in self.nodes[nid].inputs:
                if src in out:
                    out[src].append(nid)
        return out


@dataclass(frozen=True)
class Violation:
    node_id: int | None
    rule: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple[Violation, ...]


def validate(graph: Graph) -> ValidationReport:
    """Check every structural invariant; violations are data, not failures."""
    bad: list[Violation] = []

    def flag(node_id: int | None, rule: str, message: str) -> None:
        bad.append(Violation(node_id, rule, message))

    for nid, node in graph.nodes.items():
        if nid != node.id:
            flag(nid, "id-mismatch", f"keyed as {nid} but node.id is {node.id}")
        want = OP_ARITY[node.kind]
        if len(node.inputs) != want:
            flag(nid, "arity", f"{node.kind.value} takes {want} inputs, has {len(node.inputs)}")
        for src in node.inputs:
            if src not in graph.nodes:
                flag(nid, "unknown-input", f"input id {src} does not exist")
        if node.kind is OpKind.CONST:
            if node.payload is None:
                flag(nid, "const-payload", "Const node has no payload")
        elif node.payload is not None:
            flag(nid, "payload", f"{node.kind.value} node carries a payload")
        if nid not in graph.specs:
            flag(nid, "spec-missing", "no output TensorSpec recorded")

    for nid in graph.inputs:
        node = graph.nodes.get(nid)
        if node is None:
            flag(nid, "unknown-input", "graph input id does not exist")
        elif node.kind is not OpKind.CONST:
            flag(nid, "input-anchor", "graph inputs must be Const anchors")
        elif node.payload:
            flag(nid, "input-anchor", "input anchor payload must be empty")

    # Non-anchor Const payloads must match their spec byte-for-byte.
    for nid, node in graph.nodes.items():
        if node.kind is OpKind.CONST and not graph.is_input(nid) and node.payload is not None:
            spec = graph.specs.get(nid)
            if spec is not None and len(node.payload) != spec.num_bytes:
                flag(nid, "payload-size",
                     f"payload is {len(node.payload)} bytes, spec wants {spec.num_bytes}")

    for nid in graph.outputs:
        if nid not in graph.nodes:
            flag(nid, "unknown-output", "graph output id does not exist")

    if _find_cycle(graph):
        flag(None, "cycle", "graph contains a directed cycle")
    else:
        reachable = _reachable_from(graph, graph.inputs)
        for nid, node in graph.nodes.items():
            if node.kind is not OpKind.CONST and nid not in reachable:
                flag(nid, "unreachable", f"{node.kind.value} not reachable from graph inputs")
        for nid in graph.outputs:
            node = graph.nodes.get(nid)
            if node is not None and node.kind is not OpKind.CONST and nid not in reachable:
                flag(nid, "unreachable-output", "output not reachable from graph inputs")

    return ValidationReport(ok=not bad, violations=tuple(bad))


def _find_cycle(graph: Graph) -> bool:
    indegree = {nid: 0 for nid in graph.nodes}
    for node in graph.nodes.values():
        for src in node.inputs:
            if src in indegree:
                indegree[node.id] += 1
    ready = [nid for nid, deg in indegree.items() if deg == 0]
    consumers = graph.consumers()
    seen = 0
    while ready:
        nid = ready.pop()
        seen += 1
        for user in consumers[nid]:
            indegree[user] -= 1
            if indegree[user] == 0:
                ready.append(user)
    return seen != len(graph.nodes)


def _reachable_from(graph: Graph, seeds: Iterable[int]) -> set[int]:
    consumers = graph.consumers()
    stack = [nid for nid in seeds if nid in graph.nodes]
    seen = set(stack)
    while stack:
        nid = stack.pop()
        for user in consumers[nid]:
            if user not in seen:
                seen.add(user)
                stack.append(user)
    return seen


def topo_sort(graph: Graph) -> list[int]:
    """Dependency order over all node ids, ties broken by ascending id.

    Raises :class:`CycleError` when the graph is not acyclic, so callers
    never observe a partial order.
    """
    indegree = {nid: 0 for nid in graph.nodes}
    for node in graph.nodes.values():
        for src in node.inputs:
            if src not in graph.nodes:
                raise GraphError(f"node {node.id} references missing id {src}")
            indegree[node.id] += 1
    consumers = graph.consumers()
    ready = [nid for nid, deg in sorted(indegree.items()) if deg == 0]
    heapq.heapify(ready)
    order: list[int] = []
    while ready:
        nid = heapq.heappop(ready)
        order.append(nid)
        for user in consumers[nid]:
            indegree[user] -= 1
            if indegree[user] == 0:
                heapq.heappush(ready, user)
    if len(order) != len(graph.nodes):
        raise CycleError("cycle detected; graph has no topological order")
    return order


def op_histogram(graph: Graph) -> dict[OpKind, int]:
    """Count nodes per operation kind. Counts sum to the node count."""
    return dict(Counter(node.kind for node in graph.nodes.values()))


def histogram_by_name(graph: Graph) -> dict[str, int]:
    """op_histogram keyed by op name, sorted for stable JSON emission."""
    hist = op_histogram(graph)
    return {kind.value: hist[kind] for kind in OpKind if kind in hist}


def same_padding(in_hw: tuple[int, int], k_hw: tuple[int, int],
                 strides: tuple[int, int]) -> tuple[tuple[int, int], tuple[int, int]]:
    """TF-convention SAME padding: total = max((out-1)*s + k - in, 0),
    split floor before / ceil after."""
    pads = []
    for size, k, s in zip(in_hw, k_hw, strides):
        out = -(-size // s)  # ceil division
        total = max((out - 1) * s + k - size, 0)
        before = total // 2
        pads.append((before, total - before))
    return pads[0], pads[1]


def conv_output_hw(in_hw: tuple[int, int], k_hw: tuple[int, int],
                   strides: tuple[int, int], padding: str) -> tuple[int, int]:
    """Spatial output dims for SAME/VALID padding."""
    if padding == "SAME":
        return tuple(-(-size // s) for size, s in zip(in_hw, strides))
    if padding == "VALID":
        out = tuple((size - k) // s + 1 for size, k, s in zip(in_hw, k_hw, strides))
        if any(d < 1 for d in out):
            raise GraphError(f"zero-sized conv output for input {in_hw}, kernel {k_hw}")
        return out
    raise GraphError(f"unknown padding mode {padding!r}")


class GraphBuilder:
    """Incremental constructor; callers supply each node's output spec."""

    def __init__(self, name: str = "graph", precision: str = "original"):
        self.name = name
        self.precision = precision
        self._nodes: dict[int, Node] = {}
        self._specs: dict[int, TensorSpec] = {}
        self._inputs: list[int] = []
        self._next_id = 0

    def _alloc(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def add_input(self, name: str, spec: TensorSpec) -> int:
        nid = self._alloc()
        self._nodes[nid] = Node(nid, OpKind.CONST, (), {INPUT_NAME_ATTR: name}, b"")
        self._specs[nid] = spec
        self._inputs.append(nid)
        return nid

    def add_const(self, values: np.ndarray, dtype: DType = DType.FP32,
                  quant: QuantParams | None = None) -> int:
        arr = np.ascontiguousarray(values, dtype=dtype.np)
        nid = self._alloc()
        self._nodes[nid] = Node(nid, OpKind.CONST, (), {}, arr.tobytes())
        self._specs[nid] = TensorSpec(arr.shape if arr.shape else (1,), dtype, quant)
        return nid

    def add(self, kind: OpKind, inputs: Iterable[int], spec: TensorSpec,
            attrs: Mapping[str, object] | None = None) -> int:
        nid = self._alloc()
        self._nodes[nid] = Node(nid, kind, tuple(inputs), attrs or {})
        self._specs[nid] = spec
        return nid

    def finish(self, outputs: Iterable[int]) -> Graph:
        return Graph(self._nodes, tuple(self._inputs), tuple(outputs),
                     self._specs, self.name, self.precision)
