"""Writer for the MCE model and tensor file formats.

Implements the documented wire layout directly so the converter stays
decoupled from the engine package: magic ``MCE1``, version, precision
tag, graph name, node table with length-prefixed canonical-JSON attr
blocks, graph input/output id lists, tensor-spec table, length-prefixed
weight blobs in node order, and a trailing CRC32. Graph inputs are
``Const`` anchor nodes with an empty payload and an ``input_name`` attr.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MCE1"
VERSION = 1

OP_CODES = {
    "Conv2D": 1,
    "DepthwiseConv2dNative": 2,
    "MatMul": 3,
    "Relu6": 4,
    "Mean": 5,
    "Mul": 6,
    "AddV2": 7,
    "Const": 8,
    "Pad": 9,
    "Cast": 10,
}

DTYPE_CODES = {"fp32": 0, "fp16": 1, "int8": 2, "int32": 3}
PRECISION_CODES = {"original": 0, "fp32": 1, "fp16": 2, "int8": 3}

_NP_OF_DTYPE = {"fp32": np.dtype("<f4"), "fp16": np.dtype("<f2"),
                "int8": np.dtype("i1"), "int32": np.dtype("<i4")}


@dataclass
class McNode:
    id: int
    op: str
    inputs: tuple[int, ...] = ()
    attrs: dict = field(default_factory=dict)
    payload: np.ndarray | None = None  # Const only; None elsewhere


@dataclass
class McGraph:
    name: str = "graph"
    precision: str = "original"
    nodes: dict[int, McNode] = field(default_factory=dict)
    specs: dict[int, tuple[tuple[int, ...], str]] = field(default_factory=dict)
    inputs: list[int] = field(default_factory=list)
    outputs: list[int] = field(default_factory=list)
    _next: int = 0

    def add(self, op: str, inputs=(), attrs=None, shape=(), dtype="fp32",
            payload: np.ndarray | None = None) -> int:
        nid = self._next
        self._next += 1
        self.nodes[nid] = McNode(nid, op, tuple(inputs), dict(attrs or {}), payload)
        self.specs[nid] = (tuple(int(d) for d in shape), dtype)
        return nid

    def add_input(self, name: str, shape) -> int:
        nid = self.add("Const", (), {"input_name": name}, shape,
                       payload=np.zeros(0, np.float32))
        self.inputs.append(nid)
        return nid

    def add_const(self, values: np.ndarray) -> int:
        arr = np.ascontiguousarray(values, dtype=np.float32)
        shape = arr.shape if arr.shape else (1,)
        return self.add("Const", (), {}, shape, payload=arr.reshape(shape))

    def histogram(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for node in self.nodes.values():
            out[node.op] = out.get(node.op, 0) + 1
        return {op: out[op] for op in OP_CODES if op in out}


def graph_to_bytes(graph: McGraph) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HH", VERSION, PRECISION_CODES[graph.precision])
    name = graph.name.encode("utf-8")
    out += struct.pack("<H", len(name)) + name

    order = sorted(graph.nodes)
    out += struct.pack("<I", len(order))
    for nid in order:
        node = graph.nodes[nid]
        out += struct.pack("<IBB", nid, OP_CODES[node.op], len(node.inputs))
        for src in node.inputs:
            out += struct.pack("<I", src)
        attrs = json.dumps(node.attrs, sort_keys=True,
                           separators=(",", ":")).encode("utf-8")
        out += struct.pack("<I", len(attrs)) + attrs

    for ids in (graph.inputs, graph.outputs):
        out += struct.pack("<H", len(ids))
        for nid in ids:
            out += struct.pack("<I", nid)

    out += struct.pack("<I", len(graph.specs))
    for nid in sorted(graph.specs):
        shape, dtype = graph.specs[nid]
        out += struct.pack("<IBB", nid, DTYPE_CODES[dtype], len(shape))
        for dim in shape:
            out += struct.pack("<I", dim)
        out += struct.pack("<B", 0)  # converter emits FP32 models only

    for nid in order:
        node = graph.nodes[nid]
        if node.op == "Const":
            blob = node.payload.tobytes()
            out += struct.pack("<I", len(blob)) + blob

    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def save_graph(graph: McGraph, path) -> Path:
    """Write the model plus its JSON manifest sidecar."""
    path = Path(path)
    path.write_bytes(graph_to_bytes(graph))
    manifest = {"name": graph.name, "precision": graph.precision,
                "histogram": graph.histogram()}
    Path(f"{path}.manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# MCT tensor files, used to feed inputs through the engine CLI.

TENSOR_MAGIC = b"MCT1"


def save_tensor(path, values: np.ndarray) -> Path:
    arr = np.ascontiguousarray(values, dtype=np.float32)
    out = bytearray()
    out += TENSOR_MAGIC
    out += struct.pack("<BB", DTYPE_CODES["fp32"], arr.ndim)
    for dim in arr.shape:
        out += struct.pack("<I", dim)
    out += arr.tobytes()
    path = Path(path)
    path.write_bytes(bytes(out))
    return path


def load_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != TENSOR_MAGIC:
        raise ValueError(f"{path}: not a tensor file")
    code, rank = struct.unpack("<BB", data[4:6])
    dtype = {v: k for k, v in DTYPE_CODES.items()}[code]
    shape = struct.unpack(f"<{rank}I", data[6:6 + 4 * rank])
    return np.frombuffer(data[6 + 4 * rank:], dtype=_NP_OF_DTYPE[dtype]).reshape(shape)
