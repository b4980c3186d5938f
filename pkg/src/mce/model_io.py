"""MCE model file format.

Little-endian binary: magic ``MCE1``, u16 version, u16 precision tag,
length-prefixed graph name, u32 node count, node table (id, op code,
arity, input ids, length-prefixed JSON attr block), graph input/output
id lists, tensor-spec table, weight section as length-prefixed raw
blobs in node-table order, and a trailing CRC32 over all preceding
bytes. A JSON manifest (name, precision, histogram) is written next to
every model file.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

from .ir import (
    DType,
    Graph,
    GraphError,
    Node,
    OpKind,
    QuantParams,
    TensorSpec,
    histogram_by_name,
    validate,
)

MAGIC = b"MCE1"
VERSION = 1

_PRECISION_CODE = {"original": 0, "fp32": 1, "fp16": 2, "int8": 3}
_CODE_PRECISION = {v: k for k, v in _PRECISION_CODE.items()}

_OP_CODE = {
    OpKind.CONV2D: 1,
    OpKind.DEPTHWISE_CONV2D: 2,
    OpKind.MATMUL: 3,
    OpKind.RELU6: 4,
    OpKind.MEAN: 5,
    OpKind.MUL: 6,
    OpKind.ADDV2: 7,
    OpKind.CONST: 8,
    OpKind.PAD: 9,
    OpKind.CAST: 10,
}
_CODE_OP = {v: k for k, v in _OP_CODE.items()}

_DTYPE_CODE = {DType.FP32: 0, DType.FP16: 1, DType.INT8: 2, DType.INT32: 3}
_CODE_DTYPE = {v: k for k, v in _DTYPE_CODE.items()}


class ModelFormatError(Exception):
    """Base error for unreadable model bytes."""


class BadMagicError(ModelFormatError):
    pass


class VersionMismatchError(ModelFormatError):
    pass


class TruncatedModelError(ModelFormatError):
    pass


class UnknownOpCodeError(ModelFormatError):
    pass


class ChecksumError(ModelFormatError):
    pass


def _attr_bytes(node: Node) -> bytes:
    # Canonical JSON so identical graphs serialize byte-identically.
    return json.dumps(node.attrs, sort_keys=True, separators=(",", ":")).encode("utf-8")


def serialize(graph: Graph) -> bytes:
    report = validate(graph)
    if not report.ok:
        first = report.violations[0]
        raise GraphError(f"refusing to serialize invalid graph: {first.rule}: {first.message}")

    out = bytearray()
    out += MAGIC
    out += struct.pack("<HH", VERSION, _PRECISION_CODE[graph.precision])
    name = graph.name.encode("utf-8")
    out += struct.pack("<H", len(name)) + name

    order = sorted(graph.nodes)
    out += struct.pack("<I", len(order))
    for nid in order:
        node = graph.nodes[nid]
        out += struct.pack("<IBB", nid, _OP_CODE[node.kind], len(node.inputs))
        for src in node.inputs:
            out += struct.pack("<I", src)
        attrs = _attr_bytes(node)
        out += struct.pack("<I", len(attrs)) + attrs

    for ids in (graph.inputs, graph.outputs):
        out += struct.pack("<H", len(ids))
        for nid in ids:
            out += struct.pack("<I", nid)

    out += struct.pack("<I", len(graph.specs))
    for nid in sorted(graph.specs):
        spec = graph.specs[nid]
        out += struct.pack("<IBB", nid, _DTYPE_CODE[spec.dtype], len(spec.shape))
        for dim in spec.shape:
            out += struct.pack("<I", dim)
        if spec.quant is None:
            out += struct.pack("<B", 0)
        else:
            out += struct.pack("<Bdh", 1, spec.quant.scale, spec.quant.zero_point)

    for nid in order:
        node = graph.nodes[nid]
        if node.kind is OpKind.CONST:
            out += struct.pack("<I", len(node.payload)) + node.payload

    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedModelError(
                f"need {n} bytes at offset {self.pos}, only {len(self.data) - self.pos} left")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def deserialize(data: bytes) -> Graph:
    if data[:4] != MAGIC:
        raise BadMagicError(f"expected magic {MAGIC!r}, got {data[:4]!r}")
    if len(data) < 8:
        raise TruncatedModelError("file shorter than fixed header")
    (stored_crc,) = struct.unpack("<I", data[-4:])
    actual_crc = zlib.crc32(data[:-4])
    if stored_crc != actual_crc:
        raise ChecksumError(f"CRC32 mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}")

    cur = _Cursor(data[:-4])
    cur.take(4)
    version, precision_code = cur.unpack("<HH")
    if version != VERSION:
        raise VersionMismatchError(f"file version {version}, reader supports {VERSION}")
    if precision_code not in _CODE_PRECISION:
        raise ModelFormatError(f"unknown precision code {precision_code}")
    (name_len,) = cur.unpack("<H")
    name = cur.take(name_len).decode("utf-8")

    (node_count,) = cur.unpack("<I")
    nodes: dict[int, Node] = {}
    order: list[int] = []
    for _ in range(node_count):
        nid, op_code, arity = cur.unpack("<IBB")
        if op_code not in _CODE_OP:
            raise UnknownOpCodeError(f"node {nid} has unknown op code {op_code}")
        inputs = tuple(cur.unpack("<I")[0] for _ in range(arity))
        (attr_len,) = cur.unpack("<I")
        try:
            attrs = json.loads(cur.take(attr_len).decode("utf-8"))
        except ValueError as exc:
            raise ModelFormatError(f"node {nid}: malformed attr block: {exc}") from exc
        nodes[nid] = Node(nid, _CODE_OP[op_code], inputs, attrs)
        order.append(nid)

    io_lists = []
    for _ in range(2):
        (count,) = cur.unpack("<H")
        io_lists.append(tuple(cur.unpack("<I")[0] for _ in range(count)))
    g_inputs, g_outputs = io_lists

    (spec_count,) = cur.unpack("<I")
    specs: dict[int, TensorSpec] = {}
    for _ in range(spec_count):
        nid, dtype_code, rank = cur.unpack("<IBB")
        if dtype_code not in _CODE_DTYPE:
            raise ModelFormatError(f"spec for node {nid}: unknown dtype code {dtype_code}")
        shape = tuple(cur.unpack("<I")[0] for _ in range(rank))
        (has_quant,) = cur.unpack("<B")
        quant = None
        if has_quant:
            scale, zero_point = cur.unpack("<dh")
            quant = QuantParams(scale, zero_point)
        specs[nid] = TensorSpec(shape, _CODE_DTYPE[dtype_code], quant)

    for nid in order:
        node = nodes[nid]
        if node.kind is OpKind.CONST:
            (blob_len,) = cur.unpack("<I")
            nodes[nid] = Node(nid, node.kind, node.inputs, node.attrs, bytes(cur.take(blob_len)))

    if cur.pos != len(cur.data):
        raise ModelFormatError(f"{len(cur.data) - cur.pos} trailing bytes after weight section")

    return Graph(nodes, g_inputs, g_outputs, specs,
                 name=name, precision=_CODE_PRECISION[precision_code])


def manifest(graph: Graph) -> dict:
    return {
        "name": graph.name,
        "precision": graph.precision,
        "histogram": histogram_by_name(graph),
    }


def manifest_path(model_path: str | Path) -> Path:
    return Path(f"{model_path}.manifest.json")


def save_model(graph: Graph, path: str | Path) -> Path:
    """Write the model file plus its JSON manifest sidecar."""
    path = Path(path)
    path.write_bytes(serialize(graph))
    manifest_path(path).write_text(json.dumps(manifest(graph), indent=2, sort_keys=True) + "\n")
    return path


def load_model(path: str | Path) -> Graph:
    return deserialize(Path(path).read_bytes())


def weight_payload_bytes(data: bytes) -> int:
    """Total raw weight-blob bytes in a serialized model (length prefixes
    and the input anchor's empty blob contribute nothing)."""
    graph = deserialize(data)
    return sum(len(node.payload) for node in graph.nodes.values()
               if node.kind is OpKind.CONST)
