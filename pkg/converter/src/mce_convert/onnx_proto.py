"""Self-contained ONNX protobuf reader/writer for the converter's op
subset.

Implements the protobuf wire format directly (varint, fixed32/64,
length-delimited) against the stable ONNX schema field numbers, so no
protobuf or onnx dependency is needed. The reader skips unknown fields
and accepts both packed and unpacked repeated numerics, which covers
files produced by the standard exporters.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np


class OnnxDecodeError(Exception):
    pass


# TensorProto.DataType values used here
DT_FLOAT = 1
DT_INT64 = 7

# AttributeProto.AttributeType
ATTR_FLOAT = 1
ATTR_INT = 2
ATTR_STRING = 3
ATTR_TENSOR = 4
ATTR_FLOATS = 6
ATTR_INTS = 7
ATTR_STRINGS = 8

_NP_OF = {DT_FLOAT: np.dtype("<f4"), DT_INT64: np.dtype("<i8")}


@dataclass
class TensorP:
    name: str = ""
    dims: tuple[int, ...] = ()
    data_type: int = DT_FLOAT
    raw: bytes = b""

    @classmethod
    def from_array(cls, name: str, values: np.ndarray) -> "TensorP":
        arr = np.asarray(values)
        if arr.dtype.kind == "f":
            arr = arr.astype(np.float32)
            dt = DT_FLOAT
        else:
            arr = arr.astype(np.int64)
            dt = DT_INT64
        return cls(name, tuple(int(d) for d in arr.shape), dt,
                   np.ascontiguousarray(arr).tobytes())

    def to_array(self) -> np.ndarray:
        if self.data_type not in _NP_OF:
            raise OnnxDecodeError(f"tensor {self.name!r}: unsupported data_type "
                                  f"{self.data_type}")
        return np.frombuffer(self.raw, dtype=_NP_OF[self.data_type]).reshape(self.dims)


@dataclass
class AttributeP:
    name: str
    type: int
    f: float = 0.0
    i: int = 0
    s: bytes = b""
    floats: tuple[float, ...] = ()
    ints: tuple[int, ...] = ()
    t: TensorP | None = None


@dataclass
class NodeP:
    op_type: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    name: str = ""
    attributes: dict[str, AttributeP] = field(default_factory=dict)

    def attr_i(self, key: str, default: int | None = None) -> int | None:
        a = self.attributes.get(key)
        return a.i if a is not None else default

    def attr_f(self, key: str, default: float | None = None) -> float | None:
        a = self.attributes.get(key)
        return a.f if a is not None else default

    def attr_ints(self, key: str, default=None):
        a = self.attributes.get(key)
        return list(a.ints) if a is not None else default

    def attr_s(self, key: str, default: str | None = None) -> str | None:
        a = self.attributes.get(key)
        return a.s.decode() if a is not None else default


@dataclass
class ValueInfoP:
    name: str
    elem_type: int = DT_FLOAT
    dims: tuple[object, ...] = ()  # ints, or strings for symbolic dims


@dataclass
class GraphP:
    nodes: list[NodeP] = field(default_factory=list)
    name: str = "graph"
    initializers: list[TensorP] = field(default_factory=list)
    inputs: list[ValueInfoP] = field(default_factory=list)
    outputs: list[ValueInfoP] = field(default_factory=list)


@dataclass
class ModelP:
    graph: GraphP
    ir_version: int = 8
    opset: int = 13
    producer: str = "mce-convert"


# ---------------------------------------------------------------- writing

def _varint(value: int) -> bytes:
    if value < 0:
        value += 1 << 64  # two's complement int64
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def _tag(fieldno: int, wire: int) -> bytes:
    return _varint(fieldno << 3 | wire)


def _w_uint(fieldno: int, value: int) -> bytes:
    return _tag(fieldno, 0) + _varint(value)


def _w_bytes(fieldno: int, payload: bytes) -> bytes:
    return _tag(fieldno, 2) + _varint(len(payload)) + payload


def _w_str(fieldno: int, text: str) -> bytes:
    return _w_bytes(fieldno, text.encode("utf-8"))


def _w_float(fieldno: int, value: float) -> bytes:
    return _tag(fieldno, 5) + struct.pack("<f", value)


def _enc_tensor(t: TensorP) -> bytes:
    out = b"".join(_w_uint(1, d) for d in t.dims)
    out += _w_uint(2, t.data_type)
    out += _w_str(8, t.name)
    out += _w_bytes(9, t.raw)
    return out


def _enc_attribute(a: AttributeP) -> bytes:
    out = _w_str(1, a.name)
    if a.type == ATTR_FLOAT:
        out += _w_float(2, a.f)
    elif a.type == ATTR_INT:
        out += _w_uint(3, a.i)
    elif a.type == ATTR_STRING:
        out += _w_bytes(4, a.s)
    elif a.type == ATTR_TENSOR:
        out += _w_bytes(5, _enc_tensor(a.t))
    elif a.type == ATTR_FLOATS:
        out += b"".join(_w_float(7, v) for v in a.floats)
    elif a.type == ATTR_INTS:
        out += b"".join(_w_uint(8, v) for v in a.ints)
    else:
        raise ValueError(f"cannot encode attribute type {a.type}")
    out += _w_uint(20, a.type)
    return out


def _enc_dim(d) -> bytes:
    if isinstance(d, str):
        return _w_str(2, d)
    return _w_uint(1, int(d))


def _enc_value_info(v: ValueInfoP) -> bytes:
    shape = b"".join(_w_bytes(1, _enc_dim(d)) for d in v.dims)
    tensor_type = _w_uint(1, v.elem_type) + _w_bytes(2, shape)
    return _w_str(1, v.name) + _w_bytes(2, _w_bytes(1, tensor_type))


def _enc_node(n: NodeP) -> bytes:
    out = b"".join(_w_str(1, s) for s in n.inputs)
    out += b"".join(_w_str(2, s) for s in n.outputs)
    if n.name:
        out += _w_str(3, n.name)
    out += _w_str(4, n.op_type)
    out += b"".join(_w_bytes(5, _enc_attribute(a)) for a in n.attributes.values())
    return out


def _enc_graph(g: GraphP) -> bytes:
    out = b"".join(_w_bytes(1, _enc_node(n)) for n in g.nodes)
    out += _w_str(2, g.name)
    out += b"".join(_w_bytes(5, _enc_tensor(t)) for t in g.initializers)
    out += b"".join(_w_bytes(11, _enc_value_info(v)) for v in g.inputs)
    out += b"".join(_w_bytes(12, _enc_value_info(v)) for v in g.outputs)
    return out


def model_to_bytes(m: ModelP) -> bytes:
    out = _w_uint(1, m.ir_version)
    out += _w_str(2, m.producer)
    out += _w_bytes(7, _enc_graph(m.graph))
    out += _w_bytes(8, _w_str(1, "") + _w_uint(2, m.opset))
    return out


# ---------------------------------------------------------------- reading

def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise OnnxDecodeError("truncated varint")
        byte = buf[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            break
        shift += 7
        if shift > 70:
            raise OnnxDecodeError("varint too long")
    return result, pos


def _signed(value: int) -> int:
    return value - (1 << 64) if value >= (1 << 63) else value


def _fields(buf: bytes):
    pos = 0
    while pos < len(buf):
        tag, pos = _read_varint(buf, pos)
        fieldno, wire = tag >> 3, tag & 7
        if wire == 0:
            value, pos = _read_varint(buf, pos)
            yield fieldno, wire, value
        elif wire == 1:
            yield fieldno, wire, buf[pos:pos + 8]
            pos += 8
        elif wire == 2:
            length, pos = _read_varint(buf, pos)
            if pos + length > len(buf):
                raise OnnxDecodeError("truncated length-delimited field")
            yield fieldno, wire, buf[pos:pos + length]
            pos += length
        elif wire == 5:
            yield fieldno, wire, buf[pos:pos + 4]
            pos += 4
        else:
            raise OnnxDecodeError(f"unsupported wire type {wire}")


def _repeated_i64(existing: list[int], wire: int, value) -> None:
    if wire == 0:
        existing.append(_signed(value))
    else:  # packed
        pos = 0
        while pos < len(value):
            v, pos = _read_varint(value, pos)
            existing.append(_signed(v))


def _dec_tensor(buf: bytes) -> TensorP:
    t = TensorP()
    dims: list[int] = []
    float_data: list[float] = []
    int64_data: list[int] = []
    for fieldno, wire, value in _fields(buf):
        if fieldno == 1:
            _repeated_i64(dims, wire, value)
        elif fieldno == 2 and wire == 0:
            t.data_type = value
        elif fieldno == 4:  # packed float_data
            if wire == 2:
                float_data.extend(struct.unpack(f"<{len(value) // 4}f", value))
            else:
                float_data.append(struct.unpack("<f", value)[0])
        elif fieldno == 7:
            _repeated_i64(int64_data, wire, value)
        elif fieldno == 8 and wire == 2:
            t.name = value.decode("utf-8")
        elif fieldno == 9 and wire == 2:
            t.raw = bytes(value)
    t.dims = tuple(dims)
    if not t.raw and float_data:
        t.raw = np.asarray(float_data, dtype=np.float32).tobytes()
    if not t.raw and int64_data:
        t.raw = np.asarray(int64_data, dtype=np.int64).tobytes()
    return t


def _dec_attribute(buf: bytes) -> AttributeP:
    a = AttributeP(name="", type=0)
    floats: list[float] = []
    ints: list[int] = []
    for fieldno, wire, value in _fields(buf):
        if fieldno == 1 and wire == 2:
            a.name = value.decode("utf-8")
        elif fieldno == 2:
            a.f = struct.unpack("<f", value)[0]
        elif fieldno == 3 and wire == 0:
            a.i = _signed(value)
        elif fieldno == 4 and wire == 2:
            a.s = bytes(value)
        elif fieldno == 5 and wire == 2:
            a.t = _dec_tensor(value)
        elif fieldno == 7:
            if wire == 5:
                floats.append(struct.unpack("<f", value)[0])
            elif wire == 2:
                floats.extend(struct.unpack(f"<{len(value) // 4}f", value))
        elif fieldno == 8:
            _repeated_i64(ints, wire, value)
        elif fieldno == 20 and wire == 0:
            a.type = value
    a.floats = tuple(floats)
    a.ints = tuple(ints)
    if a.type == 0:  # ancient files omit the type tag; infer
        if ints:
            a.type = ATTR_INTS
        elif floats:
            a.type = ATTR_FLOATS
    return a


def _dec_value_info(buf: bytes) -> ValueInfoP:
    v = ValueInfoP(name="")
    for fieldno, wire, value in _fields(buf):
        if fieldno == 1 and wire == 2:
            v.name = value.decode("utf-8")
        elif fieldno == 2 and wire == 2:  # TypeProto
            for f2, w2, v2 in _fields(value):
                if f2 == 1 and w2 == 2:  # tensor_type
                    dims: list[object] = []
                    for f3, w3, v3 in _fields(v2):
                        if f3 == 1 and w3 == 0:
                            v.elem_type = v3
                        elif f3 == 2 and w3 == 2:  # shape
                            for f4, w4, v4 in _fields(v3):
                                if f4 == 1 and w4 == 2:  # dimension
                                    dim: object = 0
                                    for f5, w5, v5 in _fields(v4):
                                        if f5 == 1 and w5 == 0:
                                            dim = _signed(v5)
                                        elif f5 == 2 and w5 == 2:
                                            dim = v5.decode("utf-8")
                                    dims.append(dim)
                    v.dims = tuple(dims)
    return v


def _dec_node(buf: bytes) -> NodeP:
    inputs: list[str] = []
    outputs: list[str] = []
    name = ""
    op_type = ""
    attributes: dict[str, AttributeP] = {}
    for fieldno, wire, value in _fields(buf):
        if fieldno == 1 and wire == 2:
            inputs.append(value.decode("utf-8"))
        elif fieldno == 2 and wire == 2:
            outputs.append(value.decode("utf-8"))
        elif fieldno == 3 and wire == 2:
            name = value.decode("utf-8")
        elif fieldno == 4 and wire == 2:
            op_type = value.decode("utf-8")
        elif fieldno == 5 and wire == 2:
            attr = _dec_attribute(value)
            attributes[attr.name] = attr
    return NodeP(op_type, tuple(inputs), tuple(outputs), name, attributes)


def _dec_graph(buf: bytes) -> GraphP:
    g = GraphP()
    for fieldno, wire, value in _fields(buf):
        if fieldno == 1 and wire == 2:
            g.nodes.append(_dec_node(value))
        elif fieldno == 2 and wire == 2:
            g.name = value.decode("utf-8")
        elif fieldno == 5 and wire == 2:
            g.initializers.append(_dec_tensor(value))
        elif fieldno == 11 and wire == 2:
            g.inputs.append(_dec_value_info(value))
        elif fieldno == 12 and wire == 2:
            g.outputs.append(_dec_value_info(value))
    return g


def model_from_bytes(data: bytes) -> ModelP:
    graph = None
    ir_version = 0
    opset = 0
    producer = ""
    for fieldno, wire, value in _fields(data):
        if fieldno == 1 and wire == 0:
            ir_version = value
        elif fieldno == 2 and wire == 2:
            producer = value.decode("utf-8", errors="replace")
        elif fieldno == 7 and wire == 2:
            graph = _dec_graph(value)
        elif fieldno == 8 and wire == 2:
            for f2, w2, v2 in _fields(value):
                if f2 == 2 and w2 == 0:
                    opset = max(opset, v2)
    if graph is None:
        raise OnnxDecodeError("no graph in model file")
    return ModelP(graph=graph, ir_version=ir_version, opset=opset, producer=producer)


def load_model(path) -> ModelP:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())


def save_model(model: ModelP, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))
