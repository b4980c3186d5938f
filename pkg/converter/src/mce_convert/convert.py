"""ONNX -> MCE conversion for MobileNetV2-family binary classifiers.

Op mapping: Conv -> Conv2D (grouped depthwise Conv ->
DepthwiseConv2dNative), Gemm/MatMul -> MatMul, Clip(0,6) -> Relu6,
GlobalAveragePool/ReduceMean -> Mean, Add -> AddV2, Mul -> Mul,
Pad -> Pad. Layout moves from NCHW to NHWC (weights to HWIO / HWC).

Batch normalization is folded to match the engine's representation:
after a regular conv it disappears into the weights and bias add; after
a depthwise conv it stays visible as a per-channel Mul followed by an
AddV2. Conv padding is normalized: zero pads become VALID, pads equal
to the TF SAME arithmetic become the SAME attr, anything else is kept
as explicit per-edge amounts.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mce_format import McGraph, save_graph
from .onnx_proto import ModelP, NodeP, load_model

SUPPORTED_OPS = {
    "Conv", "BatchNormalization", "Clip", "Add", "Mul", "Pad",
    "GlobalAveragePool", "ReduceMean", "Flatten", "Reshape", "Squeeze",
    "Gemm", "MatMul", "Constant", "Identity",
}


class ConversionError(Exception):
    pass


@dataclass
class _Value:
    mce_id: int
    nchw: tuple[int, ...]


@dataclass
class _ConvInfo:
    weight_id: int
    bias_id: int | None
    depthwise: bool


def _tf_same(size: int, k: int, s: int) -> tuple[int, int]:
    out = -(-size // s)
    total = max((out - 1) * s + k - size, 0)
    before = total // 2
    return before, total - before


def _conv_out(size: int, k: int, s: int, before: int, after: int) -> int:
    return (size + before + after - k) // s + 1


class _Converter:
    def __init__(self, model: ModelP):
        self.graph = model.graph
        self.inits: dict[str, np.ndarray] = {t.name: t.to_array()
                                             for t in self.graph.initializers}
        for node in self.graph.nodes:
            if node.op_type == "Constant":
                attr = node.attributes.get("value")
                if attr is None or attr.t is None:
                    raise ConversionError("Constant node without tensor payload")
                self.inits[node.outputs[0]] = attr.t.to_array()
        self.consumers = Counter()
        for node in self.graph.nodes:
            for name in node.inputs:
                self.consumers[name] += 1
        self.values: dict[str, _Value] = {}
        self.provenance: dict[str, _ConvInfo] = {}
        self.out = McGraph(name=self.graph.name or "converted", precision="original")

    # -------------------------------------------------------------- helpers

    def _value(self, name: str) -> _Value:
        if name not in self.values:
            raise ConversionError(f"tensor {name!r} is not available; "
                                  "graph may not be topologically sorted")
        return self.values[name]

    def _const_vector(self, name: str, channels: int) -> np.ndarray:
        arr = self.inits[name].astype(np.float32)
        squeezed = arr.reshape(-1)
        if squeezed.size == 1:
            return squeezed
        if squeezed.size != channels:
            raise ConversionError(f"constant {name!r} of shape {arr.shape} does not "
                                  f"broadcast per-channel over {channels} channels")
        return squeezed

    def _nhwc(self, nchw: tuple[int, ...]) -> tuple[int, ...]:
        if len(nchw) == 4:
            n, c, h, w = nchw
            return (n, h, w, c)
        return nchw

    # ------------------------------------------------------------ op lowering

    def _conv(self, node: NodeP) -> None:
        x = self._value(node.inputs[0])
        if node.inputs[1] not in self.inits:
            raise ConversionError(f"conv weight {node.inputs[1]!r} is not constant")
        w = self.inits[node.inputs[1]].astype(np.float32)
        if w.ndim != 4:
            raise ConversionError(f"conv weight rank {w.ndim} unsupported")
        strides = tuple(node.attr_ints("strides", [1, 1]))
        dilations = node.attr_ints("dilations", [1, 1])
        if any(d != 1 for d in dilations):
            raise ConversionError("dilated convolutions are unsupported")
        group = node.attr_i("group", 1)
        n, ci, h, wd = x.nchw
        co, cig, kh, kw = w.shape

        depthwise = group > 1
        if depthwise:
            if group != ci or cig != 1 or co != ci:
                raise ConversionError(
                    f"grouped conv with group={group}, Ci={ci}, Co={co} is not a "
                    "multiplier-1 depthwise conv")
            kernel = np.transpose(w[:, 0, :, :], (1, 2, 0))  # (kh, kw, C)
            op = "DepthwiseConv2dNative"
        else:
            kernel = np.transpose(w, (2, 3, 1, 0))  # HWIO
            op = "Conv2D"

        auto = node.attr_s("auto_pad", "NOTSET")
        if auto in ("SAME_UPPER",):
            padding, pads_attr = "SAME", None
            pt, pb = _tf_same(h, kh, strides[0])
            pl, pr = _tf_same(wd, kw, strides[1])
        elif auto in ("NOTSET", "", "VALID"):
            pt, pl, pb, pr = (node.attr_ints("pads", [0, 0, 0, 0])
                              if auto != "VALID" else [0, 0, 0, 0])
            if (pt, pl, pb, pr) == (0, 0, 0, 0):
                padding, pads_attr = "VALID", None
            elif (pt, pb) == _tf_same(h, kh, strides[0]) and \
                    (pl, pr) == _tf_same(wd, kw, strides[1]):
                padding, pads_attr = "SAME", None
            else:
                padding, pads_attr = "EXPLICIT", [[pt, pb], [pl, pr]]
        else:
            raise ConversionError(f"unsupported auto_pad {auto!r}")

        oh = _conv_out(h, kh, strides[0], pt, pb)
        ow = _conv_out(wd, kw, strides[1], pl, pr)
        if oh < 1 or ow < 1:
            raise ConversionError(f"conv collapses spatial dims to {oh}x{ow}")
        out_nchw = (n, co, oh, ow)

        wid = self.out.add_const(kernel)
        attrs = {"strides": [int(s) for s in strides], "padding": padding}
        if pads_attr is not None:
            attrs["pads"] = pads_attr
        tid = self.out.add(op, (x.mce_id, wid), attrs, self._nhwc(out_nchw))

        bias_id = None
        if len(node.inputs) > 2 and node.inputs[2]:
            bias_const = self.out.add_const(self._const_vector(node.inputs[2], co))
            tid = self.out.add("AddV2", (tid, bias_const), {}, self._nhwc(out_nchw))
            bias_id = bias_const

        self.values[node.outputs[0]] = _Value(tid, out_nchw)
        self.provenance[node.outputs[0]] = _ConvInfo(wid, bias_id, depthwise)

    def _batch_norm(self, node: NodeP) -> None:
        src_name = node.inputs[0]
        x = self._value(src_name)
        gamma, beta, mean, var = (self.inits[name].astype(np.float64)
                                  for name in node.inputs[1:5])
        eps = node.attr_f("epsilon", 1e-5)
        scale = (gamma / np.sqrt(var + eps)).astype(np.float32)
        shift = (beta - mean * gamma / np.sqrt(var + eps)).astype(np.float32)

        prov = self.provenance.get(src_name)
        foldable = prov is not None and self.consumers[src_name] == 1
        if foldable and not prov.depthwise:
            # scale the conv's output channels in place; shift via bias
            weight_node = self.out.nodes[prov.weight_id]
            weight_node.payload = weight_node.payload * scale
            if prov.bias_id is not None:
                bias_node = self.out.nodes[prov.bias_id]
                bias_node.payload = bias_node.payload * scale + shift
                tid = x.mce_id
            else:
                bias_const = self.out.add_const(shift)
                tid = self.out.add("AddV2", (x.mce_id, bias_const), {},
                                   self._nhwc(x.nchw))
        else:
            # depthwise (or unfoldable) keeps the explicit Mul/AddV2 pair
            scale_const = self.out.add_const(scale)
            tid = self.out.add("Mul", (x.mce_id, scale_const), {}, self._nhwc(x.nchw))
            shift_const = self.out.add_const(shift)
            tid = self.out.add("AddV2", (tid, shift_const), {}, self._nhwc(x.nchw))
        self.values[node.outputs[0]] = _Value(tid, x.nchw)

    def _clip(self, node: NodeP) -> None:
        x = self._value(node.inputs[0])
        if len(node.inputs) > 1 and node.inputs[1]:
            lo = float(self.inits[node.inputs[1]].reshape(()))
            hi = float(self.inits[node.inputs[2]].reshape(()))
        else:
            lo = node.attr_f("min", float("-inf"))
            hi = node.attr_f("max", float("inf"))
        if (lo, hi) != (0.0, 6.0):
            raise ConversionError(f"Clip({lo}, {hi}) is not the relu6 pattern")
        tid = self.out.add("Relu6", (x.mce_id,), {}, self._nhwc(x.nchw))
        self.values[node.outputs[0]] = _Value(tid, x.nchw)

    def _elementwise(self, node: NodeP, op: str) -> None:
        a_name, b_name = node.inputs[0], node.inputs[1]
        a_dyn = a_name in self.values
        b_dyn = b_name in self.values
        if a_dyn and b_dyn:
            a = self._value(a_name)
            b = self._value(b_name)
            if a.nchw != b.nchw:
                raise ConversionError(f"{op} operands disagree: {a.nchw} vs {b.nchw}")
            tid = self.out.add(op, (a.mce_id, b.mce_id), {}, self._nhwc(a.nchw))
            self.values[node.outputs[0]] = _Value(tid, a.nchw)
            return
        dyn_name, const_name = (a_name, b_name) if a_dyn else (b_name, a_name)
        x = self._value(dyn_name)
        channels = x.nchw[1] if len(x.nchw) == 4 else x.nchw[-1]
        const = self.out.add_const(self._const_vector(const_name, channels))
        tid = self.out.add(op, (x.mce_id, const), {}, self._nhwc(x.nchw))
        self.values[node.outputs[0]] = _Value(tid, x.nchw)

    def _pad(self, node: NodeP) -> None:
        x = self._value(node.inputs[0])
        mode = node.attr_s("mode", "constant")
        if mode != "constant":
            raise ConversionError(f"Pad mode {mode!r} unsupported")
        if len(node.inputs) > 1 and node.inputs[1]:
            pads = self.inits[node.inputs[1]].astype(np.int64).tolist()
            if len(node.inputs) > 2 and node.inputs[2]:
                value = float(self.inits[node.inputs[2]].reshape(()))
                if value != 0.0:
                    raise ConversionError("Pad with non-zero constant unsupported")
        else:
            pads = node.attr_ints("pads")
        rank = len(x.nchw)
        if len(pads) != 2 * rank:
            raise ConversionError(f"Pad expects {2 * rank} amounts, got {len(pads)}")
        begins, ends = pads[:rank], pads[rank:]
        if begins[0] or ends[0] or begins[1] or ends[1]:
            raise ConversionError("padding batch or channel dims is unsupported")
        n, c, h, w = x.nchw
        out_nchw = (n, c, h + begins[2] + ends[2], w + begins[3] + ends[3])
        paddings = [[0, 0], [begins[2], ends[2]], [begins[3], ends[3]], [0, 0]]
        tid = self.out.add("Pad", (x.mce_id,), {"paddings": paddings},
                           self._nhwc(out_nchw))
        self.values[node.outputs[0]] = _Value(tid, out_nchw)

    def _mean(self, node: NodeP) -> None:
        x = self._value(node.inputs[0])
        n, c, h, w = x.nchw
        if node.op_type == "ReduceMean":
            axes = node.attr_ints("axes")
            if axes is None and len(node.inputs) > 1:
                axes = self.inits[node.inputs[1]].astype(np.int64).tolist()
            if sorted(int(a) % 4 for a in axes) != [2, 3]:
                raise ConversionError(f"ReduceMean over axes {axes} is not a "
                                      "spatial mean")
            keep = bool(node.attr_i("keepdims", 1))
        else:
            keep = True
        tid = self.out.add("Mean", (x.mce_id,), {"axes": [1, 2]}, (n, c))
        out_nchw = (n, c, 1, 1) if keep else (n, c)
        self.values[node.outputs[0]] = _Value(tid, out_nchw)

    def _flattenish(self, node: NodeP) -> None:
        x = self._value(node.inputs[0])
        if len(x.nchw) == 4:
            n, c, h, w = x.nchw
            if (h, w) != (1, 1):
                raise ConversionError(f"{node.op_type} over non-unit spatial dims "
                                      f"{x.nchw} is unsupported")
            self.values[node.outputs[0]] = _Value(x.mce_id, (n, c))
        else:
            self.values[node.outputs[0]] = _Value(x.mce_id, x.nchw)

    def _gemm(self, node: NodeP) -> None:
        x = self._value(node.inputs[0])
        if len(x.nchw) != 2:
            raise ConversionError(f"Gemm input rank {len(x.nchw)} unsupported")
        if node.inputs[1] not in self.inits:
            raise ConversionError("Gemm weight must be constant")
        w = self.inits[node.inputs[1]].astype(np.float32)
        if node.op_type == "Gemm":
            if node.attr_f("alpha", 1.0) != 1.0 or node.attr_f("beta", 1.0) != 1.0 \
                    or node.attr_i("transA", 0):
                raise ConversionError("Gemm with non-default alpha/beta/transA")
            if node.attr_i("transB", 0):
                w = w.T
        k, m = w.shape
        if x.nchw[1] != k:
            raise ConversionError(f"Gemm inner dims disagree: {x.nchw} x {w.shape}")
        wid = self.out.add_const(np.ascontiguousarray(w))
        tid = self.out.add("MatMul", (x.mce_id, wid), {}, (x.nchw[0], m))
        out_nchw = (x.nchw[0], m)
        if node.op_type == "Gemm" and len(node.inputs) > 2 and node.inputs[2]:
            bias = self.out.add_const(self._const_vector(node.inputs[2], m))
            tid = self.out.add("AddV2", (tid, bias), {}, out_nchw)
        self.values[node.outputs[0]] = _Value(tid, out_nchw)

    # ---------------------------------------------------------------- driver

    def run(self) -> McGraph:
        unmapped = sorted({n.op_type for n in self.graph.nodes
                           if n.op_type not in SUPPORTED_OPS})
        if unmapped:
            raise ConversionError(f"unmapped ops: {', '.join(unmapped)}")
        if len(self.graph.outputs) != 1:
            raise ConversionError(f"expected one graph output, "
                                  f"found {len(self.graph.outputs)}")

        real_inputs = [v for v in self.graph.inputs if v.name not in self.inits]
        if len(real_inputs) != 1:
            raise ConversionError(f"expected one graph input, found {len(real_inputs)}")
        info = real_inputs[0]
        if len(info.dims) != 4:
            raise ConversionError(f"input rank {len(info.dims)} unsupported")
        dims = list(info.dims)
        if isinstance(dims[0], str) or dims[0] in (0, -1):
            dims[0] = 1  # free batch dim
        if any(isinstance(d, str) or d < 1 for d in dims[1:]):
            raise ConversionError(f"dynamic input shape {info.dims} unsupported")
        n, c, h, w = (int(d) for d in dims)
        anchor = self.out.add_input(info.name, (n, h, w, c))
        self.values[info.name] = _Value(anchor, (n, c, h, w))

        for node in self.graph.nodes:
            op = node.op_type
            if op == "Constant":
                continue
            if op == "Identity":
                self.values[node.outputs[0]] = self._value(node.inputs[0])
            elif op == "Conv":
                self._conv(node)
            elif op == "BatchNormalization":
                self._batch_norm(node)
            elif op == "Clip":
                self._clip(node)
            elif op in ("Add", "Mul"):
                self._elementwise(node, "AddV2" if op == "Add" else "Mul")
            elif op == "Pad":
                self._pad(node)
            elif op in ("GlobalAveragePool", "ReduceMean"):
                self._mean(node)
            elif op in ("Flatten", "Reshape", "Squeeze"):
                self._flattenish(node)
            elif op in ("Gemm", "MatMul"):
                self._gemm(node)

        out_name = self.graph.outputs[0].name
        self.out.outputs = [self._value(out_name).mce_id]
        return self.out


def convert_model(model: ModelP) -> McGraph:
    return _Converter(model).run()


def convert(onnx_path, out_path) -> dict[str, int]:
    """Convert an ONNX file to an MCE model file (plus manifest sidecar);
    returns the emitted op histogram."""
    graph = convert_model(load_model(onnx_path))
    save_graph(graph, Path(out_path))
    return graph.histogram()
