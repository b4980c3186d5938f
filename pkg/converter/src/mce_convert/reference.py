"""Reference evaluation of the supported ONNX subset.

A float64 NCHW interpreter for the ops the converter maps (Conv with
groups, BatchNormalization, Clip, Add, Mul, Pad, pooling/reduction,
reshapes, Gemm). Serves as the source-runtime side of conversion
verification when no vendor ONNX runtime is available.
"""

from __future__ import annotations

import numpy as np

from .onnx_proto import GraphP, ModelP, NodeP


class ReferenceError(Exception):
    pass


def _conv_nchw(x, w, strides, pads, group):
    n, ci, h, wd = x.shape
    co, cig, kh, kw = w.shape
    pt, pl, pb, pr = pads
    x = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    sh, sw = strides
    oh = (x.shape[2] - kh) // sh + 1
    ow = (x.shape[3] - kw) // sw + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::sh, ::sw]  # [N, Ci, OH, OW, KH, KW]
    if group == 1:
        return np.einsum("nchwkl,ockl->nohw", win, w, optimize=True)
    if group == ci and cig == 1:
        if co != ci:
            raise ReferenceError("depthwise multiplier != 1 is unsupported")
        return np.einsum("nchwkl,ckl->nchw", win, w[:, 0], optimize=True)
    raise ReferenceError(f"unsupported group count {group}")


def _auto_pads(node: NodeP, in_hw, k_hw, strides):
    mode = node.attr_s("auto_pad", "NOTSET")
    if mode in ("NOTSET", ""):
        pads = node.attr_ints("pads", [0, 0, 0, 0])
        return tuple(int(p) for p in pads)
    if mode == "VALID":
        return (0, 0, 0, 0)
    if mode in ("SAME_UPPER", "SAME_LOWER"):
        out = []
        for size, k, s in zip(in_hw, k_hw, strides):
            o = -(-size // s)
            total = max((o - 1) * s + k - size, 0)
            small = total // 2
            big = total - small
            out.append((small, big) if mode == "SAME_UPPER" else (big, small))
        (pt, pb), (pl, pr) = out
        return (pt, pl, pb, pr)
    raise ReferenceError(f"unsupported auto_pad {mode}")


class Evaluator:
    def __init__(self, model: ModelP):
        self.graph: GraphP = model.graph
        self.inits: dict[str, np.ndarray] = {}
        for t in self.graph.initializers:
            self.inits[t.name] = t.to_array()
        for node in self.graph.nodes:
            if node.op_type == "Constant":
                attr = node.attributes.get("value")
                if attr is None or attr.t is None:
                    raise ReferenceError("Constant node without tensor value")
                self.inits[node.outputs[0]] = attr.t.to_array()

    def input_name(self) -> str:
        names = [v.name for v in self.graph.inputs if v.name not in self.inits]
        if len(names) != 1:
            raise ReferenceError(f"expected one graph input, found {len(names)}")
        return names[0]

    def run(self, x: np.ndarray) -> np.ndarray:
        values: dict[str, np.ndarray] = {self.input_name(): np.asarray(x, np.float64)}

        def get(name: str) -> np.ndarray:
            if name in values:
                return values[name]
            if name in self.inits:
                return self.inits[name].astype(np.float64)
            raise ReferenceError(f"value {name!r} not computed yet")

        for node in self.graph.nodes:
            op = node.op_type
            if op in ("Constant", "Identity"):
                if op == "Identity":
                    values[node.outputs[0]] = get(node.inputs[0])
                continue
            if op == "Conv":
                x_in = get(node.inputs[0])
                w = get(node.inputs[1])
                strides = tuple(node.attr_ints("strides", [1, 1]))
                group = node.attr_i("group", 1)
                pads = _auto_pads(node, x_in.shape[2:], w.shape[2:], strides)
                out = _conv_nchw(x_in, w, strides, pads, group)
                if len(node.inputs) > 2 and node.inputs[2]:
                    out = out + get(node.inputs[2])[None, :, None, None]
                values[node.outputs[0]] = out
            elif op == "BatchNormalization":
                x_in = get(node.inputs[0])
                gamma, beta, mean, var = (get(n) for n in node.inputs[1:5])
                eps = node.attr_f("epsilon", 1e-5)
                scale = gamma / np.sqrt(var + eps)
                values[node.outputs[0]] = (x_in - mean[None, :, None, None]) * \
                    scale[None, :, None, None] + beta[None, :, None, None]
            elif op == "Clip":
                x_in = get(node.inputs[0])
                if len(node.inputs) > 1 and node.inputs[1]:
                    lo = float(get(node.inputs[1]))
                    hi = float(get(node.inputs[2]))
                else:
                    lo = node.attr_f("min", -np.inf)
                    hi = node.attr_f("max", np.inf)
                values[node.outputs[0]] = np.clip(x_in, lo, hi)
            elif op == "Add":
                values[node.outputs[0]] = get(node.inputs[0]) + get(node.inputs[1])
            elif op == "Mul":
                values[node.outputs[0]] = get(node.inputs[0]) * get(node.inputs[1])
            elif op == "Pad":
                x_in = get(node.inputs[0])
                if len(node.inputs) > 1 and node.inputs[1]:
                    pads = get(node.inputs[1]).astype(np.int64)
                else:
                    pads = np.asarray(node.attr_ints("pads"), np.int64)
                rank = x_in.ndim
                pairs = [(int(pads[i]), int(pads[i + rank])) for i in range(rank)]
                values[node.outputs[0]] = np.pad(x_in, pairs)
            elif op == "GlobalAveragePool":
                values[node.outputs[0]] = get(node.inputs[0]).mean(
                    axis=(2, 3), keepdims=True)
            elif op == "ReduceMean":
                x_in = get(node.inputs[0])
                axes = node.attr_ints("axes")
                if axes is None and len(node.inputs) > 1:
                    axes = get(node.inputs[1]).astype(np.int64).tolist()
                keep = bool(node.attr_i("keepdims", 1))
                values[node.outputs[0]] = x_in.mean(
                    axis=tuple(int(a) % x_in.ndim for a in axes), keepdims=keep)
            elif op in ("Flatten", "Reshape", "Squeeze"):
                x_in = get(node.inputs[0])
                values[node.outputs[0]] = x_in.reshape(x_in.shape[0], -1)
            elif op == "Gemm":
                a = get(node.inputs[0])
                b = get(node.inputs[1])
                if node.attr_i("transA", 0):
                    a = a.T
                if node.attr_i("transB", 0):
                    b = b.T
                out = node.attr_f("alpha", 1.0) * (a @ b)
                if len(node.inputs) > 2 and node.inputs[2]:
                    out = out + node.attr_f("beta", 1.0) * get(node.inputs[2])
                values[node.outputs[0]] = out
            else:
                raise ReferenceError(f"reference evaluator cannot run {op}")

        return values[self.graph.outputs[0].name]
