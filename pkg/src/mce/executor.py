"""Reference executor: FP32 kernels plus emulated FP16 and INT8.

Every kernel fixes its accumulation order (ascending kernel/channel
index, batch vectorized) so FP32 results are bit-reproducible and INT8
requantization is host-independent. FP16 ops compute in FP32 and round
each node output to half precision, saturating at +/-65504. INT8
conv/matmul accumulate in INT32 and requantize with a double-precision
multiplier under round-half-to-even; remaining INT8 ops dequantize,
compute in float, and requantize to the node's output params.

An :class:`Executor` instance owns per-run state and must not be shared
across threads; any number of executors may read the same graph
concurrently. Benchmarks should pin execution to a single thread.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .ir import (
    DType,
    Graph,
    OpKind,
    QuantParams,
    TensorSpec,
    same_padding,
    topo_sort,
    validate,
)

FP16_MAX = 65504.0


class ExecError(Exception):
    """Execution failure: bad shapes, dtypes, or missing inputs."""


@dataclass(frozen=True)
class TensorValue:
    """A tensor spec paired with its row-major element buffer."""

    spec: TensorSpec
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.data.dtype != self.spec.dtype.np:
            raise ExecError(f"buffer dtype {self.data.dtype} does not match spec "
                            f"{self.spec.dtype.value}")
        if self.data.size != self.spec.num_elements:
            raise ExecError(f"buffer has {self.data.size} elements, spec wants "
                            f"{self.spec.num_elements}")


def tensor(values: np.ndarray, dtype: DType = DType.FP32,
           quant: QuantParams | None = None) -> TensorValue:
    arr = np.ascontiguousarray(values, dtype=dtype.np)
    shape = arr.shape if arr.shape else (1,)
    return TensorValue(TensorSpec(shape, dtype, quant), arr.reshape(shape))


@dataclass
class ExecOptions:
    check_shapes: bool = True
    record_per_node_timing: bool = False


@dataclass
class RunResult:
    outputs: dict[str, TensorValue]
    timings: dict[int, float] | None = None


def _out(values: np.ndarray, dtype: DType, quant: QuantParams | None = None) -> TensorValue:
    return TensorValue(TensorSpec(values.shape, dtype, quant), values)


def _to_fp16(values: np.ndarray) -> np.ndarray:
    return np.clip(values, -FP16_MAX, FP16_MAX).astype(np.float16)


def _require_quant(value: TensorValue, what: str) -> QuantParams:
    if value.spec.quant is None:
        raise ExecError(f"{what}: INT8 tensor without quant params")
    return value.spec.quant


def _requantize(acc: np.ndarray, multiplier: float, out_quant: QuantParams) -> np.ndarray:
    scaled = np.rint(acc.astype(np.float64) * multiplier) + out_quant.zero_point
    return np.clip(scaled, -128, 127).astype(np.int8)


def _pad_spatial(x: np.ndarray, pads, fill) -> np.ndarray:
    (pt, pb), (pl, pr) = pads
    if pt == pb == pl == pr == 0:
        return x
    return np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)),
                  constant_values=fill)


def _resolve_conv_pads(in_hw, k_hw, strides, padding, pads):
    if pads is not None:
        return tuple(tuple(int(v) for v in p) for p in pads)
    if padding == "SAME":
        return same_padding(in_hw, k_hw, strides)
    if padding == "VALID":
        return ((0, 0), (0, 0))
    raise ExecError(f"unknown padding mode {padding!r}")


def _conv_core_f32(x: np.ndarray, w: np.ndarray, sh: int, sw: int) -> np.ndarray:
    """Cross-correlation over a pre-padded input, accumulating in FP32
    in ascending (kh, kw, ci) order."""
    kh, kw, ci, co = w.shape
    oh = (x.shape[1] - kh) // sh + 1
    ow = (x.shape[2] - kw) // sw + 1
    acc = np.zeros((x.shape[0], oh, ow, co), np.float32)
    tmp = np.empty_like(acc)
    for ih in range(kh):
        for iw in range(kw):
            win = x[:, ih:ih + (oh - 1) * sh + 1:sh, iw:iw + (ow - 1) * sw + 1:sw, :]
            for c in range(ci):
                np.multiply(win[..., c, None], w[ih, iw, c], out=tmp)
                acc += tmp
    return acc


def _conv_core_i32(x: np.ndarray, w: np.ndarray, sh: int, sw: int) -> np.ndarray:
    kh, kw, ci, co = w.shape
    oh = (x.shape[1] - kh) // sh + 1
    ow = (x.shape[2] - kw) // sw + 1
    acc = np.zeros((x.shape[0], oh, ow, co), np.int32)
    tmp = np.empty_like(acc)
    for ih in range(kh):
        for iw in range(kw):
            win = x[:, ih:ih + (oh - 1) * sh + 1:sh, iw:iw + (ow - 1) * sw + 1:sw, :]
            for c in range(ci):
                np.multiply(win[..., c, None], w[ih, iw, c], out=tmp)
                acc += tmp
    return acc


def conv2d(x: TensorValue, w: TensorValue, strides=(1, 1), padding: str = "SAME",
           pads=None, out_quant: QuantParams | None = None) -> TensorValue:
    """2-D cross-correlation, NHWC input against HWIO weights."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ExecError(f"conv2d wants rank-4 operands, got {x.data.ndim} and {w.data.ndim}")
    if x.data.shape[3] != w.data.shape[2]:
        raise ExecError(f"conv2d channel mismatch: input has {x.data.shape[3]}, "
                        f"weights expect {w.data.shape[2]}")
    sh, sw = (int(s) for s in strides)
    if sh < 1 or sw < 1:
        raise ExecError(f"strides must be >= 1, got {(sh, sw)}")
    k_hw = w.data.shape[:2]
    rp = _resolve_conv_pads(x.data.shape[1:3], k_hw, (sh, sw), padding, pads)

    dtype = x.spec.dtype
    if dtype is DType.INT8:
        in_q = _require_quant(x, "conv2d input")
        w_q = _require_quant(w, "conv2d weights")
        if out_quant is None:
            raise ExecError("conv2d: INT8 output requires quant params")
        padded = _pad_spatial(x.data, rp, np.int8(in_q.zero_point))
        acc = _conv_core_i32(padded.astype(np.int32) - in_q.zero_point,
                             w.data.astype(np.int32), sh, sw)
        out = _requantize(acc, in_q.scale * w_q.scale / out_quant.scale, out_quant)
        return _out(out, DType.INT8, out_quant)

    xf = x.data.astype(np.float32, copy=False)
    acc = _conv_core_f32(_pad_spatial(xf, rp, 0.0),
                         w.data.astype(np.float32, copy=False), sh, sw)
    if acc.shape[1] < 1 or acc.shape[2] < 1:
        raise ExecError("conv2d produced a zero-sized output")
    if dtype is DType.FP16:
        return _out(_to_fp16(acc), DType.FP16)
    return _out(acc, DType.FP32)


def depthwise_conv2d(x: TensorValue, w: TensorValue, strides=(1, 1),
                     padding: str = "SAME", pads=None,
                     out_quant: QuantParams | None = None) -> TensorValue:
    """Per-channel spatial convolution; weights are (H, W, C)."""
    if x.data.ndim != 4 or w.data.ndim != 3:
        raise ExecError(f"depthwise wants rank-4 input and rank-3 weights, "
                        f"got {x.data.ndim} and {w.data.ndim}")
    if x.data.shape[3] != w.data.shape[2]:
        raise ExecError(f"depthwise channel mismatch: input has {x.data.shape[3]}, "
                        f"weights have {w.data.shape[2]}")
    sh, sw = (int(s) for s in strides)
    kh, kw, _ = w.data.shape
    rp = _resolve_conv_pads(x.data.shape[1:3], (kh, kw), (sh, sw), padding, pads)

    def core(xp, wv, acc_dtype):
        oh = (xp.shape[1] - kh) // sh + 1
        ow = (xp.shape[2] - kw) // sw + 1
        acc = np.zeros((xp.shape[0], oh, ow, xp.shape[3]), acc_dtype)
        tmp = np.empty_like(acc)
        for ih in range(kh):
            for iw in range(kw):
                win = xp[:, ih:ih + (oh - 1) * sh + 1:sh, iw:iw + (ow - 1) * sw + 1:sw, :]
                np.multiply(win, wv[ih, iw], out=tmp)
                acc += tmp
        return acc

    dtype = x.spec.dtype
    if dtype is DType.INT8:
        in_q = _require_quant(x, "depthwise input")
        w_q = _require_quant(w, "depthwise weights")
        if out_quant is None:
            raise ExecError("depthwise: INT8 output requires quant params")
        padded = _pad_spatial(x.data, rp, np.int8(in_q.zero_point))
        acc = core(padded.astype(np.int32) - in_q.zero_point,
                   w.data.astype(np.int32), np.int32)
        out = _requantize(acc, in_q.scale * w_q.scale / out_quant.scale, out_quant)
        return _out(out, DType.INT8, out_quant)

    xf = x.data.astype(np.float32, copy=False)
    acc = core(_pad_spatial(xf, rp, 0.0), w.data.astype(np.float32, copy=False), np.float32)
    if dtype is DType.FP16:
        return _out(_to_fp16(acc), DType.FP16)
    return _out(acc, DType.FP32)


def matmul(a: TensorValue, b: TensorValue,
           out_quant: QuantParams | None = None) -> TensorValue:
    """[N, K] x [K, M] product accumulated in ascending-k order."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ExecError(f"matmul wants rank-2 operands, got {a.data.ndim} and {b.data.ndim}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ExecError(f"matmul inner dims disagree: {a.data.shape} x {b.data.shape}")

    def core(av, bv, acc_dtype):
        acc = np.zeros((av.shape[0], bv.shape[1]), acc_dtype)
        tmp = np.empty_like(acc)
        for k in range(av.shape[1]):
            np.multiply(av[:, k, None], bv[k], out=tmp)
            acc += tmp
        return acc

    dtype = a.spec.dtype
    if dtype is DType.INT8:
        a_q = _require_quant(a, "matmul lhs")
        b_q = _require_quant(b, "matmul rhs")
        if out_quant is None:
            raise ExecError("matmul: INT8 output requires quant params")
        acc = core(a.data.astype(np.int32) - a_q.zero_point,
                   b.data.astype(np.int32), np.int32)
        out = _requantize(acc, a_q.scale * b_q.scale / out_quant.scale, out_quant)
        return _out(out, DType.INT8, out_quant)

    acc = core(a.data.astype(np.float32, copy=False),
               b.data.astype(np.float32, copy=False), np.float32)
    if dtype is DType.FP16:
        return _out(_to_fp16(acc), DType.FP16)
    return _out(acc, DType.FP32)


def relu6(x: TensorValue, out_quant: QuantParams | None = None) -> TensorValue:
    if x.spec.dtype is DType.INT8:
        q = _require_quant(x, "relu6")
        oq = out_quant or q
        real = np.clip(q.dequantize(x.data), 0.0, 6.0)
        return _out(oq.quantize(real), DType.INT8, oq)
    if x.spec.dtype is DType.FP16:
        return _out(np.clip(x.data, np.float16(0), np.float16(6)), DType.FP16)
    return _out(np.clip(x.data, 0.0, 6.0).astype(np.float32, copy=False), DType.FP32)


def pad(x: TensorValue, paddings) -> TensorValue:
    """Zero padding; for INT8 the fill is the code of real zero."""
    if len(paddings) != x.data.ndim:
        raise ExecError(f"pad wants {x.data.ndim} (before, after) pairs, got {len(paddings)}")
    pairs = tuple((int(b), int(a)) for b, a in paddings)
    if any(b < 0 or a < 0 for b, a in pairs):
        raise ExecError(f"negative pad amount in {pairs}")
    if x.spec.dtype is DType.INT8:
        q = _require_quant(x, "pad")
        out = np.pad(x.data, pairs, constant_values=np.int8(q.zero_point))
        return _out(out, DType.INT8, q)
    out = np.pad(x.data, pairs, constant_values=x.data.dtype.type(0))
    return _out(out, x.spec.dtype)


def global_mean(x: TensorValue, axes=(1, 2),
                out_quant: QuantParams | None = None) -> TensorValue:
    """Average over the named axes (spatial mean for NHWC inputs),
    accumulated in float64 for exactness on constant tensors."""
    axes = tuple(int(a) for a in axes)
    if x.spec.dtype is DType.INT8:
        q = _require_quant(x, "global_mean")
        oq = out_quant or q
        real = q.dequantize(x.data).astype(np.float64).mean(axis=axes)
        return _out(oq.quantize(real), DType.INT8, oq)
    mean = x.data.astype(np.float64).mean(axis=axes)
    if x.spec.dtype is DType.FP16:
        return _out(_to_fp16(mean), DType.FP16)
    return _out(mean.astype(np.float32), DType.FP32)


def _broadcast_ok(sa: tuple[int, ...], sb: tuple[int, ...]) -> bool:
    if sa == sb:
        return True
    small, big = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    if small in ((), (1,)):
        return True
    return len(small) == 1 and len(big) >= 1 and small[0] == big[-1]


def elementwise(kind: OpKind, a: TensorValue, b: TensorValue,
                out_quant: QuantParams | None = None) -> TensorValue:
    if kind not in (OpKind.ADDV2, OpKind.MUL):
        raise ExecError(f"elementwise supports AddV2/Mul, not {kind.value}")
    if not _broadcast_ok(a.data.shape, b.data.shape):
        raise ExecError(f"broadcast mismatch: {a.data.shape} vs {b.data.shape}")
    op = np.add if kind is OpKind.ADDV2 else np.multiply

    if a.spec.dtype is DType.INT8 or b.spec.dtype is DType.INT8:
        qa = _require_quant(a, "elementwise lhs")
        qb = _require_quant(b, "elementwise rhs")
        if out_quant is None:
            raise ExecError("elementwise: INT8 output requires quant params")
        real = op(qa.dequantize(a.data), qb.dequantize(b.data))
        return _out(out_quant.quantize(real), DType.INT8, out_quant)

    out = op(a.data.astype(np.float32, copy=False), b.data.astype(np.float32, copy=False))
    if a.spec.dtype is DType.FP16:
        return _out(_to_fp16(out), DType.FP16)
    return _out(out, DType.FP32)


def cast(x: TensorValue, target: DType, quant: QuantParams | None = None) -> TensorValue:
    """Dtype conversion: round-to-nearest-even between floats (saturating
    at the FP16 max), quantize/dequantize through params for INT8."""
    src = x.spec.dtype
    if src is DType.INT8:
        real = _require_quant(x, "cast").dequantize(x.data)
    elif src is DType.INT32:
        real = x.data.astype(np.float32)
    else:
        real = x.data

    if target is DType.FP32:
        return _out(real.astype(np.float32), DType.FP32)
    if target is DType.FP16:
        return _out(_to_fp16(real.astype(np.float32)), DType.FP16)
    if target is DType.INT8:
        if quant is None:
            raise ExecError("cast to INT8 without quant params")
        return _out(quant.quantize(real.astype(np.float64)), DType.INT8, quant)
    if target is DType.INT32:
        return _out(np.rint(real.astype(np.float64)).astype(np.int32), DType.INT32)
    raise ExecError(f"unsupported cast target {target}")


class Executor:
    """Runs a validated graph over named input tensors."""

    def __init__(self, graph: Graph, opts: ExecOptions | None = None):
        report = validate(graph)
        if not report.ok:
            first = report.violations[0]
            raise ExecError(f"graph does not validate: {first.rule}: {first.message}")
        self.graph = graph
        self.opts = opts or ExecOptions()
        self.order = topo_sort(graph)
        self._consts: dict[int, TensorValue] = {}
        for nid, node in graph.nodes.items():
            if node.kind is OpKind.CONST and not graph.is_input(nid):
                spec = graph.spec(nid)
                self._consts[nid] = TensorValue(spec, graph.const_value(nid))

    def _bind_inputs(self, inputs) -> dict[int, TensorValue]:
        bound: dict[int, TensorValue] = {}
        for nid, name in zip(self.graph.inputs, self.graph.input_names):
            if name not in inputs:
                raise ExecError(f"missing input {name!r}")
            value = inputs[name]
            spec = self.graph.spec(nid)
            if isinstance(value, TensorValue):
                arr = value.data
            else:
                arr = np.ascontiguousarray(value, dtype=spec.dtype.np)
            if arr.dtype != spec.dtype.np:
                raise ExecError(f"input {name!r}: dtype {arr.dtype} does not match "
                                f"declared {spec.dtype.value}")
            if self.opts.check_shapes and tuple(arr.shape[1:]) != spec.shape[1:]:
                raise ExecError(f"input {name!r}: shape {arr.shape} does not match "
                                f"declared {spec.shape} (batch dim is free)")
            bound[nid] = TensorValue(TensorSpec(arr.shape, spec.dtype, spec.quant), arr)
        return bound

    def run(self, inputs) -> RunResult:
        values, timings = self._execute(inputs)
        outputs = {f"output_{i}": values[nid] for i, nid in enumerate(self.graph.outputs)}
        return RunResult(outputs=outputs, timings=timings)

    def run_all(self, inputs) -> dict[int, TensorValue]:
        """Execute and return every node's output, keyed by node id.

        Used by calibration, which must observe interior activations."""
        return self._execute(inputs)[0]

    def _execute(self, inputs):
        graph = self.graph
        values = self._bind_inputs(inputs)
        values.update(self._consts)
        timings: dict[int, float] | None = {} if self.opts.record_per_node_timing else None

        for nid in self.order:
            if nid in values:
                continue
            node = graph.node(nid)
            spec = graph.spec(nid)
            args = [values[src] for src in node.inputs]
            start = time.perf_counter() if timings is not None else 0.0
            try:
                out = self._apply(node, spec, args)
            except ExecError as exc:
                raise ExecError(f"node {nid} ({node.kind.value}): {exc}") from exc
            if timings is not None:
                timings[nid] = time.perf_counter() - start
            if self.opts.check_shapes and tuple(out.data.shape[1:]) != spec.shape[1:]:
                raise ExecError(f"node {nid} ({node.kind.value}): computed shape "
                                f"{out.data.shape} does not match declared {spec.shape}")
            values[nid] = out

        return values, timings

    def _apply(self, node, spec: TensorSpec, args: list[TensorValue]) -> TensorValue:
        kind = node.kind
        if kind is OpKind.CONV2D:
            return conv2d(args[0], args[1], node.attrs.get("strides", (1, 1)),
                          node.attrs.get("padding", "SAME"), node.attrs.get("pads"),
                          out_quant=spec.quant)
        if kind is OpKind.DEPTHWISE_CONV2D:
            return depthwise_conv2d(args[0], args[1], node.attrs.get("strides", (1, 1)),
                                    node.attrs.get("padding", "SAME"),
                                    node.attrs.get("pads"), out_quant=spec.quant)
        if kind is OpKind.MATMUL:
            return matmul(args[0], args[1], out_quant=spec.quant)
        if kind is OpKind.RELU6:
            return relu6(args[0], out_quant=spec.quant)
        if kind is OpKind.MEAN:
            return global_mean(args[0], node.attrs.get("axes", (1, 2)), out_quant=spec.quant)
        if kind in (OpKind.ADDV2, OpKind.MUL):
            return elementwise(kind, args[0], args[1], out_quant=spec.quant)
        if kind is OpKind.PAD:
            return pad(args[0], node.attrs["paddings"])
        if kind is OpKind.CAST:
            return cast(args[0], DType(node.attrs["target"]), quant=spec.quant)
        raise ExecError(f"cannot execute {kind.value}")


def run(graph: Graph, inputs, opts: ExecOptions | None = None) -> RunResult:
    """One-shot convenience wrapper around :class:`Executor`."""
    return Executor(graph, opts).run(inputs)
