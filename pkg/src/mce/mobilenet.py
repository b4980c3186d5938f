"""MobileNetV2-shaped graph builder with deterministic seeded weights.

Builds the standard inverted-residual topology as a flat op graph:
stem conv, 17 bottleneck blocks, 1x1 head conv, global spatial mean and
a single-logit MatMul classifier. Batch norm is already folded: regular
convs carry it in their weights and bias add, depthwise convs keep an
explicit per-channel Mul (scale) followed by an AddV2 (shift). The four
stride-2 depthwise convs are preceded by explicit Pad nodes; everything
else pads via the SAME attribute.
"""

from __future__ import annotations

import numpy as np

from .ir import (
    DType,
    Graph,
    GraphBuilder,
    OpKind,
    TensorSpec,
    conv_output_hw,
    same_padding,
)

# (expansion t, output channels c, repeats n, first stride s)
_BLOCK_SETTINGS = (
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
)

INPUT_NAME = "input"


def _round_channels(value: float, divisor: int = 8) -> int:
    """Round to the nearest multiple of ``divisor``, never below it and
    never losing more than 10% of the requested width."""
    rounded = max(divisor, int(value + divisor / 2) // divisor * divisor)
    if rounded < 0.9 * value:
        rounded += divisor
    return rounded


class _Weights:
    """Seeded initializers drawn in a fixed order so identical seeds give
    byte-identical graphs. Gains are tuned so the random network keeps a
    trained-net-like activation profile (relu6 outputs around 1, not
    pinned at the clip), which keeps low-precision rounding error
    representative instead of saturation-dominated."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def conv(self, kh: int, kw: int, ci: int, co: int, gain: float = 2.0) -> np.ndarray:
        std = float(np.sqrt(gain / (kh * kw * ci)))
        return self.rng.normal(0.0, std, size=(kh, kw, ci, co))

    def depthwise(self, kh: int, kw: int, c: int) -> np.ndarray:
        std = float(np.sqrt(2.0 / (kh * kw)))
        return self.rng.normal(0.0, std, size=(kh, kw, c))

    def dense(self, k: int, m: int) -> np.ndarray:
        return self.rng.normal(0.0, float(np.sqrt(3.0 / k)), size=(k, m))

    def bias(self, c: int) -> np.ndarray:
        return self.rng.normal(0.0, 0.03, size=(c,))

    def bn_scale(self, c: int) -> np.ndarray:
        # Mean slightly below 1 so depth does not inflate variance.
        return self.rng.uniform(0.7, 1.1, size=(c,))


class _Net:
    """Tracks the current tensor (id + NHWC shape) while emitting nodes."""

    def __init__(self, builder: GraphBuilder, weights: _Weights):
        self.b = builder
        self.w = weights

    def conv_bias(self, tid: int, shape, co: int, kernel: int, stride: int,
                  relu: bool, gain: float | None = None) -> tuple[int, tuple[int, ...]]:
        n, h, wd, ci = shape
        if gain is None:
            gain = 2.0 if relu else 1.0  # He for relu-followed convs, unit otherwise
        wid = self.b.add_const(self.w.conv(kernel, kernel, ci, co, gain))
        oh, ow = conv_output_hw((h, wd), (kernel, kernel), (stride, stride), "SAME")
        out_shape = (n, oh, ow, co)
        tid = self.b.add(OpKind.CONV2D, (tid, wid), TensorSpec(out_shape, DType.FP32),
                         {"strides": [stride, stride], "padding": "SAME"})
        bid = self.b.add_const(self.w.bias(co))
        tid = self.b.add(OpKind.ADDV2, (tid, bid), TensorSpec(out_shape, DType.FP32))
        if relu:
            tid = self.b.add(OpKind.RELU6, (tid,), TensorSpec(out_shape, DType.FP32))
        return tid, out_shape

    def depthwise_bn(self, tid: int, shape, stride: int) -> tuple[int, tuple[int, ...]]:
        n, h, wd, c = shape
        if stride == 2:
            # Stride-2 depthwise pads explicitly (TF SAME amounts), then
            # convolves VALID; stride-1 keeps padding in the attr.
            (pt, pb), (pl, pr) = same_padding((h, wd), (3, 3), (2, 2))
            padded = (n, h + pt + pb, wd + pl + pr, c)
            tid = self.b.add(OpKind.PAD, (tid,), TensorSpec(padded, DType.FP32),
                             {"paddings": [[0, 0], [pt, pb], [pl, pr], [0, 0]]})
            h, wd = padded[1], padded[2]
            padding = "VALID"
        else:
            padding = "SAME"
        wid = self.b.add_const(self.w.depthwise(3, 3, c))
        oh, ow = conv_output_hw((h, wd), (3, 3), (stride, stride), padding)
        out_shape = (n, oh, ow, c)
        tid = self.b.add(OpKind.DEPTHWISE_CONV2D, (tid, wid),
                         TensorSpec(out_shape, DType.FP32),
                         {"strides": [stride, stride], "padding": padding})
        sid = self.b.add_const(self.w.bn_scale(c))
        tid = self.b.add(OpKind.MUL, (tid, sid), TensorSpec(out_shape, DType.FP32))
        bid = self.b.add_const(self.w.bias(c))
        tid = self.b.add(OpKind.ADDV2, (tid, bid), TensorSpec(out_shape, DType.FP32))
        tid = self.b.add(OpKind.RELU6, (tid,), TensorSpec(out_shape, DType.FP32))
        return tid, out_shape

    def bottleneck(self, tid: int, shape, co: int, stride: int,
                   expand: int) -> tuple[int, tuple[int, ...]]:
        block_in = tid
        ci = shape[3]
        residual = stride == 1 and ci == co
        if expand != 1:
            tid, shape = self.conv_bias(tid, shape, ci * expand, 1, 1, relu=True)
        tid, shape = self.depthwise_bn(tid, shape, stride)
        # Damp residual branches so skip-accumulated variance stays flat.
        tid, shape = self.conv_bias(tid, shape, co, 1, 1, relu=False,
                                    gain=0.35 if residual else 1.0)
        if residual:
            tid = self.b.add(OpKind.ADDV2, (tid, block_in), TensorSpec(shape, DType.FP32))
        return tid, shape


def build_mobilenet_v2(resolution: int = 224, width_mult: float = 1.0,
                       num_outputs: int = 1, seed: int = 0) -> Graph:
    """Construct the classifier graph at the given input resolution.

    The resolution must be divisible by 32 so all five stride-2 stages
    land on whole spatial dims. Returns an ``original``-precision FP32
    graph emitting raw logits of shape [N, num_outputs].
    """
    if resolution <= 0 or resolution % 32 != 0:
        raise ValueError(f"resolution must be a positive multiple of 32, got {resolution}")
    if num_outputs < 1:
        raise ValueError("num_outputs must be >= 1")

    builder = GraphBuilder(name=f"mobilenet_v2_{resolution}", precision="original")
    weights = _Weights(seed)
    net = _Net(builder, weights)

    tid = builder.add_input(INPUT_NAME, TensorSpec((1, resolution, resolution, 3), DType.FP32))
    shape = (1, resolution, resolution, 3)

    stem = _round_channels(32 * width_mult)
    tid, shape = net.conv_bias(tid, shape, stem, kernel=3, stride=2, relu=True)

    for t, c, n, s in _BLOCK_SETTINGS:
        co = _round_channels(c * width_mult)
        for i in range(n):
            tid, shape = net.bottleneck(tid, shape, co, s if i == 0 else 1, t)

    head = _round_channels(1280 * max(1.0, width_mult))
    tid, shape = net.conv_bias(tid, shape, head, kernel=1, stride=1, relu=True)

    tid = builder.add(OpKind.MEAN, (tid,), TensorSpec((shape[0], shape[3]), DType.FP32),
                      {"axes": [1, 2]})
    wid = builder.add_const(weights.dense(shape[3], num_outputs))
    tid = builder.add(OpKind.MATMUL, (tid, wid),
                      TensorSpec((shape[0], num_outputs), DType.FP32))
    bid = builder.add_const(weights.bias(num_outputs))
    tid = builder.add(OpKind.ADDV2, (tid, bid),
                      TensorSpec((shape[0], num_outputs), DType.FP32))

    return builder.finish([tid])
