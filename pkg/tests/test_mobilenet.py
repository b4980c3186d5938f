import numpy as np
import pytest

from mce.ir import OpKind, op_histogram, validate
from mce.mobilenet import _round_channels, build_mobilenet_v2
from mce.model_io import serialize

TABLE3_FP32 = {
    OpKind.CONV2D: 35,
    OpKind.DEPTHWISE_CONV2D: 17,
    OpKind.MATMUL: 1,
    OpKind.RELU6: 35,
    OpKind.MEAN: 1,
    OpKind.MUL: 17,
    OpKind.ADDV2: 63,
    OpKind.PAD: 4,
}


def test_histogram_matches_reference_distribution(mnv2_224):
    hist = op_histogram(mnv2_224)
    for kind, count in TABLE3_FP32.items():
        assert hist[kind] == count, kind
    assert OpKind.CAST not in hist


def test_add_decomposition(mnv2_224):
    # 63 adds = 53 bias adds (35 conv + 1 matmul + 17 depthwise shifts)
    # + 10 identity residuals; residual adds are exactly the AddV2 nodes
    # whose both operands are non-Const.
    residual = bias = 0
    for node in mnv2_224.nodes.values():
        if node.kind is not OpKind.ADDV2:
            continue
        kinds = [mnv2_224.node(i).kind for i in node.inputs]
        if OpKind.CONST in kinds:
            bias += 1
        else:
            residual += 1
    assert bias == 53
    assert residual == 10


def test_validates(mnv2_224):
    assert validate(mnv2_224).ok


def test_pads_precede_stride2_depthwise(mnv2_224):
    pads = [n for n in mnv2_224.nodes.values() if n.kind is OpKind.PAD]
    assert len(pads) == 4
    consumers = mnv2_224.consumers()
    for node in pads:
        users = consumers[node.id]
        assert len(users) == 1
        user = mnv2_224.node(users[0])
        assert user.kind is OpKind.DEPTHWISE_CONV2D
        assert user.attrs["strides"] == [2, 2]
        assert user.attrs["padding"] == "VALID"


def test_output_shape_is_single_logit(mnv2_224):
    spec = mnv2_224.spec(mnv2_224.outputs[0])
    assert spec.shape == (1, 1)


def test_same_seed_serializes_identically():
    a = serialize(build_mobilenet_v2(32, 1.0, 1, seed=11))
    b = serialize(build_mobilenet_v2(32, 1.0, 1, seed=11))
    assert a == b


def test_different_seed_differs():
    a = serialize(build_mobilenet_v2(32, 1.0, 1, seed=1))
    b = serialize(build_mobilenet_v2(32, 1.0, 1, seed=2))
    assert a != b


def test_resolution_must_divide_32():
    with pytest.raises(ValueError):
        build_mobilenet_v2(100)
    with pytest.raises(ValueError):
        build_mobilenet_v2(0)
    with pytest.raises(ValueError):
        build_mobilenet_v2(-32)


def test_width_multiplier_rounds_to_multiple_of_8():
    assert _round_channels(32 * 0.5) == 16
    assert _round_channels(18) == 24  # nearest-8 would lose >10%, so bump
    assert _round_channels(12) == 16
    assert _round_channels(16 * 0.25) == 8  # floor at 8
    g = build_mobilenet_v2(32, width_mult=0.5, seed=0)
    for nid, node in g.nodes.items():
        if node.kind is OpKind.CONV2D:
            co = g.spec(node.inputs[1]).shape[3]
            assert co % 8 == 0 and co >= 8
    # histogram is width-independent
    hist = op_histogram(g)
    for kind, count in TABLE3_FP32.items():
        assert hist[kind] == count


def test_histogram_resolution_independent(mnv2_32):
    hist = op_histogram(mnv2_32)
    for kind, count in TABLE3_FP32.items():
        assert hist[kind] == count
