import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import random_graph
from mce.ir import (
    CycleError,
    DType,
    Graph,
    GraphBuilder,
    Node,
    OpKind,
    QuantParams,
    TensorSpec,
    conv_output_hw,
    op_histogram,
    same_padding,
    topo_sort,
    validate,
)


def test_dtype_byte_widths():
    assert DType.FP32.size == 4
    assert DType.FP16.size == 2
    assert DType.INT8.size == 1
    assert DType.INT32.size == 4


class TestQuantParams:
    def test_rejects_bad_scale(self):
        with pytest.raises(ValueError):
            QuantParams(0.0)
        with pytest.raises(ValueError):
            QuantParams(-1.0)
        with pytest.raises(ValueError):
            QuantParams(float("nan"))

    def test_rejects_zero_point_out_of_range(self):
        with pytest.raises(ValueError):
            QuantParams(1.0, 128)
        with pytest.raises(ValueError):
            QuantParams(1.0, -129)

    @given(st.floats(1e-6, 1e3), st.integers(-128, 127), st.integers(-128, 127))
    def test_codes_round_trip_exactly(self, scale, zp, code):
        # real(q) = scale * (q - zp) must map back to q for in-range codes
        params = QuantParams(scale, zp)
        real = scale * (code - zp)
        assert params.quantize(np.array([real]))[0] == code


class TestTensorSpec:
    def test_rank_limit(self):
        with pytest.raises(ValueError):
            TensorSpec((1, 2, 3, 4, 5), DType.FP32)

    def test_positive_dims(self):
        with pytest.raises(ValueError):
            TensorSpec((1, 0), DType.FP32)

    def test_int8_requires_quant_and_only_int8(self):
        with pytest.raises(ValueError):
            TensorSpec((2,), DType.INT8)
        with pytest.raises(ValueError):
            TensorSpec((2,), DType.FP32, QuantParams(0.5))
        spec = TensorSpec((2,), DType.INT8, QuantParams(0.5))
        assert spec.num_bytes == 2


def _const_graph():
    b = GraphBuilder()
    cid = b.add_const(np.array([1.0], dtype=np.float32))
    return b.finish([cid])


class TestValidate:
    def test_single_const_graph_ok(self):
        assert validate(_const_graph()).ok

    def test_two_node_cycle_flagged(self):
        spec = TensorSpec((1,), DType.FP32)
        nodes = {
            0: Node(0, OpKind.RELU6, (1,)),
            1: Node(1, OpKind.RELU6, (0,)),
        }
        report = validate(Graph(nodes, (), (1,), {0: spec, 1: spec}))
        assert not report.ok
        assert any(v.rule == "cycle" for v in report.violations)

    def test_conv_with_one_input_flags_arity(self):
        spec = TensorSpec((1, 2, 2, 1), DType.FP32)
        b = GraphBuilder()
        iid = b.add_input("input", spec)
        bad = Node(99, OpKind.CONV2D, (iid,))
        g = b.finish([iid])
        nodes = dict(g.nodes)
        nodes[99] = bad
        specs = dict(g.specs)
        specs[99] = spec
        report = validate(Graph(nodes, g.inputs, (99,), specs))
        assert any(v.rule == "arity" and v.node_id == 99 for v in report.violations)

    def test_unknown_edge_and_missing_spec(self):
        spec = TensorSpec((1,), DType.FP32)
        nodes = {0: Node(0, OpKind.RELU6, (42,))}
        report = validate(Graph(nodes, (), (0,), {0: spec}))
        rules = {v.rule for v in report.violations}
        assert "unknown-input" in rules

    def test_payload_on_non_const_flagged(self):
        spec = TensorSpec((1,), DType.FP32)
        b = GraphBuilder()
        iid = b.add_input("input", spec)
        nodes = {iid: b._nodes[iid], 1: Node(1, OpKind.RELU6, (iid,), {}, b"\x00")}
        report = validate(Graph(nodes, (iid,), (1,), {iid: spec, 1: spec}))
        assert any(v.rule == "payload" for v in report.violations)

    def test_unreachable_node_flagged(self):
        spec = TensorSpec((1,), DType.FP32)
        b = GraphBuilder()
        iid = b.add_input("input", spec)
        rid = b.add(OpKind.RELU6, (iid,), spec)
        g = b.finish([rid])
        nodes = dict(g.nodes)
        # a relu chain hanging off nothing reachable
        orphan_src = Node(50, OpKind.CONST, (), {}, np.float32(1.0).tobytes())
        orphan = Node(51, OpKind.RELU6, (50,))
        nodes[50], nodes[51] = orphan_src, orphan
        specs = dict(g.specs)
        specs[50] = specs[51] = spec
        report = validate(Graph(nodes, g.inputs, g.outputs, specs))
        assert any(v.rule == "unreachable" and v.node_id == 51 for v in report.violations)

    def test_const_payload_size_checked(self):
        b = GraphBuilder()
        cid = b.add_const(np.ones(4, dtype=np.float32))
        g = b.finish([cid])
        nodes = {cid: Node(cid, OpKind.CONST, (), {}, b"\x00\x00")}
        report = validate(Graph(nodes, (), (cid,), g.specs))
        assert any(v.rule == "payload-size" for v in report.violations)


class TestTopoSort:
    def _chain(self):
        spec = TensorSpec((1,), DType.FP32)
        b = GraphBuilder()
        a = b.add_input("input", spec)
        c = b.add(OpKind.RELU6, (a,), spec)
        d = b.add(OpKind.RELU6, (c,), spec)
        return b.finish([d]), (a, c, d)

    def test_chain_order_forced(self):
        g, ids = self._chain()
        assert topo_sort(g) == list(ids)

    def test_diamond_tie_break_by_id(self):
        spec = TensorSpec((1,), DType.FP32)
        b = GraphBuilder()
        a = b.add_input("input", spec)
        n_b = b.add(OpKind.RELU6, (a,), spec)
        n_c = b.add(OpKind.RELU6, (a,), spec)
        n_d = b.add(OpKind.ADDV2, (n_b, n_c), spec)
        g = b.finish([n_d])
        # All valid orders enumerate to {a,b,c,d} and {a,c,b,d}; the
        # ascending-id tie break selects [a, b, c, d].
        assert topo_sort(g) == [a, n_b, n_c, n_d]

    def test_cycle_raises(self):
        spec = TensorSpec((1,), DType.FP32)
        nodes = {0: Node(0, OpKind.RELU6, (1,)), 1: Node(1, OpKind.RELU6, (0,))}
        with pytest.raises(CycleError):
            topo_sort(Graph(nodes, (), (1,), {0: spec, 1: spec}))

    @pytest.mark.parametrize("seed", range(25))
    def test_random_graphs_sorted_consistently(self, seed):
        g = random_graph(seed)
        assert validate(g).ok
        order = topo_sort(g)
        assert sorted(order) == sorted(g.nodes)
        position = {nid: i for i, nid in enumerate(order)}
        for node in g.nodes.values():
            for src in node.inputs:
                assert position[src] < position[node.id]


class TestHistogram:
    def test_counts_sum_to_node_count(self):
        for seed in range(10):
            g = random_graph(seed)
            assert sum(op_histogram(g).values()) == len(g.nodes)

    def test_single_const(self):
        assert op_histogram(_const_graph()) == {OpKind.CONST: 1}


def test_same_padding_matches_tf_convention():
    # stride 2, kernel 3 on an even dim: total pad 1 split as (0, 1)
    assert same_padding((224, 224), (3, 3), (2, 2)) == ((0, 1), (0, 1))
    # stride 1 keeps symmetric (1, 1)
    assert same_padding((56, 56), (3, 3), (1, 1)) == ((1, 1), (1, 1))


def test_conv_output_hw():
    assert conv_output_hw((224, 224), (3, 3), (2, 2), "SAME") == (112, 112)
    assert conv_output_hw((5, 5), (3, 3), (1, 1), "VALID") == (3, 3)
