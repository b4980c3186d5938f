import pytest

from conftest import requires_engine
from fixture_model import mobilenet_v2_onnx
from mce_convert.convert import convert
from mce_convert.onnx_proto import save_model
from mce_convert.verify import VerifyError, verify, verify_same


@requires_engine
class TestVerify:
    def test_converted_model_close_to_source(self, onnx_path, mce_path):
        diff = verify(onnx_path, mce_path, samples=4, seed=1)
        assert diff < 1e-3

    def test_self_comparison_is_exact(self, mce_path):
        assert verify_same(mce_path, resolution=96, samples=2, seed=2) == 0.0

    def test_mismatched_resolutions_error(self, tmp_path, mce_path):
        other_onnx = tmp_path / "mnv2_64.onnx"
        save_model(mobilenet_v2_onnx(64, seed=4), other_onnx)
        with pytest.raises(VerifyError):
            verify(other_onnx, mce_path, samples=1, seed=0)

    def test_torch_style_padding_verifies(self, tmp_path):
        # symmetric stride-2 pads (torch convention) convert to explicit
        # pad amounts; the engine must reproduce them numerically
        model = mobilenet_v2_onnx(64, seed=12)
        changed = 0
        for node in model.graph.nodes:
            if node.op_type == "Conv" and node.attr_ints("pads") == [0, 0, 1, 1]:
                node.attributes["pads"].ints = (1, 1, 1, 1)
                changed += 1
        assert changed == 1  # the stem conv
        onnx_path = tmp_path / "torchstyle.onnx"
        save_model(model, onnx_path)
        out = tmp_path / "torchstyle.mce"
        convert(onnx_path, out)
        assert verify(onnx_path, out, samples=4, seed=3) < 1e-3
