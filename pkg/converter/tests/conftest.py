import subprocess
import sys

import pytest

from fixture_model import mobilenet_v2_onnx
from mce_convert.convert import convert
from mce_convert.onnx_proto import save_model

RESOLUTION = 96
SEED = 3


def engine_available() -> bool:
    proc = subprocess.run([sys.executable, "-c", "import mce"], capture_output=True)
    return proc.returncode == 0


@pytest.fixture(scope="session")
def onnx_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("onnx") / "mnv2.onnx"
    save_model(mobilenet_v2_onnx(RESOLUTION, seed=SEED), path)
    return path


@pytest.fixture(scope="session")
def mce_path(tmp_path_factory, onnx_path):
    path = tmp_path_factory.mktemp("mce") / "mnv2.mce"
    convert(onnx_path, path)
    return path


requires_engine = pytest.mark.skipif(not engine_available(),
                                     reason="mce engine not installed")
