from __future__ import annotations

import numpy as np
import pytest

from mce.mobilenet import build_mobilenet_v2
from mce.quant import calibrate
from mce import tensor_io

SEED = 7


@pytest.fixture(scope="session")
def mnv2_32():
    return build_mobilenet_v2(32, 1.0, 1, seed=SEED)


@pytest.fixture(scope="session")
def mnv2_224():
    return build_mobilenet_v2(224, 1.0, 1, seed=SEED)


@pytest.fixture(scope="session")
def calib_batches_32():
    rng = np.random.default_rng(101)
    return [rng.uniform(-1.0, 1.0, size=(2, 32, 32, 3)).astype(np.float32)
            for _ in range(8)]


@pytest.fixture(scope="session")
def calib_table_32(mnv2_32, calib_batches_32):
    return calibrate(mnv2_32, calib_batches_32)


def write_image_dataset(directory, count: int, resolution: int = 32, seed: int = 5,
                        with_labels: bool = True) -> None:
    """Populate a dataset dir with seeded random image tensors."""
    rng = np.random.default_rng(seed)
    directory.mkdir(parents=True, exist_ok=True)
    rows = ["filename,label"]
    for i in range(count):
        name = f"img_{i:05d}.mct"
        img = rng.uniform(-1.0, 1.0, size=(resolution, resolution, 3)).astype(np.float32)
        tensor_io.save_tensor(directory / name, img)
        rows.append(f"{name},{'SkinCancer' if i % 4 == 0 else 'Other'}")
    if with_labels:
        (directory / "labels.csv").write_text("\n".join(rows) + "\n")


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "imgs"
    write_image_dataset(path, count=10)
    return path
