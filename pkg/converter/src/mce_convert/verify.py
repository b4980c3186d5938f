"""Numerical verification of a converted model.

Runs identical random inputs through the source runtime (the reference
ONNX evaluator) and through the engine's CLI (``mce run`` over tensor
files), returning the max absolute output difference. ``verify_same``
compares two independent engine loads of one model, which must agree
bit for bit.
"""

from __future__ import annotations

import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

from .mce_format import load_tensor, save_tensor
from .onnx_proto import load_model
from .reference import Evaluator


class VerifyError(Exception):
    pass


def run_engine(model_path, batch_nhwc: np.ndarray, workdir) -> np.ndarray:
    """Push one batch through ``mce run`` and read back the output tensor."""
    in_path = Path(workdir) / "verify_in.mct"
    out_path = Path(workdir) / "verify_out.mct"
    save_tensor(in_path, batch_nhwc.astype(np.float32))
    cmd = [sys.executable, "-m", "mce", "run", "--model", str(model_path),
           "--input", str(in_path), "--out", str(out_path)]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise VerifyError(f"engine run failed (exit {proc.returncode}): "
                          f"{proc.stderr.strip()}")
    return load_tensor(out_path)


def verify(onnx_path, mce_path, samples: int = 16, seed: int = 0) -> float:
    """Max absolute logit difference between the ONNX source (reference
    evaluator) and the converted model (engine CLI) on shared inputs."""
    model = load_model(onnx_path)
    evaluator = Evaluator(model)
    dims = list(model.graph.inputs[0].dims)
    if len(dims) != 4:
        raise VerifyError(f"source input rank {len(dims)} unsupported")
    _, c, h, w = (1 if isinstance(d, str) else int(d) for d in dims)
    rng = np.random.default_rng(seed)
    batch_nhwc = rng.uniform(-1.0, 1.0, size=(samples, h, w, c)).astype(np.float32)
    reference = evaluator.run(np.transpose(batch_nhwc, (0, 3, 1, 2))
                              .astype(np.float64))
    reference = np.asarray(reference, dtype=np.float64).reshape(samples, -1)
    with tempfile.TemporaryDirectory(prefix="mce-verify-") as workdir:
        got = run_engine(mce_path, batch_nhwc, workdir).astype(np.float64)
    if got.shape != reference.shape:
        raise VerifyError(f"output shape mismatch: source {reference.shape}, "
                          f"converted {got.shape}")
    return float(np.abs(got - reference).max())


def verify_same(mce_path, resolution: int, channels: int = 3,
                samples: int = 4, seed: int = 0) -> float:
    """Compare a model against itself via two engine loads (expect 0.0)."""
    rng = np.random.default_rng(seed)
    batch = rng.uniform(-1.0, 1.0, size=(samples, resolution, resolution,
                                         channels)).astype(np.float32)
    with tempfile.TemporaryDirectory(prefix="mce-verify-") as workdir:
        a = run_engine(mce_path, batch, workdir)
        b = run_engine(mce_path, batch, workdir)
    return float(np.abs(a - b).max())
