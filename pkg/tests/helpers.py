"""Shared test utilities: dataset class sizes and random graph construction."""

from __future__ import annotations

import numpy as np

from mce.ir import DType, Graph, GraphBuilder, OpKind, TensorSpec

# Source-dataset class sizes used to check the two-category condensation.
CLASS_COUNTS = {
    "Basal cell carcinoma": 3323,
    "Melanoma": 4522,
    "Squamous cell carcinoma": 628,
    "Actinic keratoses": 867,
    "Benign keratosis-like lesions": 262,
    "Chickenpox": 1125,
    "Cowpox": 990,
    "Dermatofibroma": 239,
    "Healthy": 1710,
    "HFMD": 2415,
    "Measles": 825,
    "Melanocytic nevi": 12875,
    "Monkeypox": 4260,
    "Vascular lesions": 253,
}


def random_graph(seed: int) -> Graph:
    """A small random-but-valid FP32 graph: conv/elementwise chain over
    a rank-4 tensor, optionally finished with mean + matmul."""
    rng = np.random.default_rng(seed)
    b = GraphBuilder(name=f"random_{seed}")
    h = w = int(rng.integers(4, 9))
    c = int(rng.integers(1, 5))
    shape = (1, h, w, c)
    tid = b.add_input("input", TensorSpec(shape, DType.FP32))

    for _ in range(int(rng.integers(1, 6))):
        choice = rng.integers(0, 5)
        n, hh, ww, cc = shape
        if choice == 0:
            co = int(rng.integers(1, 5))
            wid = b.add_const(rng.normal(size=(1, 1, cc, co)).astype(np.float32))
            shape = (n, hh, ww, co)
            tid = b.add(OpKind.CONV2D, (tid, wid), TensorSpec(shape, DType.FP32),
                        {"strides": [1, 1], "padding": "VALID"})
        elif choice == 1:
            tid = b.add(OpKind.RELU6, (tid,), TensorSpec(shape, DType.FP32))
        elif choice == 2:
            cid = b.add_const(rng.normal(size=(cc,)).astype(np.float32))
            tid = b.add(OpKind.MUL, (tid, cid), TensorSpec(shape, DType.FP32))
        elif choice == 3:
            cid = b.add_const(rng.normal(size=(cc,)).astype(np.float32))
            tid = b.add(OpKind.ADDV2, (tid, cid), TensorSpec(shape, DType.FP32))
        else:
            pt, pb = (int(v) for v in rng.integers(0, 2, size=2))
            shape = (n, hh + pt + pb, ww, cc)
            tid = b.add(OpKind.PAD, (tid,), TensorSpec(shape, DType.FP32),
                        {"paddings": [[0, 0], [pt, pb], [0, 0], [0, 0]]})

    if rng.integers(0, 2):
        n, hh, ww, cc = shape
        tid = b.add(OpKind.MEAN, (tid,), TensorSpec((n, cc), DType.FP32), {"axes": [1, 2]})
        m = int(rng.integers(1, 4))
        wid = b.add_const(rng.normal(size=(cc, m)).astype(np.float32))
        tid = b.add(OpKind.MATMUL, (tid, wid), TensorSpec((n, m), DType.FP32))
    return b.finish([tid])
