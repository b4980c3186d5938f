"""Acceptance suite: one test per release criterion, each printing a
[PASS]/[FAIL] line (run with ``pytest tests/test_acceptance.py -v -s``).

The heavyweight criteria share module-scoped fixtures: the fixed-seed
224-resolution classifier, its calibration table, and a 3,666-image
32x32 benchmark dataset.
"""

from contextlib import contextmanager

import numpy as np
import pytest

import oracles
from conftest import SEED, write_image_dataset
from helpers import CLASS_COUNTS
from mce.bench import bench_throughput
from mce.executor import Executor, conv2d, depthwise_conv2d, matmul, tensor
from mce.ir import OpKind, op_histogram
from mce.metrics import SKIN_CANCER, f1_from_precision_recall, map_label, roc_auc
from mce.model_io import save_model, serialize, weight_payload_bytes
from mce.power import TraceSampler, power_delta_ratio, sample_power
from mce.quant import calibrate, lower_fp16, quantize_int8
from mce.splits import holdout_split, stratified_kfold


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"[FAIL] {name}")
        raise
    print(f"[PASS] {name}")


@pytest.fixture(scope="module")
def calib_batches_224():
    rng = np.random.default_rng(101)
    return [rng.uniform(-1.0, 1.0, size=(2, 224, 224, 3)).astype(np.float32)
            for _ in range(2)]


@pytest.fixture(scope="module")
def calib_table_224(mnv2_224, calib_batches_224):
    return calibrate(mnv2_224, calib_batches_224)


@pytest.fixture(scope="module")
def eval_inputs_224():
    # drawn from the same distribution the calibration batches use
    rng = np.random.default_rng(202)
    return rng.uniform(-1.0, 1.0, size=(16, 224, 224, 3)).astype(np.float32)


@pytest.fixture(scope="module")
def fp32_logits_224(mnv2_224, eval_inputs_224):
    return Executor(mnv2_224).run({"input": eval_inputs_224}).outputs["output_0"].data


def test_f1_consistency_with_reported_precision_recall():
    with criterion("Eq.(4) consistency: F1(0.9318, 0.8191) = 0.8718 +/- 0.0005"):
        f1 = f1_from_precision_recall(0.9318, 0.8191)
        assert abs(f1 - 0.8718) <= 0.0005


def test_label_condensation_totals():
    with criterion("label condensation totals 8473 / 25821 / 34294"):
        assert len(CLASS_COUNTS) == 14
        cancer = sum(n for c, n in CLASS_COUNTS.items()
                     if map_label(c) == SKIN_CANCER)
        total = sum(CLASS_COUNTS.values())
        assert cancer == 8473
        assert total - cancer == 25821
        assert total == 34294


def test_op_distribution_and_cast_counts(mnv2_224, calib_table_224):
    with criterion("op distribution at 224 + exactly 4 casts after compression"):
        hist = op_histogram(mnv2_224)
        want = {
            OpKind.CONV2D: 35,
            OpKind.DEPTHWISE_CONV2D: 17,
            OpKind.MATMUL: 1,
            OpKind.RELU6: 35,
            OpKind.MEAN: 1,
            OpKind.MUL: 17,
            OpKind.ADDV2: 63,
            OpKind.PAD: 4,
        }
        for kind, count in want.items():
            assert hist[kind] == count, kind
        g16 = lower_fp16(mnv2_224)
        g8 = quantize_int8(mnv2_224, calib_table_224)
        assert op_histogram(g16)[OpKind.CAST] == 4
        assert op_histogram(g8)[OpKind.CAST] == 4
        for kind, count in want.items():
            assert op_histogram(g16)[kind] == count
            assert op_histogram(g8)[kind] == count


def test_per_op_kernels_match_bruteforce_oracles():
    with criterion("per-op kernels vs brute-force oracles, 120 random shapes @ 1e-5"):
        rng = np.random.default_rng(909)
        checked = 0
        for _ in range(40):  # conv2d
            k = int(rng.integers(1, 4))
            stride = int(rng.integers(1, 3))
            x = rng.uniform(-1, 1, size=(int(rng.integers(1, 3)),
                                         int(rng.integers(k, k + 7)),
                                         int(rng.integers(k, k + 7)),
                                         int(rng.integers(1, 6)))).astype(np.float32)
            w = rng.uniform(-1, 1, size=(k, k, x.shape[3],
                                         int(rng.integers(1, 6)))).astype(np.float32)
            padding = "SAME" if rng.integers(0, 2) else "VALID"
            got = conv2d(tensor(x), tensor(w), (stride, stride), padding).data
            want = oracles.conv2d_naive(x, w, (stride, stride), padding)
            assert np.abs(got - want).max() < 1e-5
            checked += 1
        for _ in range(40):  # depthwise
            k = int(rng.integers(1, 4))
            stride = int(rng.integers(1, 3))
            x = rng.uniform(-1, 1, size=(1, int(rng.integers(k, k + 7)),
                                         int(rng.integers(k, k + 7)),
                                         int(rng.integers(1, 7)))).astype(np.float32)
            w = rng.uniform(-1, 1, size=(k, k, x.shape[3])).astype(np.float32)
            padding = "SAME" if rng.integers(0, 2) else "VALID"
            got = depthwise_conv2d(tensor(x), tensor(w), (stride, stride), padding).data
            want = oracles.depthwise_naive(x, w, (stride, stride), padding)
            assert np.abs(got - want).max() < 1e-5
            checked += 1
        for _ in range(40):  # matmul
            n, k, m = (int(v) for v in rng.integers(1, 9, size=3))
            a = rng.uniform(-1, 1, size=(n, k)).astype(np.float32)
            b = rng.uniform(-1, 1, size=(k, m)).astype(np.float32)
            got = matmul(tensor(a), tensor(b)).data
            want = oracles.matmul_naive(a, b)
            assert np.abs(got - want).max() < 1e-5
            checked += 1
        assert checked >= 100


def test_full_graph_matches_composed_oracle(mnv2_224, eval_inputs_224, fp32_logits_224):
    with criterion("full-graph FP32 vs composed oracle @ 1e-4 on 16 images (224)"):
        want = np.concatenate([
            oracles.run_graph_ref(mnv2_224, eval_inputs_224[i:i + 1])
            for i in range(eval_inputs_224.shape[0])
        ])
        diff = np.abs(fp32_logits_224.astype(np.float64) - want).max()
        assert diff < 1e-4, f"max logit diff {diff}"


def test_compression_fidelity(mnv2_224, calib_table_224, eval_inputs_224,
                              fp32_logits_224):
    with criterion("FP16 end-to-end <= 2e-2; INT8 weight qdq <= scale/2"):
        g16 = lower_fp16(mnv2_224)
        fp16_logits = Executor(g16).run({"input": eval_inputs_224}).outputs[
            "output_0"].data
        diff = np.abs(fp32_logits_224 - fp16_logits).max()
        assert diff <= 2e-2, f"fp16 max logit diff {diff}"

        g8 = quantize_int8(mnv2_224, calib_table_224)
        for nid, node in g8.nodes.items():
            if node.kind is OpKind.CONST and not g8.is_input(nid):
                scale = g8.spec(nid).quant.scale
                back = g8.const_value(nid).astype(np.float64) * scale
                source = mnv2_224.const_value(nid).astype(np.float64)
                assert np.abs(back - source).max() <= scale / 2 * (1 + 1e-9)


def test_size_ratios(tmp_path, mnv2_224, calib_table_224):
    with criterion("weight-payload ratios: FP16 0.500 +/- 0.001, INT8 in [0.25, 0.27]"):
        base = serialize(mnv2_224)
        f16 = serialize(lower_fp16(mnv2_224))
        i8 = serialize(quantize_int8(mnv2_224, calib_table_224))
        w0 = weight_payload_bytes(base)
        assert abs(weight_payload_bytes(f16) / w0 - 0.5) <= 0.001
        assert 0.25 <= weight_payload_bytes(i8) / w0 <= 0.27


def test_roc_auc_equals_pairwise_oracle():
    with criterion("trapezoidal ROC AUC == Mann-Whitney oracle, 100 datasets"):
        rng = np.random.default_rng(404)
        for _ in range(100):
            scores = rng.integers(0, 40, size=200) / 8.0  # grid forces ties
            labels = rng.integers(0, 2, size=200)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            assert roc_auc(scores, labels) == oracles.mann_whitney_auc(scores, labels)


def test_split_invariants():
    with criterion("k-fold sizes {6859 x4, 6858}, stratification and holdout +/-1"):
        labels = np.concatenate([np.zeros(25821, np.int64), np.ones(8473, np.int64)])
        fa = stratified_kfold(labels, k=5, seed=SEED)
        assert sorted(fa.fold_sizes(), reverse=True) == [6859, 6859, 6859, 6859, 6858]
        for cls in (0, 1):
            counts = [int(np.sum(labels[fa.fold_indices(f)] == cls)) for f in range(5)]
            assert max(counts) - min(counts) <= 1
        train, val = holdout_split(labels, 0.1, seed=SEED)
        assert train.size + val.size == 34294
        val_pos = int(np.sum(labels[val] == 1))
        assert abs(val_pos - round(0.1 * 8473)) <= 1
        assert abs((val.size - val_pos) - round(0.1 * 25821)) <= 1


def test_power_table_arithmetic(tmp_path):
    with criterion("power deltas +1.0/+0.8/+0.6/+0.5 and ratios 0.97/0.94/0.93"):
        variants = {"original": 6.8, "fp32": 6.6, "fp16": 6.4, "int8": 6.3}
        measured = {}
        for name, run_w in variants.items():
            path = tmp_path / f"{name}.csv"
            rows = ["timestamp_s,watts"]
            rows += [f"{t},{5.8}" for t in range(5)]
            rows += [f"{t + 5},{run_w}" for t in range(5)]
            path.write_text("\n".join(rows) + "\n")
            trace = TraceSampler(path)
            measured[name] = (sample_power(trace, (5, 9)), sample_power(trace, (0, 4)))
        reference = measured["original"][0]
        expected = {"original": (1.0, 1.0), "fp32": (0.8, 0.97),
                    "fp16": (0.6, 0.94), "int8": (0.5, 0.93)}
        for name, (run_w, idle_w) in measured.items():
            delta, ratio = power_delta_ratio(run_w, idle_w, reference)
            want_delta, want_ratio = expected[name]
            assert delta == pytest.approx(want_delta, abs=1e-9)
            assert abs(ratio - want_ratio) <= 0.005


def test_throughput_protocol(tmp_path_factory, mnv2_32):
    with criterion("3,666 images @ batch 32 -> 115 invocations; ips * time = images"):
        data_dir = tmp_path_factory.mktemp("bench3666") / "imgs"
        write_image_dataset(data_dir, count=3666, resolution=32, seed=77,
                            with_labels=False)
        model_path = data_dir.parent / "m32.mce"
        save_model(mnv2_32, model_path)
        stats = bench_throughput(model_path, data_dir, batch_size=32)
        assert stats.images == 3666
        assert stats.invocations == 115  # 114 full batches + one of 18
        assert stats.images_per_second == stats.images / stats.total_seconds
        assert stats.images_per_second * stats.total_seconds == pytest.approx(
            3666, rel=1e-12)
