import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import write_image_dataset
from mce import tensor_io
from mce.cli import main
from mce.ir import OpKind, op_histogram
from mce.model_io import load_model


def run_cli(*argv) -> int:
    return main(list(argv))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def built_model(workdir):
    path = workdir / "m.mce"
    assert run_cli("build-zoo", "--res", "32", "--seed", "7", "--out", str(path)) == 0
    return path


@pytest.fixture(scope="module")
def calib_dir(workdir):
    path = workdir / "calib"
    write_image_dataset(path, count=8, seed=31, with_labels=False)
    return path


class TestBuildZoo:
    def test_emits_model_and_manifest(self, built_model, capsys):
        assert built_model.exists()
        manifest = json.loads(built_model.with_name("m.mce.manifest.json").read_text())
        hist = manifest["histogram"]
        assert hist["Conv2D"] == 35
        assert hist["DepthwiseConv2dNative"] == 17
        assert hist["MatMul"] == 1
        assert hist["Relu6"] == 35
        assert hist["Mean"] == 1
        assert hist["Pad"] == 4

    def test_idempotent_rebuild(self, workdir, built_model):
        other = workdir / "again.mce"
        assert run_cli("build-zoo", "--res", "32", "--seed", "7",
                       "--out", str(other)) == 0
        assert other.read_bytes() == built_model.read_bytes()

    def test_bad_resolution_is_data_error(self, workdir):
        assert run_cli("build-zoo", "--res", "33",
                       "--out", str(workdir / "x.mce")) == 2


class TestCompress:
    def test_int8_requires_calib(self, built_model, workdir, capsys):
        code = run_cli("compress", "--model", str(built_model),
                       "--precision", "int8", "--out", str(workdir / "m8.mce"))
        assert code == 1
        assert "calib" in capsys.readouterr().err.lower()

    def test_fp16(self, built_model, workdir, capsys):
        out = workdir / "m16.mce"
        assert run_cli("compress", "--model", str(built_model),
                       "--precision", "fp16", "--out", str(out)) == 0
        report = json.loads(capsys.readouterr().out)
        assert abs(report["weight_ratio"] - 0.5) < 0.001
        g = load_model(out)
        assert g.precision == "fp16"
        assert op_histogram(g)[OpKind.CAST] == 4

    def test_int8_with_calib_dir(self, built_model, workdir, calib_dir, capsys):
        out = workdir / "m8.mce"
        assert run_cli("compress", "--model", str(built_model), "--precision", "int8",
                       "--calib", str(calib_dir), "--out", str(out)) == 0
        capsys.readouterr()
        assert load_model(out).precision == "int8"
        # calibration table sidecar is emitted and reusable
        table_path = workdir / "m8.mce.calib.json"
        assert table_path.exists()
        out2 = workdir / "m8b.mce"
        assert run_cli("compress", "--model", str(built_model), "--precision", "int8",
                       "--calib", str(table_path), "--out", str(out2)) == 0
        assert out2.read_bytes() == out.read_bytes()

    def test_policy_file(self, built_model, workdir, capsys):
        policy = workdir / "policy.json"
        policy.write_text(json.dumps({"keep_fp32": ["inputs", "outputs"]}))
        out = workdir / "m16nomean.mce"
        assert run_cli("compress", "--model", str(built_model), "--precision", "fp16",
                       "--policy", str(policy), "--out", str(out)) == 0
        capsys.readouterr()
        assert op_histogram(load_model(out))[OpKind.CAST] == 2

    def test_missing_model_is_data_error(self, workdir, capsys):
        assert run_cli("compress", "--model", str(workdir / "nope.mce"),
                       "--precision", "fp16", "--out", str(workdir / "o.mce")) == 2


class TestRun:
    def test_writes_tensor(self, built_model, workdir):
        rng = np.random.default_rng(0)
        img = rng.uniform(-1, 1, size=(32, 32, 3)).astype(np.float32)
        inp = workdir / "x.mct"
        tensor_io.save_tensor(inp, img)
        out = workdir / "y.mct"
        assert run_cli("run", "--model", str(built_model), "--input", str(inp),
                       "--out", str(out)) == 0
        y = tensor_io.load_tensor(out)
        assert y.shape == (1, 1)
        assert np.isfinite(y).all()

    def test_json_output(self, built_model, workdir, capsys):
        inp = workdir / "x.mct"
        assert run_cli("run", "--model", str(built_model), "--input", str(inp)) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["output_0"]["shape"] == [1, 1]


class TestEval:
    def test_metrics_json_self_consistent(self, workdir, capsys):
        scores = workdir / "s.csv"
        labels = workdir / "l.csv"
        rng = np.random.default_rng(13)
        rows_s = ["filename,score"]
        rows_l = ["filename,label"]
        for i in range(200):
            y = int(rng.integers(0, 2))
            s = np.clip(rng.normal(0.35 + 0.3 * y, 0.25), 0, 1)
            rows_s.append(f"f{i}.mct,{s}")
            rows_l.append(f"f{i}.mct,{'SkinCancer' if y else 'Other'}")
        scores.write_text("\n".join(rows_s) + "\n")
        labels.write_text("\n".join(rows_l) + "\n")
        assert run_cli("eval", "--scores", str(scores), "--labels", str(labels)) == 0
        report = json.loads(capsys.readouterr().out)
        p, r, f1 = report["precision"], report["recall"], report["f1"]
        assert f1 == pytest.approx(2 * p * r / (p + r))
        assert 0.0 <= report["roc_auc"] <= 1.0

    def test_csv_out(self, workdir, capsys):
        out = workdir / "metrics.csv"
        assert run_cli("eval", "--scores", str(workdir / "s.csv"),
                       "--labels", str(workdir / "l.csv"), "--out", str(out)) == 0
        capsys.readouterr()
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "accuracy,precision,recall,f1,roc_auc"
        assert len(lines) == 2


class TestBench:
    def test_report_files(self, built_model, workdir, small_dataset, capsys):
        trace = workdir / "trace.csv"
        rows = ["timestamp_s,watts"] + [f"{t * 0.1:.1f},5.8" for t in range(50)] \
            + [f"{5.0 + t * 0.1:.1f},6.8" for t in range(50)]
        trace.write_text("\n".join(rows) + "\n")
        report_path = workdir / "report.csv"
        code = run_cli("bench", "--model", str(built_model), "--data", str(small_dataset),
                       "--batch", "4", "--warmup", "1", "--reps", "2",
                       "--power-trace", str(trace), "--report", str(report_path))
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["rows"][0]["precision"] == "original"
        assert payload["rows"][0]["power_mean_w"] == pytest.approx(6.8, abs=0.2)
        csv_text = report_path.read_text()
        assert csv_text.startswith("precision,size_bytes,mean_latency_ms")
        assert report_path.with_suffix(".json").exists()


class TestInspect:
    def test_matches_histogram(self, built_model, capsys):
        assert run_cli("inspect", "--model", str(built_model)) == 0
        payload = json.loads(capsys.readouterr().out)
        g = load_model(built_model)
        want = {k.value: v for k, v in op_histogram(g).items()}
        assert payload["histogram"] == want
        assert payload["precision"] == "original"


class TestExitCodes:
    def test_unknown_command(self, capsys):
        assert run_cli("frobnicate") == 1

    def test_missing_required_flag(self, capsys):
        assert run_cli("build-zoo") == 1

    def test_corrupt_model_is_data_error(self, workdir, capsys):
        bad = workdir / "bad.mce"
        bad.write_bytes(b"NOPE" + b"\x00" * 100)
        assert run_cli("inspect", "--model", str(bad)) == 2


def test_console_entry_point(built_model):
    proc = subprocess.run([sys.executable, "-m", "mce", "inspect",
                           "--model", str(built_model)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["histogram"]["Conv2D"] == 35
