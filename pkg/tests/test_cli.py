"""CLI commands: config validation, outputs, determinism, exit codes."""

import json
import subprocess
import sys

import numpy as np
import pytest

from qmit import cli, selftest
from qmit.errors import ConfigError


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def synthetic_train_payload(**overrides):
    payload = {
        "benchmark": "synthetic-2",
        "train_cap": 24,
        "test_cap": 12,
        "separation": 8.0,
        "repeats": 2,
        "n_qubits": 4,
        "layers": 2,
        "design": "U2",
        "step_size": 1,
        "epochs": 2,
        "batch_size": 8,
        "learning_rate": 0.05,
        "seed": 1,
        "noise_low": 0.005,
        "noise_high": 0.02,
    }
    payload.update(overrides)
    return payload


class TestConfigValidation:
    def test_unknown_key_exits_2(self, tmp_path, capsys):
        path = write_config(tmp_path, synthetic_train_payload(bogus_key=1))
        code = cli.main(["train", "--config", path, "--out", str(tmp_path / "out")])
        assert code == 2
        assert "bogus_key" in capsys.readouterr().err

    def test_bad_type_exits_2(self, tmp_path, capsys):
        path = write_config(tmp_path, synthetic_train_payload(epochs="three"))
        code = cli.main(["train", "--config", path, "--out", str(tmp_path / "out")])
        assert code == 2
        assert "epochs" in capsys.readouterr().err

    def test_missing_benchmark_exits_2(self, tmp_path, capsys):
        payload = synthetic_train_payload()
        del payload["benchmark"]
        path = write_config(tmp_path, payload)
        assert cli.main(["train", "--config", path, "--out", str(tmp_path / "out")]) == 2

    def test_unknown_benchmark_exits_2(self, tmp_path):
        path = write_config(tmp_path, synthetic_train_payload(benchmark="CIFAR"))
        assert cli.main(["train", "--config", path, "--out", str(tmp_path / "out")]) == 2

    def test_invalid_json_exits_2(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        assert cli.main(["train", "--config", str(path), "--out", str(tmp_path / "out")]) == 2

    def test_weights_both_zero_rejected_at_load(self, tmp_path, capsys):
        path = write_config(tmp_path, synthetic_train_payload(alpha_fb=0.0, alpha_task=0.0))
        assert cli.main(["train", "--config", path, "--out", str(tmp_path / "out")]) == 2

    def test_mnist_requires_data_dir(self, tmp_path, capsys):
        path = write_config(tmp_path, synthetic_train_payload(benchmark="MNIST-4"))
        assert cli.main(["train", "--config", path, "--out", str(tmp_path / "out")]) == 2
        assert "data_dir" in capsys.readouterr().err


class TestTrainCommand:
    def test_writes_outputs(self, tmp_path):
        path = write_config(tmp_path, synthetic_train_payload())
        out = tmp_path / "run"
        assert cli.main(["train", "--config", path, "--out", str(out)]) == 0
        metrics = (out / "metrics.csv").read_text()
        assert metrics.startswith("# qmit ")
        assert "# config " in metrics
        header = metrics.splitlines()[2]
        assert header == "repeat,epoch,fb_loss,task_loss,train_acc,val_acc,clamped_mass"
        assert len(metrics.splitlines()) == 3 + 2 * 2  # repeats x epochs
        summary = json.loads((out / "summary.json").read_text())
        assert summary["role"] == "mitigated"
        assert len(summary["per_seed_accuracy"]) == 2
        assert (out / "checkpoint_r0.json").exists()
        assert (out / "checkpoint_r1.json").exists()
        ckpt = json.loads((out / "checkpoint_r0.json").read_text())
        assert "mitigation" in ckpt and "theta" in ckpt and "config" in ckpt

    def test_rerun_byte_identical(self, tmp_path):
        path = write_config(tmp_path, synthetic_train_payload())
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert cli.main(["train", "--config", path, "--out", str(out_a)]) == 0
        assert cli.main(["train", "--config", path, "--out", str(out_b)]) == 0
        assert (out_a / "metrics.csv").read_bytes() == (out_b / "metrics.csv").read_bytes()
        assert (out_a / "summary.json").read_bytes() == (out_b / "summary.json").read_bytes()

    def test_baseline_role_label(self, tmp_path):
        path = write_config(tmp_path, synthetic_train_payload(alpha_fb=0.0, repeats=1))
        out = tmp_path / "base"
        assert cli.main(["train", "--config", path, "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["role"] == "baseline"


class TestAblationCommand:
    def test_grid_rows(self, tmp_path):
        payload = synthetic_train_payload(repeats=1, epochs=1)
        payload["grid"] = {"designs": ["RX", "U2"], "step_sizes": [1, 2], "alpha_fb": [0.0, 1.0]}
        path = write_config(tmp_path, payload)
        out = tmp_path / "abl"
        assert cli.main(["ablation", "--config", path, "--out", str(out)]) == 0
        lines = (out / "ablation.csv").read_text().splitlines()
        assert lines[2] == "design,step_size,layers,alpha_fb,mode,mean_acc,std_acc"
        assert len(lines) == 3 + 2 * 2 * 2

    def test_layer_sweep_rows(self, tmp_path):
        payload = synthetic_train_payload(repeats=1, epochs=1)
        payload["grid"] = {"layer_counts": [2, 4], "alpha_fb": [0.0, 1.0]}
        path = write_config(tmp_path, payload)
        out = tmp_path / "sweep"
        assert cli.main(["ablation", "--config", path, "--out", str(out)]) == 0
        rows = (out / "ablation.csv").read_text().splitlines()[3:]
        layers_seen = {int(r.split(",")[2]) for r in rows}
        assert layers_seen == {2, 4}
        assert len(rows) == 4

    def test_empty_grid_rejected(self, tmp_path, capsys):
        payload = synthetic_train_payload()
        payload["grid"] = {}
        path = write_config(tmp_path, payload)
        assert cli.main(["ablation", "--config", path, "--out", str(tmp_path / "x")]) == 2

    def test_unknown_grid_axis_rejected(self, tmp_path):
        payload = synthetic_train_payload()
        payload["grid"] = {"colors": ["red"]}
        path = write_config(tmp_path, payload)
        assert cli.main(["ablation", "--config", path, "--out", str(tmp_path / "x")]) == 2


class TestTraceCommand:
    def test_zero_noise_constant(self, tmp_path):
        payload = {"channel": "depolarizing", "operations": 40, "rate": 0.0, "seed": 3}
        path = write_config(tmp_path, payload)
        out = tmp_path / "tr"
        assert cli.main(["trace-divergence", "--config", path, "--out", str(out)]) == 0
        lines = (out / "trace.csv").read_text().splitlines()[3:]
        values = [float(line.split(",")[1]) for line in lines]
        assert len(values) == 41
        assert max(values) - min(values) <= 1e-9

    def test_depolarizing_strictly_decreasing(self, tmp_path):
        payload = {"channel": "depolarizing", "operations": 100, "rate": 0.01, "seed": 3}
        path = write_config(tmp_path, payload)
        out = tmp_path / "tr2"
        assert cli.main(["trace-divergence", "--config", path, "--out", str(out)]) == 0
        lines = (out / "trace.csv").read_text().splitlines()[3:]
        values = np.array([float(line.split(",")[1]) for line in lines])
        assert np.all(np.diff(values) < -1e-12)

    def test_amplitude_damping_initial_decline(self, tmp_path):
        values = cli.divergence_trace(4, 120, "amplitude_damping", 0.08, seed=5)
        assert np.all(np.diff(values[:25]) < 0)
        assert values.min() < 0.6 * values[0]

    def test_pauli_channel_runs(self, tmp_path):
        values = cli.divergence_trace(3, 30, "pauli", 0.02, seed=6)
        assert values[-1] < values[0]

    def test_unknown_channel_rejected(self, tmp_path):
        payload = {"channel": "cosmic", "operations": 10, "rate": 0.1}
        path = write_config(tmp_path, payload)
        assert cli.main(["trace-divergence", "--config", path, "--out", str(tmp_path / "x")]) == 2

    def test_missing_required_key(self, tmp_path):
        payload = {"channel": "pauli", "rate": 0.1}
        path = write_config(tmp_path, payload)
        assert cli.main(["trace-divergence", "--config", path, "--out", str(tmp_path / "x")]) == 2


class TestSelftest:
    def test_runner_reports_pass_and_fail(self, monkeypatch, capsys):
        monkeypatch.setattr(
            selftest, "CHECKS", [("demo.pass", lambda: "ok"), ("demo.fail", lambda: (_ for _ in ()).throw(AssertionError("boom")))]
        )
        code = selftest.run_all()
        out = capsys.readouterr().out
        assert code == 1
        assert "PASS  demo.pass" in out
        assert "FAIL  demo.fail" in out
        assert "boom" in out

    def test_corrupted_inverse_channel_is_caught(self, monkeypatch):
        """Substituting the forward channel for the inverse breaks the
        round-trip invariant by name."""
        from qmit import noise

        monkeypatch.setattr(noise, "apply_inverse_channel", noise.apply_channel)
        with pytest.raises(AssertionError, match="roundtrip"):
            selftest.check_inverse_roundtrip()

    def test_quick_checks_pass(self):
        assert selftest.check_inverse_roundtrip()
        assert selftest.check_overhead_dual_form()
        assert selftest.check_fb_loss_zero_baseline()


class TestEntryPoint:
    def test_console_script_version(self):
        proc = subprocess.run(
            [sys.executable, "-m", "qmit.cli", "--version"], capture_output=True, text=True
        )
        assert proc.returncode == 0
        assert "qmit" in proc.stdout
