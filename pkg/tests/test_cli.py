import json
import subprocess
import sys

import pytest

from auxcl import cli


def run_cli(*args):
    return cli.main([str(a) for a in args])


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli-ds")
    code = run_cli("gen-synthetic", "--out", out, "--classes", 10,
                   "--per-class", 12, "--dim", 16, "--tasks", 2,
                   "--world-per-class", 8, "--seed", 5)
    assert code == 0
    cfg = json.loads((out / "run_config.json").read_text())
    cfg["epochs_stage3"] = 4
    cfg["epochs_stage4"] = 4
    (out / "run_config.json").write_text(json.dumps(cfg))
    return out


class TestGenAndRun:

    def test_gen_creates_bundles(self, small_dataset):
        for sub in ("downstream_images", "world_images", "downstream_classes",
                    "downstream_descriptions", "world_classes"):
            assert (small_dataset / sub / "manifest.json").exists()
        assert (small_dataset / "tasks.json").exists()

    def test_run_and_eval(self, small_dataset, tmp_path, capsys):
        out = tmp_path / "run"
        code = run_cli("run", "--config", small_dataset / "run_config.json",
                       "--out", out)
        assert code == 0
        assert (out / "report.json").exists()
        assert (out / "report.txt").exists()
        assert (out / "replay_memory.json").exists()
        assert (out / "state" / "state.json").exists()
        assert (out / "task2_stage4_losses.csv").exists()
        header = (out / "task2_stage4_losses.csv").read_text().splitlines()[0]
        assert header == "epoch,L_DD,L_II,L_ID,L_DI,L_KD,L_replay,L_total,lr"
        capsys.readouterr()
        assert run_cli("eval", "--run-dir", out) == 0
        assert "avg:" in capsys.readouterr().out

    def test_retrieve_json(self, small_dataset, tmp_path, capsys):
        out = tmp_path / "retrieval.json"
        code = run_cli("retrieve", "--data", small_dataset, "--k", 2, "--out", out)
        assert code == 0
        doc = json.loads(out.read_text())
        assert len(doc) == 10
        first = next(iter(doc.values()))
        assert len(first) == 2
        assert set(first[0]) == {"world_class", "score"}

    def test_sweep_replay(self, small_dataset, tmp_path, capsys):
        out = tmp_path / "sweep.json"
        code = run_cli("sweep-replay", "--config",
                       small_dataset / "run_config.json", "--out", out)
        assert code == 0
        doc = json.loads(out.read_text())
        assert set(doc) == {"0", "1", "2", "5", "10"}


class TestExitCodes:
    def test_config_error_is_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"no_such_option": 1}))
        assert run_cli("run", "--config", bad) == 2

    def test_data_error_is_3(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"data": {"root": str(tmp_path / "missing")}}))
        assert run_cli("run", "--config", cfg) == 3

    def test_corrupt_bundle_is_3(self, tmp_path):
        run_cli("gen-synthetic", "--out", tmp_path, "--classes", 6,
                "--per-class", 6, "--dim", 16, "--tasks", 2,
                "--world-per-class", 4, "--seed", 1)
        payload = tmp_path / "downstream_images" / "embeddings.bin"
        payload.write_bytes(payload.read_bytes()[:-8])
        assert run_cli("run", "--config", tmp_path / "run_config.json") == 3

    def test_check_grad_ok(self, capsys):
        assert run_cli("check-grad", "--instances", 6) == 0
        assert "OK" in capsys.readouterr().out


class TestConsoleEntry:
    def test_module_invocation(self):
        proc = subprocess.run(
            [sys.executable, "-m", "auxcl.cli", "--help"],
            capture_output=True, text=True)
        assert proc.returncode == 0
        assert "gen-synthetic" in proc.stdout
