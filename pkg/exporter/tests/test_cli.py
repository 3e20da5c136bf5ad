import numpy as np
import pytest

from bundle_exporter import cli


def run_cli(*args):
    return cli.main([str(a) for a in args])


@pytest.fixture
def image_folder(tmp_path):
    rng = np.random.default_rng(1)
    root = tmp_path / "imgs"
    for cls in ("beagle", "boxer"):
        (root / cls).mkdir(parents=True)
        for i in range(3):
            (root / cls / f"{i}.jpg").write_bytes(rng.bytes(128))
    return root


def test_export_and_validate(tmp_path, image_folder, capsys):
    out = tmp_path / "out"
    code = run_cli("export", "--dataset", "oxford_pets", "--out", out,
                   "--images", image_folder, "--views", 2, "--dim", 64)
    assert code == 0
    printed = capsys.readouterr().out
    assert "images" in printed and "classes" in printed and "descriptions" in printed
    for sub in ("images", "classes", "descriptions"):
        assert run_cli("validate", out / sub) == 0
        assert capsys.readouterr().out.startswith("OK ")


def test_validate_rejects_garbage(tmp_path, capsys):
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "manifest.json").write_text("{ not json")
    assert run_cli("validate", bad) == 3
    assert "INVALID" in capsys.readouterr().err


def test_unknown_dataset_exit_code(tmp_path, capsys):
    import subprocess
    import sys

    proc = subprocess.run(
        [sys.executable, "-m", "bundle_exporter.cli", "export",
         "--dataset", "cifar10", "--out", str(tmp_path)],
        capture_output=True, text=True)
    assert proc.returncode == 2
