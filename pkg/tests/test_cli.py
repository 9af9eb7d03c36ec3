import subprocess
import sys

import numpy as np
import pytest

from depthforensics.autodiff import fdtn
from depthforensics.cli import EXIT_GRADCHECK, EXIT_OK, EXIT_VALIDATION, main
from depthforensics.depth import patch_targets

TINY = ["--set", "frames=3", "--set", "train_size=6", "--set", "test_size=4", "--set", "epochs=1"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["gen-data", *TINY, "--seed", "3", "--out", str(out)]) == EXIT_OK
    return out


def test_gen_data_layout(data_dir):
    assert (data_dir / "manifest.txt").exists()
    assert len(list((data_dir / "items").iterdir())) == 10


def test_depth_gt_dataset(data_dir, tmp_path):
    assert main(["depth-gt", "--data", str(data_dir), "--out", str(tmp_path), *TINY]) == EXIT_OK
    lines = (tmp_path / "bands.csv").read_text().splitlines()
    assert lines[0].startswith("item_id,label,mask_pixels") and len(lines) == 11
    assert (tmp_path / "depth_gt.png").stat().st_size > 0
    item = lines[1].split(",")[0]
    assert fdtn.load(tmp_path / item / "patches.fdtn").shape == (3, 196)


def test_depth_gt_single_triple(tmp_path):
    rng = np.random.default_rng(0)
    original = rng.integers(0, 256, (3, 28, 28)).astype(np.float32)
    frame = original.copy()
    frame[:, :7, :7] = 255 - frame[:, :7, :7]
    frame[:, :7, :7][np.abs(frame[:, :7, :7] - original[:, :7, :7]) <= 15] += 100
    depth = rng.integers(0, 200, (28, 28)).astype(np.float32)
    for name, arr in (("f", frame), ("o", original), ("d", depth)):
        fdtn.save(tmp_path / f"{name}.fdtn", arr)
    args = ["depth-gt", "--frame", str(tmp_path / "f.fdtn"), "--original", str(tmp_path / "o.fdtn"), "--depth", str(tmp_path / "d.fdtn")]
    assert main([*args, "--out", str(tmp_path / "o"), "--set", "image_size=28"]) == EXIT_OK
    mask = fdtn.load(tmp_path / "o" / "mask.fdtn")
    assert mask[:7, :7].all() and not mask[7:, :].any()
    np.testing.assert_allclose(fdtn.load(tmp_path / "o" / "patches.fdtn"), patch_targets(depth, mask, (14, 14)), rtol=1e-6)


def test_train_then_eval(data_dir, tmp_path):
    run = tmp_path / "run"
    assert main(["train", *TINY, "--set", f"data_dir={data_dir}", "--deterministic", "--out", str(run)]) == EXIT_OK
    assert (run / "metrics.csv").exists() and (run / "training_curves.png").exists()
    ev = tmp_path / "eval"
    assert main(["eval", "--checkpoint", str(run), "--out", str(ev)]) == EXIT_OK
    assert len((ev / "scores.csv").read_text().splitlines()) == 5
    assert (ev / "eval_metrics.csv").exists() and (ev / "roc.png").exists()
    # a config with a different model definition is rejected
    bad = ["eval", "--checkpoint", str(run), "--out", str(ev), *TINY, "--set", f"data_dir={data_dir}", "--set", "alpha=0.1"]
    assert main(bad) == EXIT_VALIDATION


def test_validation_exit_codes(tmp_path, capsys):
    assert main(["train", "--set", "mode=bogus", "--out", str(tmp_path)]) == EXIT_VALIDATION
    assert main(["train", "--set", "no_equals", "--out", str(tmp_path)]) == EXIT_VALIDATION
    assert main(["eval", "--checkpoint", str(tmp_path / "missing"), "--out", str(tmp_path)]) == EXIT_VALIDATION
    assert main(["depth-gt", "--data", str(tmp_path), "--out", str(tmp_path)]) == EXIT_VALIDATION
    assert "error:" in capsys.readouterr().err


def test_gradcheck_exit_codes(tmp_path):
    assert main(["gradcheck", "--max-checks", "4", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "gradcheck.csv").read_text().startswith("component,")
    assert main(["gradcheck", "--max-checks", "4", "--fault", "mda"]) == EXIT_GRADCHECK


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "depthforensics", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("gen-data", "depth-gt", "train", "eval", "gradcheck"):
        assert cmd in proc.stdout
