import json
import os
import subprocess
import sys

import numpy as np
import pytest

from headwave import tensorio
from headwave.cli import main
from headwave.manifest import DatasetManifest, ManifestError

ARGS_TINY = [
    "--nx", "64", "--ny", "64", "--spacing", "7e-4",
    "--head-fraction", "0.5", "--boundary-cells", "10",
    "--dt", "1e-7", "--nt", "320", "--sweeps", "3", "--elements", "11",
]


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """One tiny partial-mode slice built through the CLI commands."""
    root = tmp_path_factory.mktemp("cli")
    out = str(root / "slice")
    assert main(["phantom", "--seed", "5", "--out", out] + ARGS_TINY) == 0
    assert main(["simulate", "--manifest", out, "--mode", "partial"] + ARGS_TINY) == 0
    assert main(["migrate", "--manifest", out]) == 0
    assert main(["stack", "--manifest", out]) == 0
    return out


def test_phantom_writes_manifest_and_tensors(pipeline_dir):
    manifest = DatasetManifest.load(pipeline_dir)
    for name in ("labels", "truth", "channel", "fragments", "stacked"):
        assert manifest.has_file(name)
        assert os.path.exists(manifest.path_of(name))


def test_channel_tensor_shape(pipeline_dir):
    channel = tensorio.read_tensor(os.path.join(pipeline_dir, "channel.t"))
    assert channel.shape == (320, 3, 10)


def test_manifest_checksum_detects_tampering(pipeline_dir):
    manifest = DatasetManifest.load(pipeline_dir)
    path = manifest.path_of("stacked")
    raw = bytearray(open(path, "rb").read())
    raw[-1] ^= 0xFF
    tampered = os.path.join(pipeline_dir, "tampered.t")
    with open(tampered, "wb") as fh:
        fh.write(bytes(raw))
    os.replace(path, path + ".bak")
    os.replace(tampered, path)
    try:
        with pytest.raises(ManifestError):
            DatasetManifest.load(pipeline_dir)
    finally:
        os.replace(path + ".bak", path)


def test_metrics_identity(pipeline_dir, capsys):
    stacked = os.path.join(pipeline_dir, "stacked.t")
    assert main(["metrics", "--a", stacked, "--b", stacked]) == 0
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert out["ssim"] == 1.0
    assert out["rmse"] == 0.0


def test_simulate_cfl_violation_exits_nonzero(pipeline_dir, tmp_path, capsys):
    code = main(
        ["simulate", "--manifest", pipeline_dir, "--dt", "5e-6",
         "--out", str(tmp_path / "bad")]
    )
    assert code != 0
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "SolverError"
    assert "dt" in err["message"]


def test_perturb_records_spec(pipeline_dir, tmp_path):
    out = str(tmp_path / "pm")
    assert main(["perturb", "--manifest", pipeline_dir, "--kind", "PM",
                 "--shift", "8", "--seed", "3", "--out", out]) == 0
    manifest = DatasetManifest.load(out)
    assert manifest.get("perturbation") == {
        "kind": "PM", "shift_px": 8, "rotation_deg": None, "seed": 3,
    }
    frags = tensorio.read_tensor(manifest.path_of("fragments"))
    orig = tensorio.read_tensor(os.path.join(pipeline_dir, "fragments.t"))
    assert frags.shape == orig.shape
    assert not np.array_equal(frags, orig)


def test_noise_outputs_unit_scale(pipeline_dir, tmp_path):
    out = str(tmp_path / "noisy")
    assert main(["noise", "--manifest", pipeline_dir, "--sigma", "0.05",
                 "--seed", "2", "--out", out]) == 0
    manifest = DatasetManifest.load(out)
    assert manifest.get("noise")["sigma"] == 0.05
    frags = tensorio.read_tensor(manifest.path_of("fragments"))
    assert frags.min() > -1.0 and frags.max() < 2.0


def test_subsample_keeps_view_ids(pipeline_dir, tmp_path):
    out = str(tmp_path / "sub")
    assert main(["subsample", "--manifest", pipeline_dir, "--keep", "0.67",
                 "--seed", "1", "--out", out]) == 0
    manifest = DatasetManifest.load(out)
    ids = manifest.get("view_ids")
    assert len(ids) == 2
    assert ids == sorted(ids)


def test_invert_smoothed_initial(pipeline_dir, tmp_path, capsys):
    out = str(tmp_path / "fwi")
    code = main(["invert", "--manifest", pipeline_dir, "--initial", "smoothed",
                 "--epochs", "2", "--save-every", "1", "--out", out] + ARGS_TINY)
    assert code == 0
    capsys.readouterr()
    history = json.load(open(os.path.join(out, "fwi_history.json")))
    assert len(history["misfit_history"]) == 3
    model = tensorio.read_tensor(os.path.join(out, "fwi_model.t"))
    assert model.shape == (64, 64)
    for epoch in (1, 2):
        snap = os.path.join(out, f"fwi_epoch_{epoch:03d}.t")
        assert os.path.exists(snap)


def test_export_npy_roundtrip(pipeline_dir, tmp_path):
    out = str(tmp_path / "x.npy")
    assert main(["export-npy", "--input",
                 os.path.join(pipeline_dir, "stacked.t"), "--output", out]) == 0
    arr = np.load(out)
    assert np.array_equal(arr, tensorio.read_tensor(os.path.join(pipeline_dir, "stacked.t")))


def test_dataset_command_and_reproducibility(tmp_path):
    args = ["dataset", "--mode", "partial", "--slices", "2", "--seed", "9",
            "--nt", "260"] + ARGS_TINY
    out1 = str(tmp_path / "d1")
    out2 = str(tmp_path / "d2")
    assert main(args + ["--out", out1]) == 0
    assert main(args + ["--out", out2]) == 0
    for k in range(2):
        m1 = DatasetManifest.load(os.path.join(out1, f"slice_{k:03d}"))
        m2 = DatasetManifest.load(os.path.join(out2, f"slice_{k:03d}"))
        for name in ("truth", "channel", "fragments", "stacked"):
            b1 = open(m1.path_of(name), "rb").read()
            b2 = open(m2.path_of(name), "rb").read()
            assert b1 == b2, f"slice {k} {name} not byte-identical"
    # distinct seeds across slices produce distinct phantoms
    t0 = open(DatasetManifest.load(os.path.join(out1, "slice_000")).path_of("truth"), "rb").read()
    t1 = open(DatasetManifest.load(os.path.join(out1, "slice_001")).path_of("truth"), "rb").read()
    assert t0 != t1


def test_console_script_entry():
    proc = subprocess.run(
        [sys.executable, "-m", "headwave.cli", "metrics", "--a", "missing.t", "--b", "missing.t"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 2
    err = json.loads(proc.stderr.strip())
    assert err["error"] == "FileNotFoundError"


def test_unknown_command_rejected():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
