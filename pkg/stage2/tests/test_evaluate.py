import json
import os
import struct
import subprocess
import sys

import numpy as np
import pytest
import torch
from torch import nn

from sosfusion.data import load_dataset
from sosfusion.evaluate import evaluate
from sosfusion.metrics import rmse, ssim


class _TruthOracle(nn.Module):
    """Stub network that returns the stored ground truth."""

    def __init__(self, truths):
        super().__init__()
        self.truths = truths
        self.calls = 0

    def forward(self, frags, mask):
        out = self.truths[self.calls].unsqueeze(0)
        self.calls += 1
        return out


def test_evaluate_perfect_prediction_scores_one(desk_dataset):
    samples = load_dataset(desk_dataset)
    stub = _TruthOracle([s.truth for s in samples])
    report = evaluate(stub, desk_dataset)
    assert report["ssim"] == pytest.approx(1.0)
    assert report["rmse"] == pytest.approx(0.0)
    assert len(report["per_slice"]) == 2
    assert "baseline_ssim" in report


def _write_tensor(path, arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    header = struct.pack("<8sII3Q24x", b"HWTENSR\x00", 1, 2, arr.shape[0], arr.shape[1], 0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())


def test_metrics_agree_with_physics_package(tmp_path):
    """Cross-implementation agreement within 1e-6 on 10 random pairs,
    through the physics package's CLI surface."""
    rng = np.random.default_rng(42)
    for k in range(10):
        a = rng.random((64, 64))
        b = rng.random((64, 64))
        # pin the range so the CLI's normalization is the identity
        a.flat[0], a.flat[1] = 0.0, 1.0
        b.flat[0], b.flat[1] = 0.0, 1.0
        pa = tmp_path / f"a{k}.t"
        pb = tmp_path / f"b{k}.t"
        _write_tensor(pa, a)
        _write_tensor(pb, b)
        proc = subprocess.run(
            [sys.executable, "-m", "headwave.cli", "metrics",
             "--a", str(pa), "--b", str(pb)],
            check=True, capture_output=True, text=True,
        )
        theirs = json.loads(proc.stdout.strip())
        a32 = a.astype(np.float32).astype(np.float64)
        b32 = b.astype(np.float32).astype(np.float64)
        assert abs(ssim(a32, b32) - theirs["ssim"]) < 1e-6
        assert abs(rmse(a32, b32) - theirs["rmse"]) < 1e-6


def test_cli_train_then_evaluate(desk_dataset, tmp_path):
    ck = str(tmp_path / "ck")
    proc = subprocess.run(
        [sys.executable, "-m", "sosfusion.cli", "train", "--data", desk_dataset,
         "--epochs", "2", "--hidden", "8", "--heads", "2", "--depth", "1",
         "--views", "8", "--image-size", "64", "--out", ck],
        check=True, capture_output=True, text=True,
    )
    summary = json.loads(proc.stdout.strip())
    assert summary["epochs"] == 2
    assert os.path.exists(summary["checkpoint"])
    proc = subprocess.run(
        [sys.executable, "-m", "sosfusion.cli", "evaluate",
         "--checkpoint", summary["checkpoint"], "--data", desk_dataset],
        check=True, capture_output=True, text=True,
    )
    report = json.loads(proc.stdout)
    assert set(report) >= {"ssim", "rmse", "per_slice"}
