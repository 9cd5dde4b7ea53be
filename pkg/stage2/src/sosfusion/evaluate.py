"""Per-slice evaluation of a trained network against ground truth,
with the stacked physics image scored alongside as the baseline."""

from __future__ import annotations

import torch

from .data import load_dataset
from .metrics import rmse, ssim
from .model import FragmentFusionNet


def evaluate(model: FragmentFusionNet, data_root) -> dict:
    """SSIM/RMSE per slice (normalized [0, 1] images) plus means."""
    samples = load_dataset(data_root)
    model.eval()
    per_slice = []
    with torch.no_grad():
        for s in samples:
            pred = model(s.fragments.unsqueeze(0), s.pad_mask.unsqueeze(0))[0]
            pred = pred.clamp(0.0, 1.0).numpy()
            truth = s.truth.numpy()
            entry = {
                "path": s.path,
                "ssim": ssim(pred, truth),
                "rmse": rmse(pred, truth),
            }
            if s.stacked is not None and s.stacked.shape == s.truth.shape:
                entry["baseline_ssim"] = ssim(s.stacked.numpy(), truth)
                entry["baseline_rmse"] = rmse(s.stacked.numpy(), truth)
            per_slice.append(entry)
    report = {
        "ssim": sum(e["ssim"] for e in per_slice) / len(per_slice),
        "rmse": sum(e["rmse"] for e in per_slice) / len(per_slice),
        "per_slice": per_slice,
    }
    baselines = [e for e in per_slice if "baseline_ssim" in e]
    if baselines:
        report["baseline_ssim"] = sum(e["baseline_ssim"] for e in baselines) / len(baselines)
        report["baseline_rmse"] = sum(e["baseline_rmse"] for e in baselines) / len(baselines)
    return report
