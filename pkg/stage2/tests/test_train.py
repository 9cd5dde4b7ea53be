import os
import shutil
import struct

import numpy as np
import pytest
import torch

from sosfusion.model import FusionConfig
from sosfusion.train import TrainingError, load_checkpoint, train


def _tiny_config():
    return FusionConfig(n_views=8, image_size=64, hidden=8, heads=2, depth=1)


def test_lr_zero_keeps_loss_constant(desk_dataset):
    result = train(desk_dataset, config=_tiny_config(), epochs=3, lr=0.0, seed=0)
    hist = result.loss_history
    assert len(hist) == 3
    assert hist[0] == pytest.approx(hist[1], rel=1e-12)
    assert hist[0] == pytest.approx(hist[2], rel=1e-12)


def test_training_reduces_loss_and_is_seed_deterministic(desk_dataset):
    a = train(desk_dataset, config=_tiny_config(), epochs=5, seed=7)
    b = train(desk_dataset, config=_tiny_config(), epochs=5, seed=7)
    assert a.loss_history == b.loss_history
    assert a.loss_history[-1] < a.loss_history[0]


def test_checkpoint_resume_continues_history_exactly(desk_dataset, tmp_path):
    full = train(
        desk_dataset, config=_tiny_config(), epochs=6, seed=3,
        checkpoint_dir=str(tmp_path / "full"), checkpoint_every=3,
    )
    resumed = train(
        desk_dataset, epochs=3, seed=3,
        resume=str(tmp_path / "full" / "epoch_0003.pt"),
        checkpoint_dir=str(tmp_path / "resumed"),
    )
    assert len(resumed.loss_history) == 6
    assert resumed.loss_history[:3] == full.loss_history[:3]
    for a, b in zip(resumed.loss_history[3:], full.loss_history[3:]):
        assert a == pytest.approx(b, rel=1e-10)


def test_checkpoint_roundtrip_restores_model(desk_dataset, tmp_path):
    result = train(
        desk_dataset, config=_tiny_config(), epochs=2, seed=1,
        checkpoint_dir=str(tmp_path / "ck"),
    )
    model, payload = load_checkpoint(result.checkpoint_path)
    for (na, pa), (nb, pb) in zip(
        sorted(result.model.state_dict().items()), sorted(model.state_dict().items())
    ):
        assert na == nb
        assert torch.equal(pa, pb)
    assert payload["loss_history"] == result.loss_history


def test_nan_loss_aborts_with_batch_id(desk_dataset, tmp_path):
    root = tmp_path / "poison"
    root.mkdir()
    shutil.copytree(os.path.join(desk_dataset, "slice_000"), root / "slice_000")
    truth_path = root / "slice_000" / "truth.t"
    bad = np.full((64, 64), np.nan, dtype="<f4")
    header = struct.pack("<8sII3Q24x", b"HWTENSR\x00", 1, 2, 64, 64, 0)
    truth_path.write_bytes(header + bad.tobytes())
    with pytest.raises(TrainingError, match="batch 0"):
        train(str(root), config=_tiny_config(), epochs=1, seed=0)
