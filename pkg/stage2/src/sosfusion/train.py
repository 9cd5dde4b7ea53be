"""Training loop: Adam on the reconstruction loss, seeded end to end.

Checkpoints carry the model/optimizer state plus the loss history, so a
resumed run continues the history without a jump beyond batch noise.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import torch

from .data import collate, load_dataset
from .losses import FeatureExtractor, reconstruction_loss
from .model import FragmentFusionNet, FusionConfig, build_model


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: FragmentFusionNet
    loss_history: list[float]
    checkpoint_path: str | None


def save_checkpoint(path, model, optimizer, history, epoch):
    torch.save(
        {
            "config": model.config.to_dict(),
            "model_state": model.state_dict(),
            "optimizer_state": optimizer.state_dict(),
            "loss_history": history,
            "epoch": epoch,
        },
        path,
    )


def load_checkpoint(path):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    config = FusionConfig.from_dict(payload["config"])
    model = build_model(config)
    model.load_state_dict(payload["model_state"])
    return model, payload


def train(
    data_root,
    config: FusionConfig | None = None,
    epochs: int = 200,
    lr: float = 5e-4,
    batch_size: int = 1,
    alpha_perc: float = 100.0,
    seed: int = 0,
    checkpoint_dir=None,
    checkpoint_every: int = 0,
    resume=None,
    log_every: int = 0,
) -> TrainResult:
    """Fit the fusion network on every slice under ``data_root``.

    Deterministic for fixed seeds on a single device.  Aborts with the
    offending batch id if the loss ever goes non-finite.
    """
    torch.manual_seed(seed)
    samples = load_dataset(data_root)
    n_views, h, _ = samples[0].fragments.shape
    if config is None:
        config = FusionConfig(n_views=n_views, image_size=h)

    history: list[float] = []
    start_epoch = 0
    if resume is not None:
        model, payload = load_checkpoint(resume)
        config = model.config
        history = list(payload["loss_history"])
        start_epoch = payload["epoch"]
    else:
        model = build_model(config)

    extractor = FeatureExtractor() if alpha_perc != 0.0 else None
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    if resume is not None:
        optimizer.load_state_dict(payload["optimizer_state"])

    batches = [
        collate(samples[k : k + batch_size])
        for k in range(0, len(samples), batch_size)
    ]

    checkpoint_path = None
    model.train()
    for epoch in range(start_epoch, start_epoch + epochs):
        epoch_loss = 0.0
        for batch_id, (frags, mask, truth) in enumerate(batches):
            optimizer.zero_grad()
            pred = model(frags, mask)
            loss = reconstruction_loss(pred, truth, alpha_perc, extractor)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {batch_id}"
                )
            loss.backward()
            optimizer.step()
            epoch_loss += value * len(frags)
        history.append(epoch_loss / len(samples))
        if log_every and (epoch + 1) % log_every == 0:
            print(f"epoch {epoch + 1}: loss {history[-1]:.6f}", flush=True)
        if checkpoint_dir and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
            os.makedirs(checkpoint_dir, exist_ok=True)
            checkpoint_path = os.path.join(checkpoint_dir, f"epoch_{epoch + 1:04d}.pt")
            save_checkpoint(checkpoint_path, model, optimizer, history, epoch + 1)

    if checkpoint_dir:
        os.makedirs(checkpoint_dir, exist_ok=True)
        checkpoint_path = os.path.join(checkpoint_dir, "final.pt")
        save_checkpoint(checkpoint_path, model, optimizer, history, start_epoch + epochs)
        with open(os.path.join(checkpoint_dir, "loss_history.json"), "w") as fh:
            json.dump({"loss_history": history}, fh, indent=2)

    return TrainResult(model=model, loss_history=history, checkpoint_path=checkpoint_path)
