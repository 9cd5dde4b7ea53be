"""Dataset access for the fusion stage.

The physics pipeline publishes slices as directories holding a
``manifest.json`` plus binary tensor files; this module reads that
surface directly (64-byte header: magic ``HWTENSR\\0``, uint32 version,
uint32 rank, three uint64 dims; little-endian float32 payload) without
importing the physics package.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np
import torch

MAGIC = b"HWTENSR\x00"
_HEADER = struct.Struct("<8sII3Q24x")


class DataError(Exception):
    pass


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(64)
        if len(header) < 64:
            raise DataError(f"{path}: truncated header")
        magic, version, rank, d0, d1, d2 = _HEADER.unpack(header)
        if magic != MAGIC:
            raise DataError(f"{path}: not a tensor container")
        if version != 1 or rank not in (2, 3):
            raise DataError(f"{path}: unsupported version/rank {version}/{rank}")
        shape = (d0, d1, d2)[:rank]
        count = int(np.prod(shape))
        payload = fh.read(count * 4)
    if len(payload) != count * 4:
        raise DataError(f"{path}: truncated payload")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)


def normalize01(image: np.ndarray) -> tuple[np.ndarray, float, float]:
    lo = float(image.min())
    hi = float(image.max())
    if hi == lo:
        return np.zeros_like(image), lo, hi
    return (image - lo) / (hi - lo), lo, hi


@dataclass
class SliceSample:
    """One training example: padded fragment stack plus normalized truth."""

    fragments: torch.Tensor  # (n_views, h, w), [0, 1], zeros at padded slots
    pad_mask: torch.Tensor  # (n_views,) bool, True = view missing
    view_angles: torch.Tensor  # (n_views,) degrees
    truth: torch.Tensor  # (h, w) in [0, 1]
    truth_range: tuple[float, float]  # (lo, hi) m/s for denormalization
    stacked: torch.Tensor | None  # physics baseline image, [0, 1]
    path: str


def list_slice_dirs(root) -> list[str]:
    """Slice directories under a dataset root (or a single slice dir)."""
    root = os.fspath(root)
    if os.path.exists(os.path.join(root, "manifest.json")):
        return [root]
    out = []
    for name in sorted(os.listdir(root)):
        p = os.path.join(root, name)
        if os.path.isdir(p) and os.path.exists(os.path.join(p, "manifest.json")):
            out.append(p)
    if not out:
        raise DataError(f"no slice manifests under {root}")
    return out


def load_slice(slice_dir, n_views: int | None = None) -> SliceSample:
    with open(os.path.join(slice_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    files = manifest["files"]

    def path_of(name):
        return os.path.normpath(os.path.join(slice_dir, files[name]["path"]))

    raw = read_tensor(path_of("fragments"))
    truth_raw = read_tensor(path_of("truth"))
    view_ids = manifest.get("view_ids") or list(range(raw.shape[0]))
    angles = manifest.get("view_angles_deg") or [0.0] * raw.shape[0]
    geometry = manifest.get("geometry") or {}
    total_views = n_views or (
        len(geometry.get("shots", [])) or (max(view_ids) + 1)
    )
    if max(view_ids) >= total_views:
        raise DataError(
            f"{slice_dir}: view id {max(view_ids)} exceeds {total_views} slots"
        )

    h, w = raw.shape[1:]
    frags = np.zeros((total_views, h, w), dtype=np.float32)
    mask = np.ones(total_views, dtype=bool)
    slot_angles = np.zeros(total_views, dtype=np.float32)
    for k, vid in enumerate(view_ids):
        frags[vid], _, _ = normalize01(raw[k])
        mask[vid] = False
        slot_angles[vid] = angles[k]

    truth01, lo, hi = normalize01(truth_raw)
    stacked = None
    if "stacked" in files:
        st = read_tensor(path_of("stacked"))
        stacked01, _, _ = normalize01(st)
        stacked = torch.from_numpy(stacked01)

    return SliceSample(
        fragments=torch.from_numpy(frags),
        pad_mask=torch.from_numpy(mask),
        view_angles=torch.from_numpy(slot_angles),
        truth=torch.from_numpy(truth01),
        truth_range=(lo, hi),
        stacked=stacked,
        path=slice_dir,
    )


def load_dataset(root, n_views: int | None = None) -> list[SliceSample]:
    dirs = list_slice_dirs(root)
    samples = [load_slice(d, n_views) for d in dirs]
    shapes = {tuple(s.fragments.shape) for s in samples}
    if len(shapes) > 1:
        raise DataError(f"inconsistent fragment shapes across slices: {shapes}")
    return samples


def collate(samples: list[SliceSample]):
    frags = torch.stack([s.fragments for s in samples])
    mask = torch.stack([s.pad_mask for s in samples])
    truth = torch.stack([s.truth for s in samples])
    return frags, mask, truth


def denormalize(pred01, truth_range: tuple[float, float]) -> np.ndarray:
    """Map a [0, 1] prediction back to physical speed of sound (m/s)."""
    lo, hi = truth_range
    arr = pred01.numpy() if isinstance(pred01, torch.Tensor) else np.asarray(pred01)
    return lo + arr * (hi - lo)
