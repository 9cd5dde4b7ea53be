"""Image-quality metrics on normalized speed-of-sound images.

RMSE and SSIM are reported on [0, 1]-normalized images so scores are
comparable across phantoms regardless of the physical velocity range.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.ndimage import correlate


class MetricError(ValueError):
    pass


class Normalized01(NamedTuple):
    values: np.ndarray
    degenerate: bool


def normalize01(image) -> Normalized01:
    """Affinely map an image to [0, 1] by its own min/max.

    A constant image has no range to map; it comes back as all zeros
    with ``degenerate=True``.
    """
    arr = np.asarray(image, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise MetricError("image contains non-finite values")
    lo = arr.min()
    hi = arr.max()
    if hi == lo:
        return Normalized01(np.zeros_like(arr), True)
    return Normalized01((arr - lo) / (hi - lo), False)


def _as_unit_scale(image) -> np.ndarray:
    # Degenerate (constant) images have no defined normalization; use the
    # clipped raw values so e.g. an all-ones vs all-zeros pair scores 1.
    norm = normalize01(image)
    if norm.degenerate:
        return np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return norm.values


def rmse(a, b) -> float:
    """Root-mean-square error between two images on the [0, 1] scale."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    na = _as_unit_scale(a)
    nb = _as_unit_scale(b)
    return float(np.sqrt(np.mean((na - nb) ** 2)))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(
    a,
    b,
    *,
    window_size: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
    dynamic_range: float = 1.0,
) -> float:
    """Mean structural similarity with a Gaussian window.

    Inputs are expected on a common [0, 1] scale (``dynamic_range`` of 1).
    Local statistics use an 11-tap Gaussian window (sigma 1.5); the mean
    is taken over windows fully inside the image, so boundary padding
    never enters the score.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise MetricError("ssim expects 2D images")
    if min(a.shape) < window_size:
        raise MetricError(
            f"image {a.shape} smaller than the {window_size}x{window_size} window"
        )

    w = _gaussian_window(window_size, sigma)
    mu_a = correlate(a, w, mode="constant")
    mu_b = correlate(b, w, mode="constant")
    mu_aa = correlate(a * a, w, mode="constant")
    mu_bb = correlate(b * b, w, mode="constant")
    mu_ab = correlate(a * b, w, mode="constant")

    var_a = mu_aa - mu_a * mu_a
    var_b = mu_bb - mu_b * mu_b
    cov = mu_ab - mu_a * mu_b

    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )

    pad = window_size // 2
    interior = ssim_map[pad:-pad, pad:-pad]
    return float(interior.mean())


@dataclass
class MetricReport:
    ssim: float
    rmse: float
    per_slice: list[dict] | None = None

    def to_dict(self) -> dict:
        d = {"ssim": self.ssim, "rmse": self.rmse}
        if self.per_slice is not None:
            d["per_slice"] = self.per_slice
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def compare(a, b) -> MetricReport:
    """SSIM/RMSE pair on normalized inputs, as reported in experiments."""
    na = _as_unit_scale(a)
    nb = _as_unit_scale(b)
    return MetricReport(ssim=ssim(na, nb), rmse=rmse(a, b))
