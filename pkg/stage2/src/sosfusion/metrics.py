"""SSIM and RMSE on [0, 1] images, matching the physics package's
conventions (11-tap Gaussian window, sigma 1.5, k1 0.01, k2 0.03, unit
dynamic range, interior-window mean) so scores agree across the two
implementations to floating-point round-off."""

from __future__ import annotations

import numpy as np


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _window_means(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    from numpy.lib.stride_tricks import sliding_window_view

    patches = sliding_window_view(img, w.shape)
    return np.einsum("ijkl,kl->ij", patches, w)


def ssim(a, b, window_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, dynamic_range: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError("ssim expects two congruent 2D images")
    if min(a.shape) < window_size:
        raise ValueError("image smaller than the SSIM window")
    w = _gaussian_window(window_size, sigma)
    mu_a = _window_means(a, w)
    mu_b = _window_means(b, w)
    var_a = _window_means(a * a, w) - mu_a * mu_a
    var_b = _window_means(b * b, w) - mu_b * mu_b
    cov = _window_means(a * b, w) - mu_a * mu_b
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float((num / den).mean())


def rmse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("rmse expects congruent images")
    return float(np.sqrt(np.mean((a - b) ** 2)))
