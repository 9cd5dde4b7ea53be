"""Fragment perturbation and degradation machinery.

Covers the robustness studies: position-moved (PM), quarter-turn
rotated (RT), and moved-plus-rotated (MR) fragments, additive Gaussian
noise at a prescribed level, and uniform view subsampling.  Everything
is seed-deterministic with independent per-fragment draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import FragmentSet


class AugmentError(ValueError):
    pass


KINDS = ("Original", "PM", "RT", "MR")
#: Axis-aligned unit shifts: +x, -x, +y, -y in (row, col) cell steps.
_DIRECTIONS = ((1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str = "Original"
    shift_px: int = 20
    #: Fixed quarter-turn for RT/MR; None draws one per fragment.
    rotation_deg: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise AugmentError(f"kind must be one of {KINDS}")
        if self.shift_px < 0:
            raise AugmentError("shift_px must be non-negative")
        if self.rotation_deg is not None and self.rotation_deg not in (0, 90, 180, 270):
            raise AugmentError("rotation_deg must be one of 0, 90, 180, 270")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "shift_px": self.shift_px,
            "rotation_deg": self.rotation_deg,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationSpec":
        return cls(
            kind=str(d["kind"]),
            shift_px=int(d["shift_px"]),
            rotation_deg=d.get("rotation_deg"),
            seed=int(d["seed"]),
        )


def _shift_zero_fill(img: np.ndarray, di: int, dj: int) -> np.ndarray:
    out = np.roll(img, (di, dj), axis=(0, 1))
    if di > 0:
        out[:di, :] = 0.0
    elif di < 0:
        out[di:, :] = 0.0
    if dj > 0:
        out[:, :dj] = 0.0
    elif dj < 0:
        out[:, dj:] = 0.0
    return out


def _rotate_center_square(img: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Quarter turn within the largest centered square; the border strip
    of a non-square grid stays put so the grid shape is preserved."""
    if quarter_turns % 4 == 0:
        return img.copy()
    nx, ny = img.shape
    side = min(nx, ny)
    i0 = (nx - side) // 2
    j0 = (ny - side) // 2
    out = img.copy()
    out[i0 : i0 + side, j0 : j0 + side] = np.rot90(
        img[i0 : i0 + side, j0 : j0 + side], k=quarter_turns
    )
    return out


def perturb_fragments(frags: FragmentSet, spec: PerturbationSpec) -> FragmentSet:
    """Apply the requested perturbation with per-fragment random draws.

    PM translates each fragment by ``shift_px`` in a random axis-aligned
    direction (zero fill); RT applies a random quarter turn; MR does PM
    then RT.  ``Original`` is the identity.
    """
    images = frags.images()
    n, nx, ny = images.shape
    if spec.kind in ("PM", "MR") and spec.shift_px >= min(nx, ny):
        raise AugmentError(
            f"shift of {spec.shift_px} cells exceeds the {nx}x{ny} grid"
        )
    if spec.kind == "Original":
        return frags.replaced(images.copy())

    rng = np.random.default_rng(np.uint64(spec.seed & 0xFFFFFFFFFFFFFFFF))
    out = np.empty_like(images)
    for k in range(n):
        img = images[k]
        if spec.kind in ("PM", "MR"):
            di, dj = _DIRECTIONS[int(rng.integers(4))]
            img = _shift_zero_fill(img, di * spec.shift_px, dj * spec.shift_px)
        if spec.kind in ("RT", "MR"):
            if spec.rotation_deg is None:
                turns = int(rng.integers(4))
            else:
                turns = spec.rotation_deg // 90
            img = _rotate_center_square(img, turns)
        out[k] = img
    return frags.replaced(out)


def add_noise(frags: FragmentSet, sigma: float, seed: int) -> FragmentSet:
    """Add i.i.d. Gaussian noise N(0, sigma^2) per cell.

    Expects fragments already on the [0, 1] training scale; values may
    leave [0, 1] (no clipping).  Each fragment's noise field is keyed to
    (seed, view_id), so noising commutes with reordering the set, and
    for a fixed seed the standard-normal field is shared across sigma
    levels, making degradation exactly monotone in the noise level.
    """
    if sigma < 0:
        raise AugmentError("noise sigma must be non-negative")
    images = frags.images()
    if sigma == 0:
        return frags.replaced(images.copy())
    out = np.empty_like(images)
    for k, frag in enumerate(frags.fragments):
        rng = np.random.default_rng([seed & 0xFFFFFFFF, frag.view_id])
        out[k] = images[k] + sigma * rng.standard_normal(images[k].shape)
    return frags.replaced(out)


def subsample_fragments(
    frags: FragmentSet, keep_fraction: float, seed: int
) -> FragmentSet:
    """Keep a uniformly random subset of round(keep_fraction * n) views,
    order preserved; the missing views are simply absent (the fusion
    stage pads them back via its view mask)."""
    if not 0 < keep_fraction <= 1:
        raise AugmentError("keep_fraction must lie in (0, 1]")
    n = len(frags)
    n_keep = int(round(keep_fraction * n))
    if n_keep < 1:
        raise AugmentError(
            f"keep_fraction {keep_fraction} of {n} fragments selects none"
        )
    if n_keep == n:
        return FragmentSet(fragments=list(frags.fragments), provenance=frags.provenance)
    rng = np.random.default_rng(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    chosen = np.sort(rng.choice(n, size=n_keep, replace=False))
    return FragmentSet(
        fragments=[frags.fragments[int(k)] for k in chosen],
        provenance=frags.provenance,
    )
