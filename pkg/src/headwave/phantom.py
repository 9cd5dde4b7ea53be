"""Procedural 2D brain phantoms and speed-of-sound models.

A phantom is a grid of tissue labels arranged as nested, randomized
ellipses: skull -> subarachnoid CSF -> cortical gray matter ->
subcortical white matter -> ventricles, with an optional disjoint
posterior cerebellum and an optional outer skin ring.  Rasterizing a
label map through a velocity table yields the simulation medium.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy.ndimage import gaussian_filter


class Tissue(IntEnum):
    BACKGROUND = 0
    SKIN = 1
    SKULL = 2
    CS_FLUID = 3
    GRAY_MATTER = 4
    WHITE_MATTER = 5
    VENTRICLES = 6
    CEREBELLUM = 7


#: Speed of sound per tissue class in m/s.  Background is the coupling
#: medium (water-like) and may be overridden via ``velocity_table``.
DEFAULT_VELOCITIES = {
    Tissue.BACKGROUND: 1500.0,
    Tissue.SKIN: 1700.0,
    Tissue.SKULL: 3000.0,
    Tissue.CS_FLUID: 1550.0,
    Tissue.GRAY_MATTER: 1500.0,
    Tissue.WHITE_MATTER: 1480.0,
    Tissue.VENTRICLES: 1510.0,
    Tissue.CEREBELLUM: 1520.0,
}

#: The five classes that must appear, strictly nested, in every phantom.
NESTED_CLASSES = (
    Tissue.SKULL,
    Tissue.CS_FLUID,
    Tissue.GRAY_MATTER,
    Tissue.WHITE_MATTER,
    Tissue.VENTRICLES,
)

VELOCITY_FLOOR = 1000.0
VELOCITY_CEIL = 6000.0


def velocity_table(background: float = 1500.0) -> dict[Tissue, float]:
    """Velocity lookup with a configurable coupling-medium speed."""
    table = dict(DEFAULT_VELOCITIES)
    table[Tissue.BACKGROUND] = float(background)
    return table


class PhantomError(ValueError):
    """Raised when a phantom specification cannot be realized."""


@dataclass(frozen=True)
class PhantomSpec:
    """Deterministic recipe for one axial phantom slice.

    ``layer_eccentricities`` optionally pins the axis ratio (b/a) of the
    five nested boundaries (skull outer, CSF outer, gray outer, white
    outer, ventricle); by default each is jittered from the grid aspect.
    ``head_fraction`` scales the outer skull semi-axis relative to the
    half-extent of the shorter grid dimension.
    """

    nx: int
    ny: int
    spacing_m: float
    seed: int
    layer_eccentricities: tuple[float, ...] | None = None
    head_fraction: float = 0.82
    include_skin: bool = False
    include_cerebellum: bool = True

    def to_dict(self) -> dict:
        return {
            "nx": self.nx,
            "ny": self.ny,
            "spacing_m": self.spacing_m,
            "seed": self.seed,
            "layer_eccentricities": (
                list(self.layer_eccentricities)
                if self.layer_eccentricities is not None
                else None
            ),
            "head_fraction": self.head_fraction,
            "include_skin": self.include_skin,
            "include_cerebellum": self.include_cerebellum,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        ecc = d.get("layer_eccentricities")
        return cls(
            nx=int(d["nx"]),
            ny=int(d["ny"]),
            spacing_m=float(d["spacing_m"]),
            seed=int(d["seed"]),
            layer_eccentricities=tuple(ecc) if ecc is not None else None,
            head_fraction=float(d.get("head_fraction", 0.82)),
            include_skin=bool(d.get("include_skin", False)),
            include_cerebellum=bool(d.get("include_cerebellum", True)),
        )


@dataclass
class TissueMap:
    """Tissue labels on a regular 2D grid with physical spacing."""

    labels: np.ndarray  # (nx, ny) uint8 of Tissue values
    spacing_m: float

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.ndim != 2:
            raise PhantomError("tissue label grid must be 2D")
        if self.spacing_m <= 0:
            raise PhantomError("grid spacing must be positive")
        valid = {int(t) for t in Tissue}
        present = set(np.unique(self.labels).tolist())
        if not present <= valid:
            raise PhantomError(f"unknown tissue labels: {sorted(present - valid)}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


@dataclass
class VelocityModel:
    """Speed-of-sound c(x) on a regular 2D grid."""

    values: np.ndarray  # (nx, ny) float64, m/s
    spacing_m: float
    origin_m: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise PhantomError("velocity grid must be 2D")
        if self.spacing_m <= 0:
            raise PhantomError("grid spacing must be positive")
        if not np.all(np.isfinite(self.values)):
            raise PhantomError("velocity grid contains non-finite values")
        lo, hi = self.values.min(), self.values.max()
        if lo < VELOCITY_FLOOR or hi > VELOCITY_CEIL:
            raise PhantomError(
                f"velocities [{lo:.1f}, {hi:.1f}] outside the physical range "
                f"[{VELOCITY_FLOOR:.0f}, {VELOCITY_CEIL:.0f}] m/s"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def copy(self) -> "VelocityModel":
        return VelocityModel(self.values.copy(), self.spacing_m, self.origin_m)


def _ellipse_mask(nx, ny, center, semi_axes, angle_rad):
    """Boolean mask of cells inside a rotated ellipse (cell units)."""
    i = np.arange(nx)[:, None] - center[0]
    j = np.arange(ny)[None, :] - center[1]
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    u = c * i + s * j
    v = -s * i + c * j
    a, b = semi_axes
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


# Ring thickness budget as fractions of the outer semi-axis, in nesting
# order: skull, CSF, gray matter.  White matter fills the remainder.
_RING_FRACTIONS = (0.09, 0.055, 0.16)
_MIN_RING_CELLS = 2.0
# Keep the head this many cells clear of the tightest grid edge so an
# offset transducer contour still fits inside the domain.
_EDGE_MOAT_CELLS = 3.0


def build_slice_phantom(spec: PhantomSpec) -> TissueMap:
    """Generate one randomized nested-ellipse tissue map.

    Deterministic for a fixed spec: the same seed yields bit-identical
    labels.  Raises :class:`PhantomError` when the grid cannot fit the
    five nested layers with at least 2-cell ring thickness.
    """
    if spec.nx < 32 or spec.ny < 32:
        raise PhantomError("phantom grid must be at least 32x32 cells")
    if spec.spacing_m <= 0:
        raise PhantomError("grid spacing must be positive")
    if not 0.0 < spec.head_fraction <= 0.95:
        raise PhantomError("head_fraction must lie in (0, 0.95]")
    if spec.layer_eccentricities is not None and len(spec.layer_eccentricities) != 5:
        raise PhantomError("layer_eccentricities needs exactly five entries")

    rng = np.random.default_rng(np.uint64(spec.seed & 0xFFFFFFFFFFFFFFFF))
    nx, ny = spec.nx, spec.ny
    half = min(nx - 1, ny - 1) / 2.0

    # Outer skull boundary: jittered size/aspect, slight global tilt.
    a_outer = spec.head_fraction * half * rng.uniform(0.96, 1.0)
    grid_aspect = min((ny - 1) / (nx - 1), 1.3)
    angle = rng.uniform(-0.26, 0.26)  # ~±15 degrees
    if spec.layer_eccentricities is not None:
        eccs = list(spec.layer_eccentricities)
    else:
        eccs = [grid_aspect * rng.uniform(0.95, 1.10) for _ in range(5)]

    thicknesses = [max(_MIN_RING_CELLS, f * a_outer) for f in _RING_FRACTIONS]
    if spec.include_skin:
        thicknesses_skin = max(_MIN_RING_CELLS, 0.03 * a_outer)
    else:
        thicknesses_skin = 0.0

    # Major semi-axes of the nested boundaries, outermost first.
    a_bounds = [a_outer]
    for th in thicknesses:
        a_bounds.append(a_bounds[-1] - th)
    a_white = a_bounds[-1]
    vent_a = 0.30 * a_white * rng.uniform(0.85, 1.1)
    if a_white < vent_a + _MIN_RING_CELLS or vent_a < 1.0:
        raise PhantomError(
            "grid too small to fit five nested layers with >=2-cell thickness: "
            f"white-matter semi-axis {a_white:.1f} cells cannot contain ventricles"
        )
    if a_outer + thicknesses_skin > half - _EDGE_MOAT_CELLS:
        raise PhantomError(
            "head (with skin ring) leaves no room for a transducer contour "
            "inside the grid; reduce head_fraction or enlarge the grid"
        )

    # Minor semi-axes: clamp so successive boundaries keep a 2-cell gap.
    b_bounds = []
    for k, a_k in enumerate(a_bounds):
        b_k = a_k * eccs[k]
        if not b_bounds:
            b_k = min(b_k, half - _EDGE_MOAT_CELLS - thicknesses_skin)
        else:
            b_k = min(b_k, b_bounds[-1] - _MIN_RING_CELLS)
        b_bounds.append(b_k)
    if b_bounds[-1] < vent_a + _MIN_RING_CELLS:
        raise PhantomError(
            "grid too small to fit five nested layers with >=2-cell thickness "
            "along the minor axis"
        )

    center = ((nx - 1) / 2.0, (ny - 1) / 2.0)
    labels = np.full((nx, ny), int(Tissue.BACKGROUND), dtype=np.uint8)

    if spec.include_skin:
        skin = _ellipse_mask(
            nx, ny, center,
            (a_outer + thicknesses_skin, b_bounds[0] + thicknesses_skin), angle,
        )
        labels[skin] = Tissue.SKIN

    ring_tissues = (Tissue.SKULL, Tissue.CS_FLUID, Tissue.GRAY_MATTER, Tissue.WHITE_MATTER)
    for tissue, a_k, b_k in zip(ring_tissues, a_bounds, b_bounds):
        labels[_ellipse_mask(nx, ny, center, (a_k, b_k), angle)] = tissue

    # Ventricles: a small off-center ellipse, kept >=2 cells inside the
    # white-matter boundary (anterior, away from the cerebellum site).
    b_white = b_bounds[-1]
    vent_b = vent_a * (eccs[4] if spec.layer_eccentricities is not None else rng.uniform(0.7, 0.9))
    shift = rng.uniform(0.05, 0.15) * a_white
    vent_center = (center[0] - shift * np.cos(angle), center[1] - shift * np.sin(angle))
    max_a = a_white - shift - _MIN_RING_CELLS
    vent_a = min(vent_a, max_a)
    vent_b = min(vent_b, b_white - _MIN_RING_CELLS, vent_a)
    if vent_a < 1.0 or vent_b < 1.0:
        raise PhantomError("grid too small to fit ventricles inside white matter")
    vent = _ellipse_mask(nx, ny, vent_center, (vent_a, vent_b), angle)
    vent &= labels == Tissue.WHITE_MATTER
    labels[vent] = Tissue.VENTRICLES

    # Cerebellum: disjoint posterior blob inside white matter, skipped
    # when it cannot keep clear of the ventricles and the gray boundary.
    if spec.include_cerebellum:
        cb_a = 0.26 * a_white * rng.uniform(0.8, 1.0)
        cb_shift = 0.55 * a_white
        cb_center = (
            center[0] + cb_shift * np.cos(angle),
            center[1] + cb_shift * np.sin(angle),
        )
        cb_a = min(cb_a, a_white - cb_shift - _MIN_RING_CELLS)
        cb_b = min(cb_a, 0.5 * b_white)
        if cb_a >= 1.5 and cb_b >= 1.5:
            cb = _ellipse_mask(nx, ny, cb_center, (cb_a, cb_b), angle)
            cb &= labels == Tissue.WHITE_MATTER
            labels[cb] = Tissue.CEREBELLUM

    tmap = TissueMap(labels, spec.spacing_m)
    missing = [t.name for t in NESTED_CLASSES if not np.any(labels == t)]
    if missing:
        raise PhantomError(f"generated phantom lost nested classes: {missing}")
    return tmap


def rasterize(tmap: TissueMap, lut: dict[Tissue, float] | None = None) -> VelocityModel:
    """Map tissue labels to speed of sound through a lookup table."""
    if lut is None:
        lut = DEFAULT_VELOCITIES
    table = np.zeros(max(int(t) for t in Tissue) + 1, dtype=np.float64)
    for tissue in Tissue:
        table[int(tissue)] = lut.get(tissue, DEFAULT_VELOCITIES[tissue])
    values = table[tmap.labels]
    return VelocityModel(values, tmap.spacing_m)


_EXTERIOR = (Tissue.BACKGROUND, Tissue.SKIN, Tissue.SKULL)


def homogeneous_interior(
    model: VelocityModel, tmap: TissueMap, c0: float = 1500.0
) -> VelocityModel:
    """Replace every tissue inside the skull with a uniform speed c0.

    Skull, skin and the exterior coupling medium are left unchanged;
    this is the poor-initial-model configuration for inversion studies.
    """
    if model.shape != tmap.shape:
        raise PhantomError(
            f"model grid {model.shape} does not match tissue map {tmap.shape}"
        )
    out = model.values.copy()
    interior = ~np.isin(tmap.labels, [int(t) for t in _EXTERIOR])
    out[interior] = c0
    return VelocityModel(out, model.spacing_m, model.origin_m)


def smooth_model(model: VelocityModel, sigma_cells: float) -> VelocityModel:
    """Gaussian-blur a velocity model (sigma in grid cells, mirror padding).

    sigma 0 is the identity.  Mirror padding keeps edge velocities from
    bleeding across the boundary, so the grid mean is preserved to well
    within 0.1%.
    """
    if sigma_cells < 0:
        raise PhantomError("smoothing sigma must be non-negative")
    if sigma_cells == 0:
        return model.copy()
    values = gaussian_filter(model.values, sigma=sigma_cells, mode="mirror")
    return VelocityModel(values, model.spacing_m, model.origin_m)


def smoothed_interior(
    model: VelocityModel, tmap: TissueMap, sigma_cells: float
) -> VelocityModel:
    """Smooth the tissue distribution inside the skull only.

    The good-initial-model configuration for inversion studies: skull,
    skin and the exterior keep their true values while the brain tissues
    are replaced by their Gaussian-blurred version.
    """
    if model.shape != tmap.shape:
        raise PhantomError(
            f"model grid {model.shape} does not match tissue map {tmap.shape}"
        )
    blurred = smooth_model(model, sigma_cells)
    out = model.values.copy()
    interior = ~np.isin(tmap.labels, [int(t) for t in _EXTERIOR])
    out[interior] = blurred.values[interior]
    return VelocityModel(out, model.spacing_m, model.origin_m)


def nominal_background(
    shape: tuple[int, int], spacing_m: float, c0: float = 1500.0
) -> VelocityModel:
    """Homogeneous background model (the nominal medium for migration)."""
    return VelocityModel(np.full(shape, float(c0)), spacing_m)
