"""Transducer geometries and shot schedules.

Two acquisition styles are supported:

* ``full``: point transducers along the whole head contour; every
  element fires once while all elements record (the firing element's
  own trace is zeroed by the solver).
* ``partial``: a movable odd-count arc (51 elements by default) that
  sweeps around the head; per sweep the center element fires and the
  rest record.

Element positions sit on the skull contour offset outward into the
coupling medium, extracted by marching squares on the skull mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from skimage import measure

from .phantom import Tissue, TissueMap

FULL = "full"
PARTIAL = "partial"


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Element:
    position_m: tuple[float, float]
    index: int


@dataclass(frozen=True)
class Shot:
    source_element: int
    receiver_elements: tuple[int, ...]
    sweep_id: int = 0


@dataclass
class AcquisitionGeometry:
    elements: list[Element]
    shots: list[Shot]
    mode: str
    #: Polar angle (degrees, from +x toward +y about the head center) of
    #: each shot's source; view metadata for downstream fusion.
    sweep_angles_deg: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in (FULL, PARTIAL):
            raise GeometryError(f"unknown acquisition mode {self.mode!r}")
        if not self.sweep_angles_deg:
            self.sweep_angles_deg = [0.0] * len(self.shots)
        if len(self.sweep_angles_deg) != len(self.shots):
            raise GeometryError("one sweep angle per shot required")

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_shots(self) -> int:
        return len(self.shots)

    def positions(self) -> np.ndarray:
        return np.array([e.position_m for e in self.elements], dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "elements": [list(e.position_m) for e in self.elements],
            "shots": [
                {
                    "source": s.source_element,
                    "receivers": list(s.receiver_elements),
                    "sweep": s.sweep_id,
                }
                for s in self.shots
            ],
            "sweep_angles_deg": list(self.sweep_angles_deg),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AcquisitionGeometry":
        elements = [
            Element(position_m=(float(p[0]), float(p[1])), index=k)
            for k, p in enumerate(d["elements"])
        ]
        shots = [
            Shot(
                source_element=int(s["source"]),
                receiver_elements=tuple(int(r) for r in s["receivers"]),
                sweep_id=int(s.get("sweep", 0)),
            )
            for s in d["shots"]
        ]
        return cls(
            elements=elements,
            shots=shots,
            mode=d["mode"],
            sweep_angles_deg=[float(a) for a in d.get("sweep_angles_deg", [])],
        )


def _smooth_closed(contour: np.ndarray, window_cells: float = 3.0) -> np.ndarray:
    """Circular moving average of a closed polyline.

    Marching squares follows the staircase of the binary mask, which
    inflates arc length by up to ~27%; averaging over a few cells
    recovers the smooth boundary so arc-length element spacing and the
    circumference oracle hold.
    """
    dense = _resample_closed(contour, max(512, 4 * len(contour)))
    seg = _contour_arclength(dense) / len(dense)
    win = max(3, int(round(window_cells / seg)) | 1)
    kernel = np.ones(win) / win
    out = np.empty_like(dense)
    for axis in (0, 1):
        wrapped = np.concatenate([dense[-(win // 2):, axis], dense[:, axis], dense[: win // 2, axis]])
        out[:, axis] = np.convolve(wrapped, kernel, mode="valid")
    return out


def _closed_skull_contour(tmap: TissueMap) -> np.ndarray:
    """Outer skull contour in cell coordinates, (n, 2), cyclic."""
    mask = (tmap.labels == Tissue.SKULL).astype(np.float64)
    if not mask.any():
        raise GeometryError("phantom has no skull region")
    contours = measure.find_contours(mask, 0.5)
    closed = [c for c in contours if np.allclose(c[0], c[-1])]
    if not closed:
        raise GeometryError("skull contour is open; cannot place transducers")

    def length(c):
        return np.hypot(*np.diff(c, axis=0).T).sum()

    contour = max(closed, key=length)
    return _smooth_closed(contour[:-1])


def _offset_outward(contour: np.ndarray, offset_cells: float) -> np.ndarray:
    """Push a closed polyline outward from its centroid along normals."""
    centroid = contour.mean(axis=0)
    tangent = np.roll(contour, -1, axis=0) - np.roll(contour, 1, axis=0)
    normal = np.stack([tangent[:, 1], -tangent[:, 0]], axis=1)
    norms = np.linalg.norm(normal, axis=1, keepdims=True)
    normal = normal / np.where(norms > 0, norms, 1.0)
    outward = np.einsum("ij,ij->i", contour - centroid, normal)
    normal[outward < 0] *= -1.0
    return contour + offset_cells * normal


def _resample_closed(contour: np.ndarray, n_points: int) -> np.ndarray:
    """Uniform arc-length resampling of a closed polyline."""
    closed = np.vstack([contour, contour[:1]])
    seg = np.hypot(*np.diff(closed, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    targets = np.arange(n_points) * (total / n_points)
    x = np.interp(targets, s, closed[:, 0])
    y = np.interp(targets, s, closed[:, 1])
    return np.stack([x, y], axis=1)


def _contour_arclength(contour: np.ndarray) -> float:
    closed = np.vstack([contour, contour[:1]])
    return float(np.hypot(*np.diff(closed, axis=0).T).sum())


def _prepared_contour(tmap: TissueMap, offset_m: float):
    """Offset contour (cells), its length (m), and its centroid (cells)."""
    if offset_m < 0:
        raise GeometryError("contour offset must be non-negative")
    contour = _closed_skull_contour(tmap)
    offset = _offset_outward(contour, offset_m / tmap.spacing_m)
    return offset, _contour_arclength(offset) * tmap.spacing_m, offset.mean(axis=0)


def _check_in_coupling_medium(tmap: TissueMap, positions_cells: np.ndarray):
    nx, ny = tmap.shape
    ii = np.rint(positions_cells[:, 0]).astype(int)
    jj = np.rint(positions_cells[:, 1]).astype(int)
    if (ii < 0).any() or (jj < 0).any() or (ii >= nx).any() or (jj >= ny).any():
        raise GeometryError("transducer contour leaves the model domain")
    labels = tmap.labels[ii, jj]
    if np.any(labels == Tissue.SKULL):
        raise GeometryError(
            "transducer position falls on the skull; increase the contour offset"
        )


def contour_length_m(tmap: TissueMap, offset_m: float = 2e-3) -> float:
    """Arc length of the offset transducer contour; pick
    ``element_spacing_m = contour_length_m(...) / N`` for exactly N
    elements."""
    _, total_m, _ = _prepared_contour(tmap, offset_m)
    return total_m


def full_contour_geometry(
    tmap: TissueMap,
    element_spacing_m: float,
    offset_m: float = 2e-3,
) -> AcquisitionGeometry:
    """Place elements at uniform arc length around the whole head.

    Every element fires once and all elements record, so a survey over
    this geometry yields an (nt, N, N) channel tensor.
    """
    if element_spacing_m <= 0:
        raise GeometryError("element spacing must be positive")
    offset, total_m, centroid = _prepared_contour(tmap, offset_m)
    n = int(round(total_m / element_spacing_m))
    if n < 3:
        raise GeometryError(
            f"element spacing {element_spacing_m} m admits only {n} elements"
        )
    pts = _resample_closed(offset, n)
    _check_in_coupling_medium(tmap, pts)

    h = tmap.spacing_m
    elements = [
        Element(position_m=(float(p[0] * h), float(p[1] * h)), index=k)
        for k, p in enumerate(pts)
    ]
    all_indices = tuple(range(n))
    shots = [Shot(source_element=k, receiver_elements=all_indices, sweep_id=k) for k in range(n)]
    angles = np.degrees(np.arctan2(pts[:, 1] - centroid[1], pts[:, 0] - centroid[0]))
    return AcquisitionGeometry(
        elements=elements,
        shots=shots,
        mode=FULL,
        sweep_angles_deg=[float(a % 360.0) for a in angles],
    )


def partial_arc_geometry(
    tmap: TissueMap,
    n_sweeps: int = 50,
    n_elements: int = 51,
    arc_deg: float = 36.0,
    offset_m: float = 2e-3,
) -> AcquisitionGeometry:
    """Movable arc: one sweep per rotation step of 360/n_sweeps degrees.

    Each sweep lays ``n_elements`` (odd) along an ``arc_deg`` stretch of
    the offset head contour, centered at the sweep angle; the middle
    element transmits and the remaining ``n_elements - 1`` record.
    """
    if n_elements % 2 == 0:
        raise GeometryError("arc needs an odd element count (unique center)")
    if n_elements < 3:
        raise GeometryError("arc needs at least 3 elements")
    if n_sweeps < 1:
        raise GeometryError("at least one sweep required")
    if not 0 < arc_deg <= 180:
        raise GeometryError("arc_deg must lie in (0, 180]")

    offset, total_m, centroid = _prepared_contour(tmap, offset_m)
    dense = _resample_closed(offset, max(4096, 16 * n_sweeps * n_elements))
    n_dense = len(dense)
    step = total_m / n_dense

    # Counter-clockwise orientation makes the polar angle increase with
    # arc length; the unwrapped angle then parameterizes the contour.
    area = 0.5 * np.sum(
        dense[:, 0] * np.roll(dense[:, 1], -1) - np.roll(dense[:, 0], -1) * dense[:, 1]
    )
    if area < 0:
        dense = dense[::-1].copy()
    phi = np.degrees(np.arctan2(dense[:, 1] - centroid[1], dense[:, 0] - centroid[0]))
    phi_unwrapped = np.degrees(np.unwrap(np.radians(phi)))
    if np.any(np.diff(phi_unwrapped) < -1.0):
        raise GeometryError("head contour is not star-shaped about its centroid")
    phi_unwrapped = np.maximum.accumulate(phi_unwrapped)

    s_of_index = np.arange(n_dense) * step
    arc_len = total_m * arc_deg / 360.0
    offsets = np.linspace(-arc_len / 2.0, arc_len / 2.0, n_elements)
    h = tmap.spacing_m

    elements: list[Element] = []
    shots: list[Shot] = []
    angles: list[float] = []
    for k in range(n_sweeps):
        theta = k * 360.0 / n_sweeps
        # map theta into the unwrapped angle range
        t = phi_unwrapped[0] + (theta - phi_unwrapped[0]) % 360.0
        s_center = np.interp(t, phi_unwrapped, s_of_index)
        s_pts = np.mod(s_center + offsets, total_m)
        idx = np.mod(np.rint(s_pts / step).astype(int), n_dense)
        pts = dense[idx]
        _check_in_coupling_medium(tmap, pts)

        base = len(elements)
        for m, p in enumerate(pts):
            elements.append(
                Element(position_m=(float(p[0] * h), float(p[1] * h)), index=base + m)
            )
        center = base + n_elements // 2
        receivers = tuple(
            i for i in range(base, base + n_elements) if i != center
        )
        shots.append(Shot(source_element=center, receiver_elements=receivers, sweep_id=k))
        angles.append(theta)

    return AcquisitionGeometry(
        elements=elements, shots=shots, mode=PARTIAL, sweep_angles_deg=angles
    )


def ring_geometry(
    center_m: tuple[float, float],
    radius_m: float,
    n_elements: int,
    mode: str = FULL,
) -> AcquisitionGeometry:
    """Ideal circular array, useful for homogeneous-medium experiments."""
    if n_elements < 3:
        raise GeometryError("ring needs at least 3 elements")
    angles = np.arange(n_elements) * (2 * np.pi / n_elements)
    elements = [
        Element(
            position_m=(
                float(center_m[0] + radius_m * np.cos(a)),
                float(center_m[1] + radius_m * np.sin(a)),
            ),
            index=k,
        )
        for k, a in enumerate(angles)
    ]
    all_indices = tuple(range(n_elements))
    shots = [
        Shot(source_element=k, receiver_elements=all_indices, sweep_id=k)
        for k in range(n_elements)
    ]
    return AcquisitionGeometry(
        elements=elements,
        shots=shots,
        mode=mode,
        sweep_angles_deg=[float(np.degrees(a)) for a in angles],
    )
