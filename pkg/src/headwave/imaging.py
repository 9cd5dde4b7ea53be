"""Time-reversal (reverse-time migration) imaging.

One view = one shot: the recorded traces are backprojected through a
smooth or nominal background model and correlated at zero lag with the
forward-modeled source field, focusing energy on reflectors.  Per-view
images ("fragments") are normalized and stacked, or handed to the
learned fusion stage.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .acquisition import AcquisitionGeometry, Shot
from .phantom import Tissue, TissueMap, VelocityModel
from .solver import SolverConfig, SourceWavelet, backpropagate, forward_simulate


class ImagingError(ValueError):
    pass


@dataclass
class TraFragment:
    """Single-view migration image on the model grid."""

    image: np.ndarray
    view_id: int
    spacing_m: float
    sweep_angle_deg: float = 0.0
    background_model_id: str = ""

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        if self.image.ndim != 2:
            raise ImagingError("fragment image must be 2D")
        if not np.all(np.isfinite(self.image)):
            raise ImagingError("fragment contains non-finite values")
        if self.spacing_m <= 0:
            raise ImagingError("fragment spacing must be positive")


@dataclass
class FragmentSet:
    fragments: list[TraFragment]
    provenance: str = ""

    def __post_init__(self):
        if self.fragments:
            shape = self.fragments[0].image.shape
            if any(f.image.shape != shape for f in self.fragments):
                raise ImagingError("fragments do not share a grid shape")
            ids = [f.view_id for f in self.fragments]
            if len(set(ids)) != len(ids):
                raise ImagingError("fragment view ids are not unique")

    def __len__(self) -> int:
        return len(self.fragments)

    def images(self) -> np.ndarray:
        return np.stack([f.image for f in self.fragments], axis=0)

    def view_angles(self) -> np.ndarray:
        return np.array([f.sweep_angle_deg for f in self.fragments])

    def replaced(self, images: np.ndarray) -> "FragmentSet":
        """Same metadata, new per-view images."""
        if images.shape[0] != len(self.fragments):
            raise ImagingError("image count does not match fragment count")
        frags = [
            TraFragment(
                image=img,
                view_id=f.view_id,
                spacing_m=f.spacing_m,
                sweep_angle_deg=f.sweep_angle_deg,
                background_model_id=f.background_model_id,
            )
            for img, f in zip(images, self.fragments)
        ]
        return FragmentSet(fragments=frags, provenance=self.provenance)


def _balance_traces(traces: np.ndarray) -> np.ndarray:
    """Per-receiver RMS equalization to the mean RMS (illumination fix)."""
    rms = np.sqrt(np.mean(traces**2, axis=0))
    live = rms > 0
    if not live.any():
        return traces
    target = rms[live].mean()
    out = traces.copy()
    out[:, live] *= target / rms[live]
    return out


def _element_mute(shape, spacing_m, geometry, shot, radius_cells) -> np.ndarray:
    """Zero-one mask muting the injection singularity around the shot's
    own elements; the correlation image is not reflectivity there."""
    mask = np.ones(shape, dtype=np.float64)
    if radius_cells <= 0:
        return mask
    nodes = [geometry.elements[shot.source_element].position_m] + [
        geometry.elements[r].position_m for r in shot.receiver_elements
    ]
    ii = np.arange(shape[0])[:, None]
    jj = np.arange(shape[1])[None, :]
    for px, py in nodes:
        ci, cj = px / spacing_m, py / spacing_m
        mask[(ii - ci) ** 2 + (jj - cj) ** 2 <= radius_cells**2] = 0.0
    return mask


def tra_image(
    background: VelocityModel,
    shot_traces: np.ndarray,
    geometry: AcquisitionGeometry,
    shot: Shot,
    wavelet: SourceWavelet,
    config: SolverConfig,
    balance_traces: bool = False,
    mute_radius_cells: float = 3.0,
    background_model_id: str = "",
) -> TraFragment:
    """Zero-lag cross-correlation image of one shot's recorded data.

    I(x) = sum over stored snapshots of forward(x, t) * backprojected(x, t),
    scaled by the snapshot interval.  Cells within ``mute_radius_cells``
    of the shot's own elements are zeroed (the injection near-field is
    not reflectivity).  The image is linear in the recorded data unless
    ``balance_traces`` preprocesses the injected traces (per-receiver RMS
    equalization, the view-wise illumination fix used when producing
    datasets).
    """
    traces = np.asarray(shot_traces, dtype=np.float64)
    if traces.ndim != 2 or traces.shape[1] != len(shot.receiver_elements):
        raise ImagingError(
            f"shot traces must be (nt, {len(shot.receiver_elements)}), "
            f"got {traces.shape}"
        )
    if wavelet.nt != traces.shape[0]:
        raise ImagingError("wavelet length and trace length differ")

    _, fwd = forward_simulate(
        background, geometry, shot, wavelet, config, store_wavefield=True
    )
    if balance_traces:
        traces = _balance_traces(traces)
    back = backpropagate(background, geometry, shot, traces, config, wavelet.dt_s)
    image = np.einsum("tij,tij->ij", fwd.snapshots, back.snapshots)
    image *= wavelet.dt_s * config.store_stride
    image *= _element_mute(
        image.shape, background.spacing_m, geometry, shot, mute_radius_cells
    )
    n_angles = len(geometry.sweep_angles_deg)
    sweep_angle = geometry.sweep_angles_deg[shot.sweep_id] if shot.sweep_id < n_angles else 0.0
    return TraFragment(
        image=image,
        view_id=shot.sweep_id,
        spacing_m=background.spacing_m,
        sweep_angle_deg=float(sweep_angle),
        background_model_id=background_model_id,
    )


def migrate_survey(
    background: VelocityModel,
    channel_traces: np.ndarray,
    geometry: AcquisitionGeometry,
    wavelet: SourceWavelet,
    config: SolverConfig,
    balance_traces: bool = False,
    mute_radius_cells: float = 3.0,
    threads: int = 1,
    background_model_id: str = "",
) -> FragmentSet:
    """One fragment per shot from an (nt, ns, nr) channel tensor."""
    traces = np.asarray(channel_traces, dtype=np.float64)
    if traces.ndim != 3 or traces.shape[1] != geometry.n_shots:
        raise ImagingError(
            f"channel tensor must be (nt, {geometry.n_shots}, nr), got {traces.shape}"
        )

    def one(k):
        return tra_image(
            background,
            traces[:, k],
            geometry,
            geometry.shots[k],
            wavelet,
            config,
            balance_traces=balance_traces,
            mute_radius_cells=mute_radius_cells,
            background_model_id=background_model_id,
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            frags = list(pool.map(one, range(geometry.n_shots)))
    else:
        frags = [one(k) for k in range(geometry.n_shots)]
    return FragmentSet(fragments=frags)


def normalize_fragment(
    frag: TraFragment,
    bandpass: tuple[float, float] = (30e3, 600e3),
    background_speed: float = 1500.0,
) -> TraFragment:
    """View-wise normalization: drop DC, keep the source wavenumber band,
    rescale to unit peak.

    The band limit keeps radial wavenumbers 2*pi*f/c for f inside
    ``bandpass`` via a hard spectral mask -- a projection, so applying
    the whole operation twice reproduces it to round-off.
    """
    low_hz, high_hz = bandpass
    if not 0 <= low_hz < high_hz:
        raise ImagingError("bandpass must satisfy 0 <= low < high")
    nyquist_hz = background_speed / (2.0 * frag.spacing_m)
    if high_hz >= nyquist_hz:
        raise ImagingError(
            f"bandpass top {high_hz:.3g} Hz maps beyond the grid's wavenumber "
            f"Nyquist ({nyquist_hz:.3g} Hz at c={background_speed:.0f} m/s)"
        )

    out = frag.image - frag.image.mean()
    nx, ny = out.shape
    kx = np.fft.fftfreq(nx, d=frag.spacing_m)[:, None]
    ky = np.fft.rfftfreq(ny, d=frag.spacing_m)[None, :]
    k_cycles = np.hypot(kx, ky)  # cycles per meter
    lo = low_hz / background_speed
    hi = high_hz / background_speed
    mask = (k_cycles >= lo) & (k_cycles <= hi)
    spectrum = np.fft.rfft2(out) * mask
    out = np.fft.irfft2(spectrum, s=out.shape)

    peak = float(np.abs(out).max())
    if peak > 0:
        out = out / peak
    return TraFragment(
        image=out,
        view_id=frag.view_id,
        spacing_m=frag.spacing_m,
        sweep_angle_deg=frag.sweep_angle_deg,
        background_model_id=frag.background_model_id,
    )


def normalize_set(frags: FragmentSet, **kwargs) -> FragmentSet:
    out = [normalize_fragment(f, **kwargs) for f in frags.fragments]
    return FragmentSet(fragments=out, provenance=frags.provenance)


def stack_fragments(
    frags: FragmentSet, weights: np.ndarray | None = None
) -> np.ndarray:
    """Weighted sum over views, rescaled to unit peak amplitude."""
    if len(frags) == 0:
        raise ImagingError("cannot stack an empty fragment set")
    images = frags.images()
    if weights is None:
        stacked = images.sum(axis=0)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (len(frags),):
            raise ImagingError("need one weight per fragment")
        stacked = np.einsum("v,vij->ij", weights, images)
    peak = float(np.abs(stacked).max())
    if peak > 0:
        stacked = stacked / peak
    return stacked


def aperture_interior_mask(
    geometry: AcquisitionGeometry,
    shape: tuple[int, int],
    spacing_m: float,
    margin_cells: float = 4.0,
) -> np.ndarray:
    """Zero-one mask of the region enclosed by the transducer contour.

    The migration image represents reflectivity only inside the
    acquisition aperture; outside it the time-reversed field's outgoing
    branch correlates with the forward field and leaves mirror ghosts.
    Works for any star-shaped element layout (ring or head contour).
    """
    pos = geometry.positions() / spacing_m
    centroid = pos.mean(axis=0)
    ang = np.arctan2(pos[:, 1] - centroid[1], pos[:, 0] - centroid[0])
    rad = np.hypot(pos[:, 0] - centroid[0], pos[:, 1] - centroid[1])
    order = np.argsort(ang)
    ang_s = ang[order]
    rad_s = rad[order]
    # wrap for periodic interpolation
    ang_ext = np.concatenate([[ang_s[-1] - 2 * np.pi], ang_s, [ang_s[0] + 2 * np.pi]])
    rad_ext = np.concatenate([[rad_s[-1]], rad_s, [rad_s[0]]])

    ii = np.arange(shape[0])[:, None] - centroid[0]
    jj = np.arange(shape[1])[None, :] - centroid[1]
    cell_ang = np.arctan2(jj, ii)
    cell_rad = np.hypot(ii, jj)
    limit = np.interp(cell_ang.ravel(), ang_ext, rad_ext).reshape(shape)
    return (cell_rad <= limit - margin_cells).astype(np.float64)


def boundary_reference(tmap: TissueMap) -> np.ndarray:
    """Skull-boundary image in [0, 1]: the reflectivity ground truth that
    stacked migration images are scored against."""
    skull = (tmap.labels == Tissue.SKULL).astype(np.float64)
    gx, gy = np.gradient(skull)
    edge = np.hypot(gx, gy)
    peak = edge.max()
    return edge / peak if peak > 0 else edge
