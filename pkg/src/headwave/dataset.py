"""End-to-end dataset generation: phantom -> channel data -> fragments.

One "slice" is a phantom plus everything simulated from it; a dataset
is a directory of slices with per-slice manifests.  All products are
deterministic functions of the manifest parameters, so re-running a
slice regenerates byte-identical tensors.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from . import tensorio
from .acquisition import (
    FULL,
    PARTIAL,
    AcquisitionGeometry,
    full_contour_geometry,
    partial_arc_geometry,
)
from .imaging import (
    FragmentSet,
    TraFragment,
    aperture_interior_mask,
    migrate_survey,
    stack_fragments,
)
from .manifest import DatasetManifest, ManifestError
from .phantom import (
    PhantomSpec,
    TissueMap,
    VelocityModel,
    build_slice_phantom,
    nominal_background,
    rasterize,
    smooth_model,
)
from .solver import SolverConfig, SourceWavelet, ricker, simulate_survey


@dataclass(frozen=True)
class SliceParams:
    """Everything needed to synthesize one slice end to end."""

    mode: str = PARTIAL
    nx: int = 64
    ny: int = 64
    spacing_m: float = 7e-4
    seed: int = 0
    head_fraction: float = 0.5
    include_skin: bool = False
    # wavelet / record
    f0_hz: float = 300e3
    dt_s: float = 1e-7
    nt: int = 750
    # acquisition
    n_sweeps: int = 50
    n_elements: int = 51
    arc_deg: float = 36.0
    element_spacing_m: float = 1.35e-3
    contour_offset_m: float = 2e-3
    # solver
    spatial_order: int = 4
    boundary_layer_cells: int = 10
    boundary_kind: str = "sponge"
    cfl_safety: float = 0.8
    store_stride: int = 1
    # migration
    background: str = "homogeneous"  # or "smoothed"
    background_speed: float = 1500.0
    smooth_sigma_cells: float = 3.0
    balance_traces: bool = True
    mute_radius_cells: float = 2.0
    aperture_margin_cells: float = 2.0
    threads: int = 1

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            spatial_order=self.spatial_order,
            boundary_layer_cells=self.boundary_layer_cells,
            boundary_kind=self.boundary_kind,
            cfl_safety=self.cfl_safety,
            store_stride=self.store_stride,
        )

    def phantom_spec(self) -> PhantomSpec:
        return PhantomSpec(
            nx=self.nx,
            ny=self.ny,
            spacing_m=self.spacing_m,
            seed=self.seed,
            head_fraction=self.head_fraction,
            include_skin=self.include_skin,
        )

    def wavelet(self) -> SourceWavelet:
        return ricker(self.f0_hz, self.dt_s, self.nt)

    def to_dict(self) -> dict:
        from dataclasses import asdict

        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SliceParams":
        return cls(**d)


def build_geometry(tmap: TissueMap, params: SliceParams) -> AcquisitionGeometry:
    if params.mode == FULL:
        return full_contour_geometry(
            tmap, params.element_spacing_m, offset_m=params.contour_offset_m
        )
    if params.mode == PARTIAL:
        return partial_arc_geometry(
            tmap,
            n_sweeps=params.n_sweeps,
            n_elements=params.n_elements,
            arc_deg=params.arc_deg,
            offset_m=params.contour_offset_m,
        )
    raise ManifestError(f"unknown acquisition mode {params.mode!r}")


def migration_background(
    truth: VelocityModel, params: SliceParams
) -> VelocityModel:
    if params.background == "homogeneous":
        return nominal_background(truth.shape, truth.spacing_m, params.background_speed)
    if params.background == "smoothed":
        return smooth_model(truth, params.smooth_sigma_cells)
    raise ManifestError(f"unknown migration background {params.background!r}")


def generate_slice(outdir, params: SliceParams) -> DatasetManifest:
    """Phantom, geometry, channel data, fragments and stack for one slice."""
    os.makedirs(outdir, exist_ok=True)
    manifest = DatasetManifest(outdir)
    manifest.set("params", params.to_dict())
    manifest.set("seed", params.seed)
    manifest.set("phantom", params.phantom_spec().to_dict())
    manifest.set(
        "wavelet", {"f0_hz": params.f0_hz, "dt_s": params.dt_s, "nt": params.nt}
    )
    manifest.set("solver", params.solver_config().to_dict())

    tmap = build_slice_phantom(params.phantom_spec())
    truth = rasterize(tmap)
    tensorio.write_tensor(os.path.join(outdir, "labels.t"), tmap.labels.astype(np.float32))
    tensorio.write_tensor(os.path.join(outdir, "truth.t"), truth.values)
    manifest.register_file("labels", os.path.join(outdir, "labels.t"))
    manifest.register_file("truth", os.path.join(outdir, "truth.t"))

    geometry = build_geometry(tmap, params)
    manifest.set("geometry", geometry.to_dict())

    wavelet = params.wavelet()
    config = params.solver_config()
    channel = simulate_survey(truth, geometry, wavelet, config, threads=params.threads)
    tensorio.write_tensor(os.path.join(outdir, "channel.t"), channel.traces)
    manifest.register_file("channel", os.path.join(outdir, "channel.t"))

    background = migration_background(truth, params)
    frags = migrate_survey(
        background,
        channel.traces,
        geometry,
        wavelet,
        config,
        balance_traces=params.balance_traces,
        mute_radius_cells=params.mute_radius_cells,
        threads=params.threads,
        background_model_id=params.background,
    )
    mask = aperture_interior_mask(
        geometry, truth.shape, truth.spacing_m, params.aperture_margin_cells
    )
    frags = frags.replaced(frags.images() * mask)
    tensorio.write_tensor(os.path.join(outdir, "fragments.t"), frags.images())
    manifest.register_file("fragments", os.path.join(outdir, "fragments.t"))
    manifest.set("view_angles_deg", [f.sweep_angle_deg for f in frags.fragments])
    manifest.set("view_ids", [f.view_id for f in frags.fragments])

    stacked = stack_fragments(frags)
    tensorio.write_tensor(os.path.join(outdir, "stacked.t"), stacked)
    manifest.register_file("stacked", os.path.join(outdir, "stacked.t"))

    manifest.save()
    return manifest


def generate_dataset(outdir, n_slices: int, params: SliceParams) -> list[str]:
    """One sub-directory per slice, seeds offset from the base seed."""
    paths = []
    for k in range(n_slices):
        slice_params = replace(params, seed=params.seed + k)
        slice_dir = os.path.join(outdir, f"slice_{k:03d}")
        manifest = generate_slice(slice_dir, slice_params)
        paths.append(manifest.path)
    return paths


def load_fragments(manifest: DatasetManifest) -> FragmentSet:
    """Reconstruct the FragmentSet (images + view metadata) from disk."""
    images = tensorio.read_tensor(manifest.path_of("fragments")).astype(np.float64)
    params = manifest.get("params") or {}
    spacing = float(params.get("spacing_m", manifest.get("phantom", {}).get("spacing_m", 1.0)))
    angles = manifest.get("view_angles_deg") or [0.0] * images.shape[0]
    ids = manifest.get("view_ids") or list(range(images.shape[0]))
    frags = [
        TraFragment(
            image=images[k],
            view_id=int(ids[k]),
            spacing_m=spacing,
            sweep_angle_deg=float(angles[k]),
            background_model_id=str(params.get("background", "")),
        )
        for k in range(images.shape[0])
    ]
    return FragmentSet(fragments=frags, provenance=manifest.path)


def save_fragments(
    manifest: DatasetManifest, frags: FragmentSet, name: str = "fragments"
) -> None:
    path = os.path.join(manifest.directory, f"{name}.t")
    tensorio.write_tensor(path, frags.images())
    manifest.register_file(name, path)
    manifest.set("view_angles_deg", [f.sweep_angle_deg for f in frags.fragments])
    manifest.set("view_ids", [f.view_id for f in frags.fragments])
