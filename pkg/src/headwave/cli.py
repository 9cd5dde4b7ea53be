"""Command-line surface for the tomography pipeline.

Every command accepts --manifest/--seed/--out and is a pure function of
the manifest plus its flags: rerunning with the same inputs writes
byte-identical tensors.  Failures exit nonzero with a machine-readable
JSON error on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields, replace

import numpy as np

from . import tensorio
from .acquisition import AcquisitionGeometry, GeometryError
from .augment import AugmentError, PerturbationSpec, add_noise, perturb_fragments, subsample_fragments
from .dataset import (
    SliceParams,
    build_geometry,
    generate_dataset,
    load_fragments,
    migration_background,
    save_fragments,
)
from .imaging import ImagingError, aperture_interior_mask, migrate_survey, stack_fragments
from .inversion import FwiConfig, InversionError, fwi_invert
from .manifest import DatasetManifest, ManifestError
from .metrics import MetricError, MetricReport, normalize01, rmse, ssim
from .phantom import (
    PhantomError,
    PhantomSpec,
    Tissue,
    TissueMap,
    build_slice_phantom,
    homogeneous_interior,
    rasterize,
    smoothed_interior,
    VelocityModel,
)
from .solver import (
    ChannelData,
    SolverError,
    check_stability,
    simulate_survey,
)

_ERRORS = (
    AugmentError,
    GeometryError,
    ImagingError,
    InversionError,
    ManifestError,
    MetricError,
    PhantomError,
    SolverError,
    tensorio.TensorFormatError,
    FileNotFoundError,
    ValueError,
)


def _fail(err: Exception) -> int:
    payload = {"error": type(err).__name__, "message": str(err)}
    print(json.dumps(payload), file=sys.stderr)
    return 2


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("HEADWAVE_THREADS")
    return max(1, int(env)) if env else 1


def _common(parser: argparse.ArgumentParser, need_manifest: bool = False):
    parser.add_argument("--manifest", required=need_manifest, help="manifest.json or its directory")
    parser.add_argument("--seed", type=int, default=None, help="override the command's random seed")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--threads", type=int, default=None, help="worker threads (or HEADWAVE_THREADS)")


def _add_slice_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--mode", choices=["full", "partial"], default=None)
    parser.add_argument("--nx", type=int, default=None)
    parser.add_argument("--ny", type=int, default=None)
    parser.add_argument("--spacing", type=float, default=None, dest="spacing_m")
    parser.add_argument("--head-fraction", type=float, default=None, dest="head_fraction")
    parser.add_argument("--skin", action="store_true", default=None, dest="include_skin")
    parser.add_argument("--f0", type=float, default=None, dest="f0_hz")
    parser.add_argument("--dt", type=float, default=None, dest="dt_s")
    parser.add_argument("--nt", type=int, default=None)
    parser.add_argument("--sweeps", type=int, default=None, dest="n_sweeps")
    parser.add_argument("--elements", type=int, default=None, dest="n_elements")
    parser.add_argument("--arc-deg", type=float, default=None, dest="arc_deg")
    parser.add_argument("--element-spacing", type=float, default=None, dest="element_spacing_m")
    parser.add_argument("--contour-offset", type=float, default=None, dest="contour_offset_m")
    parser.add_argument("--order", type=int, default=None, dest="spatial_order")
    parser.add_argument("--boundary-cells", type=int, default=None, dest="boundary_layer_cells")
    parser.add_argument("--boundary-kind", choices=["sponge", "cpml"], default=None, dest="boundary_kind")
    parser.add_argument("--cfl-safety", type=float, default=None, dest="cfl_safety")
    parser.add_argument("--store-stride", type=int, default=None, dest="store_stride")
    parser.add_argument("--background", choices=["homogeneous", "smoothed"], default=None)
    parser.add_argument("--smooth-sigma", type=float, default=None, dest="smooth_sigma_cells")
    parser.add_argument("--no-balance", action="store_false", default=None, dest="balance_traces")
    parser.add_argument("--mute-radius", type=float, default=None, dest="mute_radius_cells")
    parser.add_argument("--aperture-margin", type=float, default=None, dest="aperture_margin_cells")


def _merged_params(manifest: DatasetManifest | None, args) -> SliceParams:
    base = SliceParams()
    if manifest is not None and manifest.get("params"):
        base = SliceParams.from_dict(manifest.get("params"))
    overrides = {}
    for f in fields(SliceParams):
        value = getattr(args, f.name, None)
        if value is not None:
            overrides[f.name] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None or os.environ.get("HEADWAVE_THREADS"):
        overrides["threads"] = _threads(args)
    return replace(base, **overrides)


def _out_manifest(manifest: DatasetManifest, args) -> DatasetManifest:
    """Clone the manifest into --out (or mutate in place when absent)."""
    if args.out is None or os.path.abspath(args.out) == manifest.directory:
        return manifest
    clone = DatasetManifest(args.out, json.loads(json.dumps(manifest.data)))
    os.makedirs(args.out, exist_ok=True)
    # re-anchor existing file references relative to the new directory
    for name, entry in clone.data["files"].items():
        src = os.path.normpath(os.path.join(manifest.directory, entry["path"]))
        entry["path"] = os.path.relpath(src, clone.directory).replace(os.sep, "/")
    return clone


def _load_tissue_map(manifest: DatasetManifest) -> TissueMap:
    spec = PhantomSpec.from_dict(manifest.get("phantom"))
    return build_slice_phantom(spec)


# --------------------------------------------------------------------------
# command handlers


def cmd_phantom(args) -> int:
    outdir = args.out or "."
    params = _merged_params(None, args)
    manifest = DatasetManifest(outdir)
    spec = params.phantom_spec()
    tmap = build_slice_phantom(spec)
    truth = rasterize(tmap)
    os.makedirs(outdir, exist_ok=True)
    tensorio.write_tensor(os.path.join(outdir, "labels.t"), tmap.labels.astype(np.float32))
    tensorio.write_tensor(os.path.join(outdir, "truth.t"), truth.values)
    manifest.set("params", params.to_dict())
    manifest.set("seed", spec.seed)
    manifest.set("phantom", spec.to_dict())
    manifest.register_file("labels", os.path.join(outdir, "labels.t"))
    manifest.register_file("truth", os.path.join(outdir, "truth.t"))
    manifest.save()
    print(manifest.path)
    return 0


def cmd_simulate(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    params = _merged_params(manifest, args)
    out = _out_manifest(manifest, args)
    tmap = _load_tissue_map(manifest)
    truth = rasterize(tmap)
    geometry = build_geometry(tmap, params)
    wavelet = params.wavelet()
    config = params.solver_config()
    report = check_stability(truth, wavelet.dt_s, config.spatial_order, config.cfl_safety)
    if not report.ok:
        raise SolverError(report.message)
    channel = simulate_survey(truth, geometry, wavelet, config, threads=params.threads)
    path = os.path.join(out.directory, "channel.t")
    tensorio.write_tensor(path, channel.traces)
    out.set("params", params.to_dict())
    out.set("wavelet", {"f0_hz": params.f0_hz, "dt_s": params.dt_s, "nt": params.nt})
    out.set("solver", config.to_dict())
    out.set("geometry", geometry.to_dict())
    out.register_file("channel", path)
    out.save()
    print(path)
    return 0


def cmd_migrate(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    params = _merged_params(manifest, args)
    out = _out_manifest(manifest, args)
    tmap = _load_tissue_map(manifest)
    truth = rasterize(tmap)
    geometry = AcquisitionGeometry.from_dict(manifest.get("geometry"))
    wavelet = params.wavelet()
    config = params.solver_config()
    traces = tensorio.read_tensor(manifest.path_of("channel")).astype(np.float64)
    background = migration_background(truth, params)
    frags = migrate_survey(
        background,
        traces,
        geometry,
        wavelet,
        config,
        balance_traces=bool(params.balance_traces),
        mute_radius_cells=params.mute_radius_cells,
        threads=params.threads,
        background_model_id=params.background,
    )
    mask = aperture_interior_mask(
        geometry, truth.shape, truth.spacing_m, params.aperture_margin_cells
    )
    frags = frags.replaced(frags.images() * mask)
    save_fragments(out, frags)
    out.set("params", params.to_dict())
    out.save()
    print(out.path_of("fragments"))
    return 0


def cmd_stack(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    out = _out_manifest(manifest, args)
    frags = load_fragments(manifest)
    stacked = stack_fragments(frags)
    path = os.path.join(out.directory, "stacked.t")
    tensorio.write_tensor(path, stacked)
    out.register_file("stacked", path)
    out.save()
    print(path)
    return 0


def cmd_invert(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    params = _merged_params(manifest, args)
    out = _out_manifest(manifest, args)
    tmap = _load_tissue_map(manifest)
    truth = rasterize(tmap)
    geometry = AcquisitionGeometry.from_dict(manifest.get("geometry"))
    wavelet = params.wavelet()
    config = params.solver_config()
    traces = tensorio.read_tensor(manifest.path_of("channel")).astype(np.float64)
    obs = ChannelData(traces=traces, dt_s=wavelet.dt_s, geometry=geometry)

    if args.initial == "homogeneous":
        model0 = homogeneous_interior(truth, tmap, params.background_speed)
    elif args.initial == "smoothed":
        model0 = smoothed_interior(truth, tmap, params.smooth_sigma_cells)
    else:
        values = tensorio.read_tensor(args.initial).astype(np.float64)
        model0 = VelocityModel(values, truth.spacing_m)

    freeze = None
    if args.freeze_background:
        freeze = tmap.labels == Tissue.BACKGROUND

    fwi_cfg = FwiConfig(
        epochs=args.epochs,
        step_rule=args.step_rule,
        initial_step=args.initial_step,
    )
    saved = []

    def callback(epoch, model, zeta):
        if args.save_every and (epoch + 1) % args.save_every == 0:
            p = os.path.join(out.directory, f"fwi_epoch_{epoch + 1:03d}.t")
            tensorio.write_tensor(p, model.values)
            saved.append(p)

    result = fwi_invert(
        model0, obs, geometry, wavelet, config, fwi_cfg,
        freeze_mask=freeze, threads=params.threads, callback=callback,
    )
    model_path = os.path.join(out.directory, "fwi_model.t")
    tensorio.write_tensor(model_path, result.model.values)
    history_path = os.path.join(out.directory, "fwi_history.json")
    with open(history_path, "w") as fh:
        json.dump(
            {
                "misfit_history": result.misfit_history,
                "stopped_early": result.stopped_early,
                "message": result.message,
                "initial": args.initial,
                "epochs": args.epochs,
            },
            fh,
            indent=2,
        )
    out.register_file("fwi_model", model_path)
    out.register_file("fwi_history", history_path)
    for k, p in enumerate(saved):
        out.register_file(f"fwi_epoch_{k}", p)
    out.save()
    print(model_path)
    return 0


def cmd_perturb(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    out = _out_manifest(manifest, args)
    frags = load_fragments(manifest)
    spec = PerturbationSpec(
        kind=args.kind, shift_px=args.shift, seed=args.seed if args.seed is not None else 0
    )
    perturbed = perturb_fragments(frags, spec)
    save_fragments(out, perturbed)
    out.set("perturbation", spec.to_dict())
    out.save()
    print(out.path_of("fragments"))
    return 0


def cmd_noise(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    out = _out_manifest(manifest, args)
    frags = load_fragments(manifest)
    # noise is defined on the [0, 1] training scale
    images = frags.images()
    scaled = np.stack([normalize01(img).values for img in images])
    seed = args.seed if args.seed is not None else 0
    noisy = add_noise(frags.replaced(scaled), args.sigma, seed)
    save_fragments(out, noisy)
    out.set("noise", {"sigma": args.sigma, "seed": seed, "normalized01": True})
    out.save()
    print(out.path_of("fragments"))
    return 0


def cmd_subsample(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    out = _out_manifest(manifest, args)
    frags = load_fragments(manifest)
    seed = args.seed if args.seed is not None else 0
    subset = subsample_fragments(frags, args.keep, seed)
    save_fragments(out, subset)
    out.set("subsample", {"keep_fraction": args.keep, "seed": seed})
    out.save()
    print(out.path_of("fragments"))
    return 0


def cmd_metrics(args) -> int:
    a = tensorio.read_tensor(args.a).astype(np.float64)
    b = tensorio.read_tensor(args.b).astype(np.float64)
    na = normalize01(a)
    nb = normalize01(b)
    va = np.clip(a, 0, 1) if na.degenerate else na.values
    vb = np.clip(b, 0, 1) if nb.degenerate else nb.values
    report = MetricReport(ssim=ssim(va, vb), rmse=rmse(a, b))
    print(report.to_json())
    return 0


def cmd_dataset(args) -> int:
    outdir = args.out or "dataset"
    params = _merged_params(None, args)
    paths = generate_dataset(outdir, args.slices, params)
    for p in paths:
        print(p)
    return 0


def cmd_export_npy(args) -> int:
    arr = tensorio.read_tensor(args.input)
    np.save(args.output, arr)
    print(args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="headwave",
        description="2D transcranial ultrasound tomography pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a tissue map and velocity model")
    _common(p)
    _add_slice_flags(p)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("simulate", help="synthesize channel data for a phantom")
    _common(p, need_manifest=True)
    _add_slice_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("migrate", help="form per-view migration fragments")
    _common(p, need_manifest=True)
    _add_slice_flags(p)
    p.set_defaults(func=cmd_migrate)

    p = sub.add_parser("stack", help="stack fragments into one image")
    _common(p, need_manifest=True)
    p.set_defaults(func=cmd_stack)

    p = sub.add_parser("invert", help="full-waveform inversion of channel data")
    _common(p, need_manifest=True)
    _add_slice_flags(p)
    p.add_argument("--initial", default="smoothed",
                   help="'homogeneous', 'smoothed', or a velocity tensor path")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--step-rule", choices=["fixed", "backtracking"], default="backtracking")
    p.add_argument("--initial-step", type=float, default=0.01)
    p.add_argument("--save-every", type=int, default=0)
    p.add_argument("--freeze-background", action="store_true")
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("perturb", help="PM/RT/MR fragment perturbations")
    _common(p, need_manifest=True)
    p.add_argument("--kind", choices=["Original", "PM", "RT", "MR"], required=True)
    p.add_argument("--shift", type=int, default=20)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("noise", help="add Gaussian noise to fragments")
    _common(p, need_manifest=True)
    p.add_argument("--sigma", type=float, required=True)
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("subsample", help="randomly keep a fraction of views")
    _common(p, need_manifest=True)
    p.add_argument("--keep", type=float, required=True)
    p.set_defaults(func=cmd_subsample)

    p = sub.add_parser("metrics", help="SSIM/RMSE between two image tensors")
    _common(p)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("dataset", help="end-to-end multi-slice dataset generation")
    _common(p)
    _add_slice_flags(p)
    p.add_argument("--slices", type=int, default=1)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("export-npy", help="convert a tensor file to .npy")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_export_npy)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _ERRORS as err:
        return _fail(err)


if __name__ == "__main__":
    sys.exit(main())
