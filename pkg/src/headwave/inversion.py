"""Adjoint-state full-waveform inversion.

The misfit is the plain waveform least-squares objective; its gradient
per shot is the zero-lag correlation of the backprojected residual
field with the second time-difference of the forward field, scaled by
2 h^2 / (dt^2 c^3).  With this package's injection convention that
product-sum is the exact derivative of the discrete misfit (the
source-node injection term cancels analytically), so it matches central
finite differences to the tolerance of the line search, not just to
O(dt^2).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .acquisition import AcquisitionGeometry
from .phantom import VELOCITY_CEIL, VELOCITY_FLOOR, VelocityModel
from .solver import (
    ChannelData,
    SolverConfig,
    SolverError,
    SourceWavelet,
    backpropagate,
    forward_simulate,
)


class InversionError(SolverError):
    pass


@dataclass
class GradientField:
    """d(misfit)/dc on the model grid; zero in the absorbing band and
    wherever the freeze mask applies."""

    values: np.ndarray
    model: VelocityModel


@dataclass(frozen=True)
class FwiConfig:
    epochs: int = 30
    step_rule: str = "backtracking"  # or "fixed"
    #: First-update size as a fraction of max(c); the raw gradient is
    #: rescaled so the initial step moves the model by this much in the
    #: infinity norm.
    initial_step: float = 0.01
    max_halvings: int = 20
    armijo_c1: float = 1e-4

    def __post_init__(self):
        if self.epochs < 1:
            raise InversionError("epochs must be >= 1")
        if self.step_rule not in ("fixed", "backtracking"):
            raise InversionError("step_rule must be 'fixed' or 'backtracking'")
        if not 0.0 < self.initial_step <= 0.1:
            raise InversionError("initial_step must lie in (0, 0.1]")


@dataclass
class FwiResult:
    model: VelocityModel
    misfit_history: list[float]
    stopped_early: bool = False
    message: str = ""


def misfit(obs: ChannelData, cal: ChannelData) -> float:
    """Half the summed squared waveform residual over all samples."""
    if obs.traces.shape != cal.traces.shape:
        raise InversionError(
            f"observed {obs.traces.shape} and calculated {cal.traces.shape} "
            "channel data are not congruent"
        )
    if obs.dt_s != cal.dt_s:
        raise InversionError("observed and calculated dt differ")
    diff = cal.traces - obs.traces
    return 0.5 * float(np.sum(diff * diff))


def _shot_misfit(model, geometry, shot, wavelet, config, obs_slice) -> float:
    cal, _ = forward_simulate(model, geometry, shot, wavelet, config)
    diff = cal - obs_slice
    return 0.5 * float(np.sum(diff * diff))


def _shot_gradient(model, geometry, shot, wavelet, config, obs_slice):
    """(gradient, misfit) for one shot; see module docstring for the
    correlation formula."""
    cal, wf = forward_simulate(
        model, geometry, shot, wavelet, config, store_wavefield=True
    )
    resid = cal - obs_slice
    zeta = 0.5 * float(np.sum(resid * resid))
    back = backpropagate(model, geometry, shot, resid, config, wavelet.dt_s)

    fwd = wf.snapshots
    ddf = fwd.copy()
    ddf[1:] -= 2.0 * fwd[:-1]
    ddf[2:] += fwd[:-2]
    corr = np.einsum("tij,tij->ij", back.snapshots, ddf)

    h = model.spacing_m
    dt = wavelet.dt_s
    grad = (2.0 * h * h / (dt * dt)) * corr / model.values**3
    return grad, zeta


def fwi_gradient(
    model: VelocityModel,
    obs: ChannelData,
    geometry: AcquisitionGeometry,
    wavelet: SourceWavelet,
    config: SolverConfig,
    freeze_mask: np.ndarray | None = None,
    threads: int = 1,
) -> tuple[GradientField, float]:
    """Misfit gradient accumulated over every shot of the schedule.

    The absorbing band is zeroed (model updates stay physical there) and
    an optional boolean freeze mask pins cells that must not move.
    """
    if obs.traces.shape[1] != geometry.n_shots:
        raise InversionError(
            f"observed data has {obs.traces.shape[1]} shots, geometry "
            f"schedules {geometry.n_shots}"
        )
    cfg = replace(config, store_stride=1)  # gradient needs every snapshot
    nt = obs.traces.shape[0]
    if wavelet.nt != nt:
        raise InversionError("wavelet length and observed nt differ")

    def one(k):
        try:
            return _shot_gradient(
                model, geometry, geometry.shots[k], wavelet, cfg, obs.traces[:, k]
            )
        except SolverError as err:
            raise InversionError(f"shot {k}: {err}") from err

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(geometry.n_shots)))
    else:
        results = [one(k) for k in range(geometry.n_shots)]

    total = np.zeros(model.shape, dtype=np.float64)
    zeta = 0.0
    for grad, z in results:  # fixed order: deterministic accumulation
        total += grad
        zeta += z

    layer = config.boundary_layer_cells
    mask = np.zeros(model.shape, dtype=bool)
    mask[layer:-layer, layer:-layer] = True
    total[~mask] = 0.0
    if freeze_mask is not None:
        total[np.asarray(freeze_mask, dtype=bool)] = 0.0
    return GradientField(values=total, model=model), zeta


def _survey_misfit(model, obs, geometry, wavelet, config, threads=1) -> float:
    def one(k):
        return _shot_misfit(
            model, geometry, geometry.shots[k], wavelet, config, obs.traces[:, k]
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return sum(pool.map(one, range(geometry.n_shots)))
    return sum(one(k) for k in range(geometry.n_shots))


def fwi_invert(
    model0: VelocityModel,
    obs: ChannelData,
    geometry: AcquisitionGeometry,
    wavelet: SourceWavelet,
    config: SolverConfig,
    fwi: FwiConfig = FwiConfig(),
    freeze_mask: np.ndarray | None = None,
    threads: int = 1,
    callback=None,
) -> FwiResult:
    """Steepest descent on the waveform misfit.

    The step length is scaled so the first update moves the model by
    ``initial_step * max(c)`` in the infinity norm; with the
    backtracking rule each epoch halves the step until the Armijo
    decrease holds, so the misfit history is non-increasing.  Velocities
    are clamped to the physical range after every update.
    """
    model = model0.copy()
    history: list[float] = []
    alpha_scale = None
    stopped = False
    message = ""

    for epoch in range(fwi.epochs):
        grad_field, zeta = fwi_gradient(
            model, obs, geometry, wavelet, config, freeze_mask, threads
        )
        if not history:
            history.append(zeta)
        grad = grad_field.values
        gmax = float(np.abs(grad).max())
        if gmax == 0.0:
            history.append(zeta)
            if callback is not None:
                callback(epoch, model, zeta)
            continue
        if alpha_scale is None:
            alpha_scale = fwi.initial_step * float(model.values.max()) / gmax

        def try_step(alpha):
            trial = np.clip(
                model.values - alpha * grad, VELOCITY_FLOOR, VELOCITY_CEIL
            )
            trial_model = VelocityModel(trial, model.spacing_m, model.origin_m)
            return trial_model, _survey_misfit(
                trial_model, obs, geometry, wavelet, config, threads
            )

        if fwi.step_rule == "fixed":
            model, zeta_new = try_step(alpha_scale)
        else:
            alpha = alpha_scale
            gg = float(np.sum(grad * grad))
            accepted = False
            for _ in range(fwi.max_halvings):
                trial_model, zeta_trial = try_step(alpha)
                if zeta_trial <= zeta - fwi.armijo_c1 * alpha * gg:
                    model, zeta_new = trial_model, zeta_trial
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                stopped = True
                message = (
                    f"line search found no descent after {fwi.max_halvings} "
                    f"halvings at epoch {epoch}"
                )
                history.append(zeta)
                break
        history.append(zeta_new)
        if callback is not None:
            callback(epoch, model, zeta_new)

    return FwiResult(
        model=model, misfit_history=history, stopped_early=stopped, message=message
    )
