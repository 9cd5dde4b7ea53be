"""Finite-difference time-domain solution of the 2D acoustic wave equation.

The pressure field follows

    laplacian(d) - (1/c^2) d_tt = s(x, t)

discretized with 2nd-order leapfrog in time and a selectable 2nd/4th
order central stencil in space.  Point sources inject additively at the
nearest grid node with amplitude dt^2 c^2 / h^2; receivers sample the
raw field at their nearest node.

The absorbing sponge is folded into the update symmetrically,

    u[n+1] = g * ((2 + dt^2 c^2 L)(g * u[n])) - g^2 * u[n-1] + source,

with g the taper field.  Written in sqrt-slowness coordinates the
per-step operator is a symmetric matrix, so receiver-injected
backpropagation is the exact transpose of source-to-receiver modeling;
the dot-product identity holds to machine precision, which is what the
migration imaging condition and the inversion gradient rely on.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .acquisition import AcquisitionGeometry, GeometryError, Shot
from .phantom import VelocityModel

SPONGE = "sponge"
CPML = "cpml"

#: 2D stability constants: dt <= C * h / c_max for the chosen stencil.
STABILITY_CONSTANT = {2: 1.0 / math.sqrt(2.0), 4: math.sqrt(3.0 / 8.0)}


class SolverError(Exception):
    pass


class StabilityError(SolverError):
    """Configured time step violates the CFL bound."""


class InstabilityError(SolverError):
    """Non-finite field values appeared during time stepping."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite field at time step {step}")


@dataclass(frozen=True)
class SourceWavelet:
    """Band-limited source time series."""

    samples: np.ndarray
    dt_s: float
    f0_hz: float

    @property
    def nt(self) -> int:
        return len(self.samples)


def ricker(f0_hz: float, dt_s: float, nt: int) -> SourceWavelet:
    """Ricker pulse (second derivative of a Gaussian) delayed by 1.5/f0.

    The delay leaves the truncated leading tail below ~1e-8 of the peak,
    so the sampled pulse keeps the zero-mean property.
    """
    if f0_hz <= 0 or dt_s <= 0:
        raise SolverError("wavelet frequency and time step must be positive")
    if nt < 4.0 / (f0_hz * dt_s):
        raise SolverError(
            f"nt={nt} too short to contain a {f0_hz:.3g} Hz pulse at "
            f"dt={dt_s:.3g} s (need at least {int(np.ceil(4.0 / (f0_hz * dt_s)))})"
        )
    t0 = 1.5 / f0_hz
    tau = np.arange(nt) * dt_s - t0
    arg = (np.pi * f0_hz * tau) ** 2
    samples = (1.0 - 2.0 * arg) * np.exp(-arg)
    return SourceWavelet(samples=samples, dt_s=dt_s, f0_hz=f0_hz)


@dataclass(frozen=True)
class SolverConfig:
    spatial_order: int = 4
    boundary_layer_cells: int = 20
    boundary_kind: str = SPONGE
    cfl_safety: float = 0.8
    store_stride: int = 1
    #: Peak per-application damping exponent of the sponge taper; by
    #: default scaled from the Courant number at run time.
    sponge_strength: float | None = None

    def __post_init__(self):
        if self.spatial_order not in (2, 4):
            raise SolverError("spatial_order must be 2 or 4")
        # Note: layers thinner than ~10 cells absorb poorly; 4 is the
        # hard floor so miniature verification grids remain usable.
        if self.boundary_layer_cells < 4:
            raise SolverError("boundary layer must be at least 4 cells")
        if self.boundary_kind not in (SPONGE, CPML):
            raise SolverError(f"unknown boundary kind {self.boundary_kind!r}")
        if not 0.0 < self.cfl_safety <= 0.9:
            raise SolverError("cfl_safety must lie in (0, 0.9]")
        if self.store_stride < 1:
            raise SolverError("store_stride must be >= 1")

    def to_dict(self) -> dict:
        return {
            "spatial_order": self.spatial_order,
            "boundary_layer_cells": self.boundary_layer_cells,
            "boundary_kind": self.boundary_kind,
            "cfl_safety": self.cfl_safety,
            "store_stride": self.store_stride,
            "sponge_strength": self.sponge_strength,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        return cls(
            spatial_order=int(d.get("spatial_order", 4)),
            boundary_layer_cells=int(d.get("boundary_layer_cells", 20)),
            boundary_kind=str(d.get("boundary_kind", SPONGE)),
            cfl_safety=float(d.get("cfl_safety", 0.8)),
            store_stride=int(d.get("store_stride", 1)),
            sponge_strength=d.get("sponge_strength"),
        )


@dataclass(frozen=True)
class StabilityReport:
    ok: bool
    dt_max_s: float
    courant: float
    message: str


def check_stability(
    model: VelocityModel,
    dt_s: float,
    spatial_order: int = 4,
    cfl_safety: float = 0.8,
) -> StabilityReport:
    """CFL check: dt <= cfl_safety * C_order * h / max(c)."""
    if spatial_order not in STABILITY_CONSTANT:
        raise SolverError("spatial_order must be 2 or 4")
    c_max = float(model.values.max())
    h = model.spacing_m
    dt_max = cfl_safety * STABILITY_CONSTANT[spatial_order] * h / c_max
    courant = c_max * dt_s / h
    if dt_s <= dt_max:
        return StabilityReport(True, dt_max, courant, "stable")
    return StabilityReport(
        False,
        dt_max,
        courant,
        f"dt={dt_s:.3e} s exceeds the stable limit {dt_max:.3e} s "
        f"(Courant {courant:.3f}); reduce dt or coarsen the grid",
    )


@dataclass
class ChannelData:
    """Recorded pressure traces, shaped (nt, n_shots, n_receivers)."""

    traces: np.ndarray
    dt_s: float
    geometry: AcquisitionGeometry

    def __post_init__(self):
        self.traces = np.asarray(self.traces, dtype=np.float64)
        if self.traces.ndim != 3:
            raise SolverError("channel data must be (nt, ns, nr)")
        if not np.all(np.isfinite(self.traces)):
            raise SolverError("channel data contains non-finite samples")

    @property
    def nt(self) -> int:
        return self.traces.shape[0]

    @property
    def record_time_s(self) -> float:
        return self.nt * self.dt_s


@dataclass
class Wavefield:
    """Stored field snapshots, forward-time indexed, shaped (nt_stored, nx, ny)."""

    snapshots: np.ndarray
    store_stride: int
    dt_s: float


def _sponge_taper(shape, layer, strength) -> np.ndarray:
    nx, ny = shape
    i = np.arange(nx)[:, None]
    j = np.arange(ny)[None, :]
    depth = np.minimum.reduce(
        [
            np.broadcast_to(i, (nx, ny)),
            np.broadcast_to(nx - 1 - i, (nx, ny)),
            np.broadcast_to(j, (nx, ny)),
            np.broadcast_to(ny - 1 - j, (nx, ny)),
        ]
    ).astype(np.float64)
    profile = np.where(
        depth < layer, 0.5 * (1.0 + np.cos(np.pi * np.minimum(depth, layer) / layer)), 0.0
    )
    return np.exp(-strength * profile)


def _laplacian(pad, core, out, order, inv_h2):
    if order == 2:
        out[:] = pad[2:, 1:-1]
        out += pad[:-2, 1:-1]
        out += pad[1:-1, 2:]
        out += pad[1:-1, :-2]
        out -= 4.0 * core
        out *= inv_h2
    else:
        out[:] = pad[3:-1, 2:-2]
        out += pad[1:-3, 2:-2]
        out += pad[2:-2, 3:-1]
        out += pad[2:-2, 1:-3]
        out *= 16.0
        out -= pad[4:, 2:-2]
        out -= pad[:-4, 2:-2]
        out -= pad[2:-2, 4:]
        out -= pad[2:-2, :-4]
        out -= 60.0 * core
        out *= inv_h2 / 12.0


def _cpml_profiles(n, layer, h, dt, c_max):
    """Damping coefficients (b, a) on integer and half-integer lines."""
    d0 = 3.0 * c_max * math.log(1e6) / (2.0 * layer * h)

    def coeffs(x):
        depth = np.maximum(layer - x, 0.0) + np.maximum(x - (n - 1 - layer), 0.0)
        d = d0 * (np.minimum(depth, layer) / layer) ** 2
        b = np.exp(-d * dt)
        a = b - 1.0
        return b, a

    b_int, a_int = coeffs(np.arange(n, dtype=np.float64))
    b_half, a_half = coeffs(np.arange(n + 1, dtype=np.float64) - 0.5)
    return b_int, a_int, b_half, a_half


class _Propagator:
    """One time-stepping engine bound to a model and solver config."""

    def __init__(self, model: VelocityModel, dt: float, config: SolverConfig):
        report = check_stability(model, dt, config.spatial_order, config.cfl_safety)
        if not report.ok:
            raise StabilityError(report.message)
        self.model = model
        self.config = config
        self.dt = dt
        self.h = model.spacing_m
        self.c = model.values
        nx, ny = self.c.shape
        layer = config.boundary_layer_cells
        if 2 * layer >= min(nx, ny):
            raise SolverError(
                f"absorbing layers ({layer} cells per side) leave no interior "
                f"on a {nx}x{ny} grid"
            )
        self.layer = layer
        self.c2dt2 = (self.c * dt) ** 2
        if config.boundary_kind == SPONGE:
            # Strength balances entry reflection (grows with damping)
            # against round-trip transmission; ~2 nepers per crossing
            # keeps re-injected energy under 1% of peak for layers >= 10.
            courant = float(self.c.max()) * dt / self.h
            strength = (
                config.sponge_strength
                if config.sponge_strength is not None
                else 2.0 * courant / layer
            )
            self.taper = _sponge_taper((nx, ny), layer, strength)
            self.taper2 = self.taper * self.taper
        else:
            c_max = float(self.c.max())
            self.bx_i, self.ax_i, self.bx_h, self.ax_h = _cpml_profiles(
                nx, layer, self.h, dt, c_max
            )
            self.by_i, self.ay_i, self.by_h, self.ay_h = _cpml_profiles(
                ny, layer, self.h, dt, c_max
            )

    def node_of(self, position_m) -> tuple[int, int]:
        i = int(round(position_m[0] / self.h))
        j = int(round(position_m[1] / self.h))
        nx, ny = self.c.shape
        if not (0 <= i < nx and 0 <= j < ny):
            raise GeometryError(f"element at {position_m} falls outside the grid")
        lo = self.layer
        if not (lo <= i < nx - lo and lo <= j < ny - lo):
            raise GeometryError(
                f"element at {position_m} sits inside the absorbing layer "
                f"({self.layer} cells); shrink the layer or move the element"
            )
        return i, j

    def interior_mask(self) -> np.ndarray:
        mask = np.zeros(self.c.shape, dtype=bool)
        lo = self.layer
        mask[lo:-lo, lo:-lo] = True
        return mask

    def run(
        self,
        src_nodes: np.ndarray,
        src_series: np.ndarray,
        rec_nodes: np.ndarray | None = None,
        store_mask: np.ndarray | None = None,
    ):
        """March nt steps; return (traces or None, snapshots or None).

        ``src_series`` is (nt, k) with one column per injection node;
        amplitudes are scaled by dt^2 c^2 / h^2 at the node.
        """
        if self.config.boundary_kind == SPONGE:
            return self._run_sponge(src_nodes, src_series, rec_nodes, store_mask)
        return self._run_cpml(src_nodes, src_series, rec_nodes, store_mask)

    def _prepare(self, src_nodes, src_series, rec_nodes, store_mask):
        nx, ny = self.c.shape
        nt = src_series.shape[0]
        si = np.asarray(src_nodes[:, 0]), np.asarray(src_nodes[:, 1])
        amps = self.dt**2 * self.c[si] ** 2 / self.h**2
        traces = None
        rec_idx = None
        if rec_nodes is not None:
            rec_idx = (np.asarray(rec_nodes[:, 0]), np.asarray(rec_nodes[:, 1]))
            traces = np.empty((nt, len(rec_nodes[:, 0])), dtype=np.float64)
        snaps = None
        if store_mask is not None:
            snaps = np.empty((int(store_mask.sum()), nx, ny), dtype=np.float64)
        return nt, si, amps, traces, rec_idx, snaps

    def _run_sponge(self, src_nodes, src_series, rec_nodes, store_mask):
        nx, ny = self.c.shape
        nt, si, amps, traces, rec_idx, snaps = self._prepare(
            src_nodes, src_series, rec_nodes, store_mask
        )
        order = self.config.spatial_order
        o = order // 2
        inv_h2 = 1.0 / self.h**2
        pad = np.zeros((nx + 2 * o, ny + 2 * o), dtype=np.float64)
        core = pad[o:-o, o:-o]
        u_prev = np.zeros((nx, ny), dtype=np.float64)
        u_cur = np.zeros((nx, ny), dtype=np.float64)
        lap = np.empty((nx, ny), dtype=np.float64)
        taper, taper2 = self.taper, self.taper2

        k = 0
        for n in range(nt):
            np.multiply(taper, u_cur, out=core)
            _laplacian(pad, core, lap, order, inv_h2)
            np.multiply(self.c2dt2, lap, out=lap)
            lap += core
            lap += core
            lap *= taper
            u_next = u_prev
            u_next *= taper2
            np.subtract(lap, u_next, out=u_next)
            np.add.at(u_next, si, amps * src_series[n])
            if not math.isfinite(float(u_next.max()) + float(u_next.min())):
                raise InstabilityError(n)
            if traces is not None:
                traces[n] = u_next[rec_idx]
            if store_mask is not None and store_mask[n]:
                snaps[k] = u_next
                k += 1
            u_prev, u_cur = u_cur, u_next
        return traces, snaps

    def _run_cpml(self, src_nodes, src_series, rec_nodes, store_mask):
        nx, ny = self.c.shape
        nt, si, amps, traces, rec_idx, snaps = self._prepare(
            src_nodes, src_series, rec_nodes, store_mask
        )
        h = self.h
        up = np.zeros((nx + 2, ny + 2), dtype=np.float64)
        u_prev = np.zeros((nx, ny), dtype=np.float64)
        u_cur = np.zeros((nx, ny), dtype=np.float64)
        psi_x = np.zeros((nx + 1, ny), dtype=np.float64)
        psi_y = np.zeros((nx, ny + 1), dtype=np.float64)
        xi_x = np.zeros((nx, ny), dtype=np.float64)
        xi_y = np.zeros((nx, ny), dtype=np.float64)
        bx_h = self.bx_h[:, None]
        ax_h = self.ax_h[:, None]
        bx_i = self.bx_i[:, None]
        ax_i = self.ax_i[:, None]

        k = 0
        for n in range(nt):
            up[1:-1, 1:-1] = u_cur
            px = np.diff(up[:, 1:-1], axis=0) / h
            psi_x *= bx_h
            psi_x += ax_h * px
            px += psi_x
            qx = np.diff(px, axis=0) / h
            xi_x *= bx_i
            xi_x += ax_i * qx
            qx += xi_x

            py = np.diff(up[1:-1, :], axis=1) / h
            psi_y *= self.by_h
            psi_y += self.ay_h * py
            py += psi_y
            qy = np.diff(py, axis=1) / h
            xi_y *= self.by_i
            xi_y += self.ay_i * qy
            qy += xi_y

            u_next = u_prev
            u_next *= -1.0
            u_next += 2.0 * u_cur
            qx += qy
            qx *= self.c2dt2
            u_next += qx
            np.add.at(u_next, si, amps * src_series[n])
            if not math.isfinite(float(u_next.max()) + float(u_next.min())):
                raise InstabilityError(n)
            if traces is not None:
                traces[n] = u_next[rec_idx]
            if store_mask is not None and store_mask[n]:
                snaps[k] = u_next
                k += 1
            u_prev, u_cur = u_cur, u_next
        return traces, snaps


def _shot_nodes(prop: _Propagator, geometry: AcquisitionGeometry, shot: Shot):
    src = np.array([prop.node_of(geometry.elements[shot.source_element].position_m)])
    rec = np.array(
        [prop.node_of(geometry.elements[r].position_m) for r in shot.receiver_elements]
    )
    return src, rec


def _store_mask(nt: int, stride: int, reverse: bool) -> np.ndarray:
    mask = np.zeros(nt, dtype=bool)
    if reverse:
        mask[(nt - 1) % stride :: stride] = True
    else:
        mask[::stride] = True
    return mask


def forward_simulate(
    model: VelocityModel,
    geometry: AcquisitionGeometry,
    shot: Shot,
    wavelet: SourceWavelet,
    config: SolverConfig,
    store_wavefield: bool = False,
) -> tuple[np.ndarray, Wavefield | None]:
    """Model one shot; returns traces (nt, n_receivers) and, optionally,
    the stored source wavefield.

    In full-aperture mode the firing element also records; its own trace
    is zeroed so the (N, N) data tensor has an empty diagonal.
    """
    prop = _Propagator(model, wavelet.dt_s, config)
    src, rec = _shot_nodes(prop, geometry, shot)
    nt = wavelet.nt
    mask = _store_mask(nt, config.store_stride, reverse=False) if store_wavefield else None
    traces, snaps = prop.run(src, wavelet.samples[:, None], rec_nodes=rec, store_mask=mask)
    for k, r in enumerate(shot.receiver_elements):
        if r == shot.source_element:
            traces[:, k] = 0.0
    wf = (
        Wavefield(snapshots=snaps, store_stride=config.store_stride, dt_s=wavelet.dt_s)
        if store_wavefield
        else None
    )
    return traces, wf


def backpropagate(
    model: VelocityModel,
    geometry: AcquisitionGeometry,
    shot: Shot,
    injected_traces: np.ndarray,
    config: SolverConfig,
    dt_s: float,
) -> Wavefield:
    """Inject time-reversed traces at the shot's receivers and store the
    resulting field re-indexed to forward time.

    With the sponge boundary this is the exact transpose of
    :func:`forward_simulate`: sampling the returned snapshots at the
    source node reproduces the adjoint of source-to-receiver modeling
    sample by sample.
    """
    injected = np.asarray(injected_traces, dtype=np.float64)
    if injected.ndim != 2 or injected.shape[1] != len(shot.receiver_elements):
        raise SolverError(
            f"injected traces must be (nt, {len(shot.receiver_elements)}), "
            f"got {injected.shape}"
        )
    prop = _Propagator(model, dt_s, config)
    _, rec = _shot_nodes(prop, geometry, shot)
    nt = injected.shape[0]
    mask = _store_mask(nt, config.store_stride, reverse=True)
    _, snaps = prop.run(rec, injected[::-1], rec_nodes=None, store_mask=mask)
    return Wavefield(
        snapshots=snaps[::-1].copy(), store_stride=config.store_stride, dt_s=dt_s
    )


def simulate_survey(
    model: VelocityModel,
    geometry: AcquisitionGeometry,
    wavelet: SourceWavelet,
    config: SolverConfig,
    threads: int = 1,
) -> ChannelData:
    """Run every shot of the schedule; returns (nt, n_shots, n_receivers).

    Shots are independent against the immutable model, so they may run
    concurrently; results are assembled in schedule order either way.
    """

    def one(shot):
        traces, _ = forward_simulate(model, geometry, shot, wavelet, config)
        return traces

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            all_traces = list(pool.map(one, geometry.shots))
    else:
        all_traces = [one(shot) for shot in geometry.shots]
    traces = np.stack(all_traces, axis=1)
    return ChannelData(traces=traces, dt_s=wavelet.dt_s, geometry=geometry)


def _envelope_onset(signal: np.ndarray) -> float:
    """Fractional index of the half-max leading edge of the first
    significant envelope peak (>= 20% of the global maximum), so late
    multiples and boundary remnants cannot drag the pick."""
    from scipy.signal import hilbert

    env = np.abs(hilbert(signal))
    gmax = float(env.max())
    interior_max = (env[1:-1] >= env[:-2]) & (env[1:-1] >= env[2:])
    cand = np.nonzero(interior_max & (env[1:-1] >= 0.2 * gmax))[0] + 1
    p = int(cand[0]) if len(cand) else int(np.argmax(env))
    level = 0.5 * env[p]
    above = np.nonzero(env[: p + 1] >= level)[0]
    k = int(above[0])
    if k == 0:
        return 0.0
    e0, e1 = env[k - 1], env[k]
    frac = (level - e0) / (e1 - e0) if e1 != e0 else 0.0
    return (k - 1) + frac


def first_arrival_time(trace: np.ndarray, dt_s: float, wavelet: SourceWavelet) -> float:
    """Estimate the travel time of the earliest arrival on a trace.

    Matched-filters the trace with the source pulse and picks the
    leading half-max edge of the correlation envelope; the same edge
    measured on the pulse autocorrelation calibrates the edge-to-peak
    offset, so the estimate tracks the wavefront rather than the peak of
    the dispersive 2D tail.
    """
    w = wavelet.samples
    m = np.correlate(trace, w, mode="full")[len(w) - 1 :]
    onset = _envelope_onset(m)
    auto = np.correlate(w, w, mode="full")
    onset_auto = _envelope_onset(auto) - (len(w) - 1)
    return (onset - onset_auto) * dt_s
