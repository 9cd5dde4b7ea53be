import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from headwave.acquisition import AcquisitionGeometry, Element, Shot
from headwave.inversion import (
    FwiConfig,
    InversionError,
    fwi_gradient,
    fwi_invert,
    misfit,
)
from headwave.phantom import VelocityModel
from headwave.solver import ChannelData, SolverConfig, ricker, simulate_survey

H = 7e-4
CFG = SolverConfig(spatial_order=4, boundary_layer_cells=4)


def _small_geometry(n=16):
    els = []
    k = 0
    for i in (5, 10):
        for j in (5, 10):
            els.append(Element((i * H, j * H), k))
            k += 1
    shots = [Shot(s, tuple(range(len(els))), s) for s in range(len(els))]
    return AcquisitionGeometry(elements=els, shots=shots, mode="full")


def _smooth_model(n, seed, amp=120.0):
    rng = np.random.default_rng(seed)
    vals = 1500.0 + amp * gaussian_filter(rng.standard_normal((n, n)), 2)
    return VelocityModel(vals, H)


@pytest.fixture(scope="module")
def small_problem():
    geom = _small_geometry()
    w = ricker(300e3, 1e-7, 220)
    true_model = _smooth_model(16, 11)
    test_model = _smooth_model(16, 12)
    obs = simulate_survey(true_model, geom, w, CFG)
    return geom, w, true_model, test_model, obs


# ------------------------------------------------------------------ misfit

def test_misfit_zero_for_equal():
    geom = _small_geometry()
    rng = np.random.default_rng(0)
    traces = rng.standard_normal((50, 4, 4))
    a = ChannelData(traces=traces, dt_s=1e-7, geometry=geom)
    b = ChannelData(traces=traces.copy(), dt_s=1e-7, geometry=geom)
    assert misfit(a, b) == 0.0


def test_misfit_constant_offset_closed_form():
    geom = _small_geometry()
    zeros = np.zeros((50, 4, 4))
    a = ChannelData(traces=zeros, dt_s=1e-7, geometry=geom)
    b = ChannelData(traces=zeros + 1.0, dt_s=1e-7, geometry=geom)
    m = 50 * 4 * 4
    assert misfit(a, b) == pytest.approx(m / 2.0)


def test_misfit_matches_double_loop_oracle():
    geom = _small_geometry()
    rng = np.random.default_rng(1)
    x = rng.standard_normal((30, 4, 4))
    y = rng.standard_normal((30, 4, 4))
    total = 0.0
    for t in range(30):
        for s in range(4):
            for r in range(4):
                total += (y[t, s, r] - x[t, s, r]) ** 2
    expected = 0.5 * total
    got = misfit(
        ChannelData(traces=x, dt_s=1e-7, geometry=geom),
        ChannelData(traces=y, dt_s=1e-7, geometry=geom),
    )
    assert got == pytest.approx(expected, rel=1e-12)


def test_misfit_shape_mismatch():
    geom = _small_geometry()
    a = ChannelData(traces=np.zeros((10, 4, 4)), dt_s=1e-7, geometry=geom)
    b = ChannelData(traces=np.zeros((11, 4, 4)), dt_s=1e-7, geometry=geom)
    with pytest.raises(InversionError):
        misfit(a, b)


# ---------------------------------------------------------------- gradient

def test_gradient_zero_at_truth(small_problem):
    geom, w, true_model, _, obs = small_problem
    grad, zeta = fwi_gradient(true_model, obs, geom, w, CFG)
    assert zeta == 0.0
    assert np.abs(grad.values).max() == 0.0


def test_gradient_matches_finite_differences(small_problem):
    geom, w, _, model, obs = small_problem
    grad, _ = fwi_gradient(model, obs, geom, w, CFG)
    rng = np.random.default_rng(5)
    layer = CFG.boundary_layer_cells
    for _ in range(3):
        delta = gaussian_filter(rng.standard_normal((16, 16)), 1)
        mask = np.zeros((16, 16), bool)
        mask[layer:-layer, layer:-layer] = True
        delta[~mask] = 0.0
        delta /= np.abs(delta).max()
        eps = 0.5

        def zeta_of(values):
            cal = simulate_survey(VelocityModel(values, H), geom, w, CFG)
            return misfit(obs, cal)

        fd = (zeta_of(model.values + eps * delta) - zeta_of(model.values - eps * delta)) / (2 * eps)
        adj = float(np.sum(grad.values * delta))
        assert abs(fd - adj) <= 0.01 * abs(fd)


def test_gradient_zero_in_absorbing_band(small_problem):
    geom, w, _, model, obs = small_problem
    grad, _ = fwi_gradient(model, obs, geom, w, CFG)
    layer = CFG.boundary_layer_cells
    band = np.ones((16, 16), bool)
    band[layer:-layer, layer:-layer] = False
    assert np.all(grad.values[band] == 0.0)


def test_gradient_additive_over_shots(small_problem):
    geom, w, _, model, obs = small_problem
    total, _ = fwi_gradient(model, obs, geom, w, CFG)
    acc = np.zeros_like(total.values)
    for k in range(geom.n_shots):
        sub_geom = AcquisitionGeometry(
            elements=geom.elements,
            shots=[geom.shots[k]],
            mode=geom.mode,
            sweep_angles_deg=[geom.sweep_angles_deg[k]],
        )
        sub_obs = ChannelData(
            traces=obs.traces[:, k : k + 1], dt_s=obs.dt_s, geometry=sub_geom
        )
        g, _ = fwi_gradient(model, sub_obs, sub_geom, w, CFG)
        acc += g.values
    assert np.allclose(acc, total.values, rtol=1e-12, atol=1e-18)


def test_gradient_freeze_mask(small_problem):
    geom, w, _, model, obs = small_problem
    freeze = np.zeros((16, 16), bool)
    freeze[6:9, 6:9] = True
    grad, _ = fwi_gradient(model, obs, geom, w, CFG, freeze_mask=freeze)
    assert np.all(grad.values[freeze] == 0.0)


def test_gradient_threads_deterministic(small_problem):
    geom, w, _, model, obs = small_problem
    g1, z1 = fwi_gradient(model, obs, geom, w, CFG, threads=1)
    g2, z2 = fwi_gradient(model, obs, geom, w, CFG, threads=4)
    assert z1 == z2
    assert np.array_equal(g1.values, g2.values)


# ------------------------------------------------------------------ invert

def test_invert_truth_is_fixed_point(small_problem):
    geom, w, true_model, _, obs = small_problem
    result = fwi_invert(
        true_model, obs, geom, w, CFG, FwiConfig(epochs=3)
    )
    assert np.array_equal(result.model.values, true_model.values)
    assert all(z == 0.0 for z in result.misfit_history)


def test_invert_monotone_history_and_descent(small_problem):
    geom, w, _, model, obs = small_problem
    result = fwi_invert(
        model, obs, geom, w, CFG, FwiConfig(epochs=8, step_rule="backtracking")
    )
    hist = result.misfit_history
    assert len(hist) == 9
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))
    assert hist[-1] < hist[0]


def test_invert_freeze_mask_pins_cells(small_problem):
    geom, w, _, model, obs = small_problem
    freeze = np.zeros((16, 16), bool)
    freeze[6:9, 6:9] = True
    result = fwi_invert(
        model, obs, geom, w, CFG, FwiConfig(epochs=4), freeze_mask=freeze
    )
    assert np.array_equal(result.model.values[freeze], model.values[freeze])


def test_invert_clamps_velocities(small_problem):
    geom, w, _, model, obs = small_problem
    result = fwi_invert(
        model, obs, geom, w, CFG, FwiConfig(epochs=4, step_rule="fixed", initial_step=0.1)
    )
    assert result.model.values.min() >= 1000.0
    assert result.model.values.max() <= 6000.0


def test_fwi_config_validation():
    with pytest.raises(InversionError):
        FwiConfig(epochs=0)
    with pytest.raises(InversionError):
        FwiConfig(step_rule="newton")
    with pytest.raises(InversionError):
        FwiConfig(initial_step=0.5)


def test_invert_reports_failed_line_search(small_problem):
    geom, w, _, model, obs = small_problem
    # an unsatisfiable Armijo constant forces the early-stop path
    cfg = FwiConfig(epochs=3, step_rule="backtracking", armijo_c1=1e6, max_halvings=3)
    result = fwi_invert(model, obs, geom, w, CFG, cfg)
    assert result.stopped_early
    assert "no descent" in result.message
    assert np.array_equal(result.model.values, model.values)
