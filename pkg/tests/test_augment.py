import numpy as np
import pytest

from headwave.augment import (
    AugmentError,
    PerturbationSpec,
    add_noise,
    perturb_fragments,
    subsample_fragments,
)
from headwave.imaging import FragmentSet, TraFragment

H = 7e-4


def _frag_set(n_views=6, n=64, seed=0, blob=True):
    rng = np.random.default_rng(seed)
    frags = []
    for k in range(n_views):
        img = np.zeros((n, n))
        if blob:
            # keep the blob 24+ cells from every edge so a 20-px shift
            # never clips its support
            ci, cj = rng.integers(27, 37, size=2)
            img[ci - 3 : ci + 4, cj - 3 : cj + 4] = rng.random((7, 7)) + 0.5
        else:
            img = rng.random((n, n))
        frags.append(TraFragment(image=img, view_id=k, spacing_m=H, sweep_angle_deg=k * 10.0))
    return FragmentSet(fragments=frags)


def _centroid(img):
    total = np.abs(img).sum()
    ii, jj = np.indices(img.shape)
    return np.array([(np.abs(img) * ii).sum(), (np.abs(img) * jj).sum()]) / total


def test_original_kind_is_identity():
    frags = _frag_set()
    out = perturb_fragments(frags, PerturbationSpec(kind="Original", seed=3))
    assert np.array_equal(out.images(), frags.images())


def test_rt_all_zero_rotations_is_identity():
    # two fragments: a seed with both quarter-turn draws equal to zero
    # exists with probability 1/16 per seed; search a few.
    frags = _frag_set(n_views=2)
    for seed in range(200):
        rng = np.random.default_rng(np.uint64(seed))
        if all(int(rng.integers(4)) == 0 for _ in range(2)):
            out = perturb_fragments(frags, PerturbationSpec(kind="RT", seed=seed))
            assert np.array_equal(out.images(), frags.images())
            return
    pytest.fail("no all-zero-rotation seed found in 200 tries")


def test_pm_moves_support_centroid_by_exact_shift():
    frags = _frag_set(n_views=8, seed=1)
    shift = 20
    out = perturb_fragments(frags, PerturbationSpec(kind="PM", shift_px=shift, seed=7))
    for before, after in zip(frags.images(), out.images()):
        d = _centroid(after) - _centroid(before)
        # one axis moves by the shift, the other stays
        moved = np.abs(d)
        assert moved.max() == pytest.approx(shift, abs=1e-9)
        assert moved.min() == pytest.approx(0.0, abs=1e-9)


def test_pm_zero_fills_vacated_strip():
    n = 64
    img = np.ones((n, n))
    frags = FragmentSet(fragments=[TraFragment(image=img, view_id=0, spacing_m=H)])
    out = perturb_fragments(frags, PerturbationSpec(kind="PM", shift_px=10, seed=0))
    shifted = out.images()[0]
    assert shifted.sum() == pytest.approx(n * (n - 10))


def test_rt_rotates_within_center_square_on_nonsquare_grid():
    rng = np.random.default_rng(2)
    img = rng.random((40, 56))
    frags = FragmentSet(fragments=[TraFragment(image=img, view_id=0, spacing_m=H)])
    # find a seed whose single draw is a 90-degree turn
    for seed in range(100):
        r = np.random.default_rng(np.uint64(seed))
        if int(r.integers(4)) == 1:
            out = perturb_fragments(frags, PerturbationSpec(kind="RT", seed=seed))
            got = out.images()[0]
            side = 40
            j0 = (56 - side) // 2
            inner = img[:, j0 : j0 + side]
            assert np.array_equal(got[:, j0 : j0 + side], np.rot90(inner, 1))
            # border strips unchanged
            assert np.array_equal(got[:, :j0], img[:, :j0])
            assert np.array_equal(got[:, j0 + side :], img[:, j0 + side :])
            return
    pytest.fail("no quarter-turn seed found")


def test_mr_is_pm_then_rt_composition():
    frags = _frag_set(n_views=4, seed=3)
    seed = 11
    mr = perturb_fragments(frags, PerturbationSpec(kind="MR", shift_px=12, seed=seed))
    # reproduce manually with the same draw order (shift draw then turn draw
    # per fragment)
    rng = np.random.default_rng(np.uint64(seed))
    dirs = ((1, 0), (-1, 0), (0, 1), (0, -1))
    expect = []
    for img in frags.images():
        di, dj = dirs[int(rng.integers(4))]
        moved = np.roll(img, (di * 12, dj * 12), axis=(0, 1))
        if di > 0:
            moved[:12] = 0
        if di < 0:
            moved[-12:] = 0
        if dj > 0:
            moved[:, :12] = 0
        if dj < 0:
            moved[:, -12:] = 0
        expect.append(np.rot90(moved, int(rng.integers(4))))
    assert np.allclose(mr.images(), np.stack(expect))


def test_perturb_deterministic_and_shift_bound():
    frags = _frag_set()
    spec = PerturbationSpec(kind="MR", shift_px=5, seed=9)
    a = perturb_fragments(frags, spec)
    b = perturb_fragments(frags, spec)
    assert np.array_equal(a.images(), b.images())
    with pytest.raises(AugmentError):
        perturb_fragments(frags, PerturbationSpec(kind="PM", shift_px=64, seed=0))


def test_noise_sigma_zero_identity():
    frags = _frag_set(blob=False)
    out = add_noise(frags, 0.0, seed=5)
    assert np.array_equal(out.images(), frags.images())


def test_noise_sample_std_matches_sigma():
    frags = _frag_set(n_views=4, blob=False)
    out = add_noise(frags, 0.2, seed=5)
    for before, after in zip(frags.images(), out.images()):
        s = np.std(after - before)
        assert abs(s - 0.2) <= 0.05 * 0.2


def test_noise_two_seeds_differ_same_statistics():
    frags = _frag_set(n_views=2, blob=False)
    a = add_noise(frags, 0.1, seed=1)
    b = add_noise(frags, 0.1, seed=2)
    assert not np.array_equal(a.images(), b.images())
    sa = np.std(a.images() - frags.images())
    sb = np.std(b.images() - frags.images())
    assert abs(sa - sb) < 0.01


def test_noise_scales_exactly_with_sigma_for_fixed_seed():
    frags = _frag_set(n_views=2, blob=False)
    n1 = add_noise(frags, 0.05, seed=3).images() - frags.images()
    n2 = add_noise(frags, 0.10, seed=3).images() - frags.images()
    assert np.allclose(n2, 2.0 * n1)


def test_noise_commutes_with_fragment_ordering():
    frags = _frag_set(n_views=3, blob=False)
    order = (2, 0, 1)
    permute_then_noise = add_noise(
        FragmentSet(fragments=[frags.fragments[i] for i in order]), 0.1, seed=4
    )
    noise_then_permute = add_noise(frags, 0.1, seed=4)
    expected = np.stack([noise_then_permute.images()[i] for i in order])
    assert np.array_equal(permute_then_noise.images(), expected)


def test_subsample_keep_all_identity():
    frags = _frag_set()
    out = subsample_fragments(frags, 1.0, seed=0)
    assert [f.view_id for f in out.fragments] == [f.view_id for f in frags.fragments]


def test_subsample_counts():
    frags = _frag_set(n_views=50, n=64)
    assert len(subsample_fragments(frags, 0.5, seed=1)) == 25
    assert len(subsample_fragments(frags, 0.02, seed=1)) == 1


def test_subsample_preserves_order_and_is_deterministic():
    frags = _frag_set(n_views=10)
    a = subsample_fragments(frags, 0.4, seed=2)
    b = subsample_fragments(frags, 0.4, seed=2)
    ids = [f.view_id for f in a.fragments]
    assert ids == sorted(ids)
    assert ids == [f.view_id for f in b.fragments]


def test_subsample_empty_rejected():
    frags = _frag_set(n_views=4)
    with pytest.raises(AugmentError):
        subsample_fragments(frags, 0.05, seed=0)  # rounds to zero


def test_perturbation_spec_validation():
    with pytest.raises(AugmentError):
        PerturbationSpec(kind="Diagonal")
    with pytest.raises(AugmentError):
        PerturbationSpec(kind="PM", shift_px=-1)


def test_rt_fixed_rotation_deg():
    frags = _frag_set(n_views=3, blob=False)
    spec = PerturbationSpec(kind="RT", rotation_deg=180, seed=0)
    out = perturb_fragments(frags, spec)
    assert np.array_equal(out.images(), np.stack([np.rot90(i, 2) for i in frags.images()]))
    zero = perturb_fragments(frags, PerturbationSpec(kind="RT", rotation_deg=0, seed=0))
    assert np.array_equal(zero.images(), frags.images())
    with pytest.raises(AugmentError):
        PerturbationSpec(kind="RT", rotation_deg=45)
