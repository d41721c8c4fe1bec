import numpy as np
import pytest
from scipy import ndimage

import spac.derain as derain_mod
from conftest import column_texture_frame, static_rain_scene, textured_frame
from spac.alignment import MatchTensorT0, MatchTensorT1, RainMask
from spac.core import Frame, InvalidInputError, SpacConfig
from spac.derain import (
    build_features,
    build_psi,
    derain_frame,
    derain_video,
    mask_blend_compensator,
    phase_correlation_shift,
    sp_average,
    sp_f1,
    sp_rpca,
    translate,
    unvectorize,
    vectorize,
    window_indices,
    zero_compensator,
)
from spac.evaluation import psnr
from spac.superpixel import SpRegion
from spac.synth import RainParams, synth_translating_sequence

SMALL = SpacConfig(sp_count=20)


def t1_of(slices):
    slices = np.asarray(slices, dtype=float)
    k = slices.shape[0]
    sources = np.array([(0, 0, 1)] * k)
    return MatchTensorT1(slices, sources, np.zeros(k))


def blob_region(n=10, seed=0):
    mask = np.zeros((n, n), dtype=bool)
    mask[2:8, 1:9] = True
    mask[0, 4] = True
    return SpRegion(0, 5, 5, mask, n)


def rain_mask(m):
    z = np.zeros_like(m)
    return RainMask(m, m, z, m.astype(int))


@pytest.fixture(scope="module")
def rain_scene():
    return static_rain_scene(120, 160, 7, seed=0, rain_seed=1)


# --- restoration back-ends ------------------------------------------------

def test_average_examples():
    s = np.random.default_rng(0).random((5, 5))
    assert np.array_equal(sp_average(t1_of([s] * 10)), s)
    assert np.array_equal(sp_average(t1_of([s])), s)
    stack = np.full((10, 1, 1), 0.4)
    stack[:2] = 0.9
    assert sp_average(t1_of(stack))[0, 0] == pytest.approx(0.5, abs=1e-15)


def test_f1_examples():
    rng = np.random.default_rng(1)
    target, avg = rng.random((4, 4)), rng.random((4, 4))
    none = np.zeros((4, 4), dtype=bool)
    assert np.array_equal(sp_f1(target, avg, rain_mask(none)), target)
    assert np.array_equal(sp_f1(target, avg, rain_mask(~none)), avg)
    one = none.copy()
    one[2, 1] = True
    out = sp_f1(target, avg, rain_mask(one))
    assert out[2, 1] == avg[2, 1]
    assert np.array_equal(out[~one], target[~one])


def test_features():
    rng = np.random.default_rng(2)
    region = blob_region()
    n = region.height
    t0_slices = rng.random((5, n, n))
    t0 = MatchTensorT0(t0_slices, np.zeros((5, 2), dtype=int), np.zeros(5))
    t1 = t1_of(rng.random((10, n, n)))
    m_rain = region.mask & (rng.random((n, n)) < 0.3)
    feats = build_features(region, t0, t1, rain_mask(m_rain))
    assert feats.f2.shape == (4, n, n)
    assert np.array_equal(feats.f2, np.delete(t0_slices, 2, axis=0))
    assert np.array_equal(feats.f1[~m_rain], t0.target[~m_rain])
    assert np.array_equal(feats.f1[m_rain], feats.x_avg[m_rain])
    for hat in (feats.f1_hat, feats.f2_hat, feats.f3_hat):
        assert np.all(hat[..., ~region.mask] == 0)
    # static rain-free content: target equals the average, so f1_hat vanishes
    same = np.stack([t0.target] * 10)
    feats = build_features(region, t0, t1_of(same), rain_mask(np.zeros((n, n), dtype=bool)))
    assert np.all(feats.f1_hat == 0)


def test_psi_layout():
    mask = np.zeros((30, 30), dtype=bool)
    mask.flat[:700] = True
    region = SpRegion(0, 0, 0, mask, 30)
    rng = np.random.default_rng(3)
    target = rng.random((30, 30))
    t1 = t1_of(rng.random((10, 30, 30)))
    psi = build_psi(region, target, t1)
    assert psi.shape == (700, 10)
    assert np.array_equal(psi[:, 0], target[mask])
    assert np.array_equal(psi[:, 9], t1.slices[8][mask])
    static = build_psi(region, target, t1_of([target] * 10))
    assert np.linalg.matrix_rank(static) == 1
    patch = rng.random((30, 30))
    back = unvectorize(region, vectorize(region, patch), np.zeros((30, 30)))
    assert np.array_equal(back[mask], patch[mask]) and np.all(back[~mask] == 0)


def test_rpca_static_patch_reproduced():
    region = blob_region()
    target = np.random.default_rng(4).uniform(0.2, 0.8, (10, 10))
    out, res = sp_rpca(region, target, t1_of([target] * 10))
    assert res.converged
    assert np.abs(out - target).max() <= 1e-4


def test_rpca_removes_streak_on_target_only():
    region = blob_region()
    clean = np.random.default_rng(5).uniform(0.3, 0.6, (10, 10))
    rainy = clean.copy()
    rainy[:, 4] += 0.3
    out, _ = sp_rpca(region, rainy, t1_of([clean] * 10))
    streak = region.mask.copy()
    streak[:, [c for c in range(10) if c != 4]] = False
    assert np.abs(out[streak] - clean[streak]).max() <= 0.02
    outside = ~region.mask
    assert np.array_equal(out[outside], rainy[outside])


def test_rpca_default_lambda(monkeypatch):
    seen = {}
    real = derain_mod.rpca_alm

    def fake(psi, lam, tol, max_iter):
        seen["lam"] = lam
        return real(psi, lam, tol=tol, max_iter=max_iter)

    mask = np.ones((30, 30), dtype=bool)
    region = SpRegion(0, 0, 0, mask, 30)
    target = np.full((30, 30), 0.5)
    monkeypatch.setattr(derain_mod, "rpca_alm", lambda psi, lam, tol, max_iter: fake(psi, lam, tol, max_iter))
    sp_rpca(region, target, t1_of([target] * 10))
    assert seen["lam"] == pytest.approx(1 / 30)
    assert SpacConfig().rpca_lambda(900) == pytest.approx(1 / 30)


# --- frame and video ------------------------------------------------------

def column_video(n, h=60, w=80, seed=0):
    return [column_texture_frame(h, w, seed)] * n


def test_static_clean_frame_unchanged_with_avg():
    frames = column_video(5)
    out, diag = derain_frame(frames, SpacConfig(sp_count=12))
    assert np.array_equal(out.y, frames[2].y)
    assert diag.regions > 0 and diag.fallback_regions == 0 and diag.rain_pixels == 0


def test_chroma_passes_through(rain_scene):
    window = rain_scene.rainy[:5]
    for method in ("avg", "f1", "rpca"):
        out, _ = derain_frame(window, SMALL.replace(method=method))
        assert out.cb is window[2].cb and out.cr is window[2].cr
        assert np.array_equal(out.cb, window[2].cb)


def test_every_pixel_written_once():
    frame = Frame.from_luma(np.full((40, 50), 0.5))

    def plus(feats, region):
        return np.where(region.mask, 0.01, 0.0)

    out, diag = derain_frame([frame] * 5, SpacConfig(sp_count=9), compensator=plus)
    assert np.all(out.y == 0.51)


def test_compensator_output_is_masked_and_checked(rain_scene):
    window = rain_scene.rainy[:5]
    leaky = lambda feats, region: np.full(feats.x_avg.shape, 0.0) + np.where(region.mask, 0.0, 5.0)  # noqa: E731
    out_leak, _ = derain_frame(window, SMALL, compensator=leaky)
    out_zero, _ = derain_frame(window, SMALL, compensator=zero_compensator)
    assert np.array_equal(out_leak.y, out_zero.y)
    with pytest.raises(InvalidInputError):
        derain_frame(window, SMALL, compensator=lambda f, r: np.full(f.x_avg.shape, np.nan))


def test_window_length_checked(rain_scene):
    with pytest.raises(InvalidInputError):
        derain_frame(rain_scene.rainy[:3], SMALL)


def test_method_consistency(rain_scene):
    window = rain_scene.rainy[1:6]
    avg, _ = derain_frame(window, SMALL)
    zero, _ = derain_frame(window, SMALL, compensator=zero_compensator)
    assert np.array_equal(avg.y, zero.y)
    f1, _ = derain_frame(window, SMALL.replace(method="f1"))
    blend, _ = derain_frame(window, SMALL, compensator=mask_blend_compensator)
    assert np.abs(f1.y - blend.y).max() <= 1e-12
    assert np.array_equal(f1.to_rgb8(), blend.to_rgb8())


def test_window_indices_replicate_ends():
    assert window_indices(0, 10, 5) == [0, 0, 0, 1, 2]
    assert window_indices(9, 10, 5) == [7, 8, 9, 9, 9]
    assert window_indices(0, 1, 5) == [0] * 5


def test_single_frame_video_is_identity():
    frames = [column_texture_frame(48, 64, seed=4)]
    out, _ = derain_video(frames, SpacConfig(sp_count=6))
    assert np.array_equal(out[0].y, frames[0].y)


def test_ten_frame_static_video_unchanged():
    frames = column_video(10, seed=2)
    out, diags = derain_video(frames, SpacConfig(sp_count=12))
    assert len(out) == 10 and len(diags) == 10
    for a, b in zip(out, frames):
        assert np.array_equal(a.y, b.y)


def test_history_slots_hold_derained_frames(monkeypatch, rain_scene):
    seen = []
    real = derain_mod.derain_frame

    def spy(window, cfg, *args, **kw):
        seen.append(list(window))
        return real(window, cfg, *args, **kw)

    monkeypatch.setattr(derain_mod, "derain_frame", spy)
    frames = rain_scene.rainy[:5]
    out, _ = derain_video(frames, SMALL)
    w3 = seen[3]
    assert w3[0] is out[1] and w3[1] is out[2]
    assert w3[2] is frames[3] and w3[3] is frames[4] and w3[4] is frames[4]


def test_threads_do_not_change_output(rain_scene):
    for method in ("avg", "f1"):
        cfg = SMALL.replace(method=method)
        a, _ = derain_video(rain_scene.rainy[:4], cfg, threads=1)
        b, _ = derain_video(rain_scene.rainy[:4], cfg, threads=3)
        for x, y in zip(a, b):
            assert np.array_equal(x.y, y.y)


def test_derain_improves_psnr(rain_scene):
    out, diags = derain_video(rain_scene.rainy, SMALL)
    interior = range(2, 5)
    gain = np.mean([psnr(out[i], rain_scene.clean[i]) - psnr(rain_scene.rainy[i], rain_scene.clean[i]) for i in interior])
    assert gain >= 3.0
    assert all(d.rain_pixels > 0 for d in diags[2:5])


@pytest.mark.parametrize("method", ["avg", "f1", "rpca"])
def test_modifications_concentrate_on_rain(rain_scene, method):
    out, _ = derain_video(rain_scene.rainy, SMALL.replace(method=method))
    inside = total = 0
    for i in range(2, 5):
        changed = np.abs(out[i].y - rain_scene.rainy[i].y) > SMALL.eps_rain
        near_rain = ndimage.binary_dilation(rain_scene.masks[i])
        inside += (changed & near_rain).sum()
        total += changed.sum()
    assert total > 0
    assert inside / total >= 0.7


def second_pass_drop(frames, clean, cfg):
    once, _ = derain_video(frames, cfg)
    twice, _ = derain_video(once, cfg)
    return [psnr(a, c) - psnr(b, c) for a, b, c in zip(once, twice, clean)]


def test_second_pass_is_stable_on_exactly_matchable_content():
    base = column_texture_frame(128, 168, seed=1)
    scene = synth_translating_sequence(base, 7, (0, 0), (160, 120), rain=RainParams.for_coverage(0.02, seed=3))
    drops = second_pass_drop(scene.rainy, scene.clean, SMALL)
    assert max(drops) <= 0.5


def test_second_pass_is_stable_with_f1(rain_scene):
    drops = second_pass_drop(rain_scene.rainy, rain_scene.clean, SMALL.replace(method="f1"))
    assert max(drops) <= 0.5


# --- pre-alignment --------------------------------------------------------

def test_phase_correlation_recovers_shift():
    ref = textured_frame(96, 128, seed=6).y
    moved = np.roll(ref, (-3, 5), axis=(0, 1))  # moved[y, x] = ref[y + 3, x - 5]
    assert phase_correlation_shift(moved, ref) == (-5, 3)
    back, valid = translate(ref, -5, 3)
    assert np.array_equal(back[valid], moved[valid])
    assert not valid[-3:].any() and not valid[:, :5].any()


def test_prealign_on_translating_camera():
    base = textured_frame(200, 240, seed=8)
    rain = RainParams.for_coverage(0.02, seed=2)
    scene = synth_translating_sequence(base, 5, (20, 0), (120, 96), rain=rain)
    cfg = SpacConfig(sp_count=12, r_s=4, prealign=True)
    out, diag = derain_frame(scene.rainy, cfg)
    assert sorted(s[1] for s in diag.prealign_shifts) == [-40, -20, 20, 40]
    assert psnr(out, scene.clean[2]) > psnr(scene.rainy[2], scene.clean[2])
