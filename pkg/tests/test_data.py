import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import bicubic_pixel
from sfg.data import (
    DegradationConfig, DepthMap, RGBImage, SamplePair, bicubic_resize, crop_patch, degrade,
    load_dataset, load_pair, read_depth, save_dataset, save_depth, save_rgb, synthetic_dataset,
)
from sfg.errors import ConfigError, DataError


def write_pair(tmp_path, lr, rgb, gt):
    save_depth(tmp_path / "lr.png", DepthMap(lr))
    save_rgb(tmp_path / "rgb.png", RGBImage(rgb))
    save_depth(tmp_path / "gt.png", DepthMap(gt, gt > 0))
    return tmp_path / "lr.png", tmp_path / "rgb.png", tmp_path / "gt.png"


def test_load_pair_rgbdd_sizes(tmp_path):
    rng = np.random.default_rng(0)
    paths = write_pair(tmp_path, rng.random((144, 192)), rng.random((384, 512, 3)),
                       rng.random((384, 512)) * 0.9 + 0.05)
    pair = load_pair(*paths)
    assert pair.gt_depth.shape == (384, 512)
    assert pair.scale == pytest.approx(8 / 3, abs=1e-3)
    assert 0 <= pair.rgb.values.min() and pair.rgb.values.max() <= 1


def test_depth_round_trip(tmp_path):
    d = np.random.default_rng(1).uniform(0.01, 1, (4, 4))
    save_depth(tmp_path / "d.png", DepthMap(d))
    back = read_depth(tmp_path / "d.png")
    assert np.max(np.abs(back.values - d)) <= 1 / 65535


def test_zeros_are_holes(tmp_path):
    gt = np.full((6, 6), 0.5)
    holes = [(0, 0), (2, 3), (5, 1)]
    for r, c in holes:
        gt[r, c] = 0
    paths = write_pair(tmp_path, np.full((3, 3), 0.5), np.zeros((6, 6, 3)), gt)
    pair = load_pair(*paths)
    expected = np.ones((6, 6), bool)
    for r, c in holes:
        expected[r, c] = False
    assert np.array_equal(pair.gt_depth.valid_mask, expected)


def test_valid_min_depth_is_not_a_hole(tmp_path):
    d = np.array([[0.0, 0.2], [0.4, 1.0]])
    save_depth(tmp_path / "d.png", DepthMap(d))
    assert read_depth(tmp_path / "d.png").valid_mask.all()


def test_load_errors(tmp_path):
    paths = write_pair(tmp_path, np.full((2, 2), 0.5), np.zeros((4, 5, 3)), np.full((4, 4), 0.5))
    with pytest.raises(DataError):
        load_pair(*paths)
    with pytest.raises(DataError):
        load_pair(tmp_path / "nope.png", *paths[1:])
    (tmp_path / "junk.png").write_bytes(b"not an image")
    with pytest.raises(DataError):
        read_depth(tmp_path / "junk.png")


def test_dataset_round_trip(tmp_path):
    ds = synthetic_dataset(3, 32, DegradationConfig(scale=4), seed=3)
    save_dataset(tmp_path, ds)
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert set(meta["samples"]) == {"00000", "00001", "00002"}
    back = load_dataset(tmp_path)
    assert len(back) == 3
    for a, b in zip(ds, back):
        assert np.max(np.abs(a.gt_depth.values - b.gt_depth.values)) <= 1 / 65535
        assert b.gt_depth.units == "cm" and b.gt_depth.max_raw == a.gt_depth.max_raw
        assert b.scale == 4


# ---------------------------------------------------------------- bicubic

def test_bicubic_constant():
    d = DepthMap(np.full((5, 7), 0.5))
    for size in [(3, 3), (10, 14), (17, 4)]:
        assert np.allclose(bicubic_resize(d, *size).values, 0.5, atol=1e-12)


def test_bicubic_matches_scalar_oracle():
    img = np.array([[0.1, 0.9], [0.4, 0.3]])
    out = bicubic_resize(DepthMap(img), 4, 4).values
    ref = np.array([[bicubic_pixel(img.tolist(), i, j, 4, 4) for j in range(4)] for i in range(4)])
    assert np.allclose(out, ref, atol=1e-12)


def test_bicubic_random_matches_oracle():
    img = np.random.default_rng(4).random((5, 6))
    out = bicubic_resize(DepthMap(img), 13, 9).values
    ref = np.array([[bicubic_pixel(img.tolist(), i, j, 13, 9) for j in range(9)] for i in range(13)])
    assert np.allclose(out, ref, atol=1e-12)


def test_bicubic_identity_size():
    img = np.random.default_rng(5).random((6, 8))
    assert np.allclose(bicubic_resize(DepthMap(img), 6, 8).values, img, atol=1e-6)


def test_bicubic_reproduces_ramps_away_from_border():
    yy, xx = np.mgrid[0:8, 0:8]
    img = 0.1 + 0.02 * yy + 0.05 * xx
    out = bicubic_resize(DepthMap(img), 32, 32).values
    oy, ox = np.mgrid[0:32, 0:32]
    expect = 0.1 + 0.02 * ((oy + 0.5) / 4 - 0.5) + 0.05 * ((ox + 0.5) / 4 - 0.5)
    inner = (slice(8, -8), slice(8, -8))
    assert np.allclose(out[inner], expect[inner], atol=1e-12)


def test_bicubic_rejects_bad_size():
    with pytest.raises(ValueError):
        bicubic_resize(DepthMap(np.zeros((2, 2))), 0, 3)


# ---------------------------------------------------------------- degradation

@pytest.mark.parametrize("mode", ["downsample-only", "noisy", "holes"])
def test_identity_degradation(mode):
    d = DepthMap(np.random.default_rng(6).random((12, 10)))
    cfg = DegradationConfig(mode=mode, scale=1, noise_std=0.0, blur_kernel_size=1, hole_rate=0.0)
    assert np.array_equal(degrade(d, cfg, seed=3).values, d.values)


def test_degrade_deterministic():
    d = DepthMap(np.random.default_rng(7).random((64, 64)))
    cfg = DegradationConfig(mode="noisy", scale=4)
    a, b = degrade(d, cfg, 11), degrade(d, cfg, 11)
    assert a.values.tobytes() == b.values.tobytes()
    assert not np.array_equal(a.values, degrade(d, cfg, 12).values)


def test_noise_std():
    d = DepthMap(np.full((400, 400), 0.5))
    cfg = DegradationConfig(mode="noisy", scale=1, noise_std=0.07)
    out = degrade(d, cfg, 0)
    assert out.values.size >= 10_000
    assert 0.065 <= np.std(out.values - 0.5) <= 0.075


def test_lr_size_and_clamp():
    d = DepthMap(np.random.default_rng(8).random((384, 512)))
    out = degrade(d, DegradationConfig(mode="noisy", scale=384 / 144), 0)
    assert out.shape == (144, 192)
    assert out.values.min() >= 0 and out.values.max() <= 1


def test_holes_on_edges_only():
    img = np.full((64, 64), 0.3)
    img[:, 32:] = 0.8
    d = DepthMap(img)
    out = degrade(d, DegradationConfig(mode="holes", scale=2, hole_rate=1.0), 0)
    holes = ~out.valid_mask
    assert holes.any()
    cols = np.nonzero(holes)[1]
    assert cols.min() >= 13 and cols.max() <= 18
    assert np.all(out.values[holes] == 0)


def test_invalid_config():
    d = DepthMap(np.zeros((4, 4)))
    for bad in [dict(noise_std=-1), dict(blur_kernel_size=4), dict(mode="foo"), dict(hole_rate=2)]:
        with pytest.raises(ConfigError):
            degrade(d, DegradationConfig(**bad), 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(8, 40), st.integers(8, 40), st.sampled_from([1, 2, 3, 4]), st.integers(0, 10**6))
def test_degrade_outputs_finite(h, w, s, seed):
    rng = np.random.default_rng(seed)
    gt = rng.random((h, w))
    gt[rng.random((h, w)) < 0.1] = 0
    d = DepthMap(gt, gt > 0)
    for mode in ("noisy", "holes"):
        out = degrade(d, DegradationConfig(mode=mode, scale=s, hole_rate=0.5), seed)
        assert np.isfinite(out.values).all()


# ---------------------------------------------------------------- cropping

def make_pair(H, W, scale):
    rng = np.random.default_rng(9)
    gt = DepthMap(rng.random((H, W)))
    lr = bicubic_resize(gt, round(H / scale), round(W / scale))
    return SamplePair(lr, RGBImage(rng.random((H, W, 3))), gt)


def test_crop_whole_image():
    pair = make_pair(32, 32, 4)
    out = crop_patch(pair, 32, 0)
    assert np.array_equal(out.gt_depth.values, pair.gt_depth.values)
    assert np.array_equal(out.lr_depth.values, pair.lr_depth.values)


def test_crop_scale_arithmetic():
    pair = make_pair(384, 512, 2)
    out = crop_patch(pair, 256, 1)
    assert out.gt_depth.shape == (256, 256) and out.rgb.values.shape == (256, 256, 3)
    assert out.lr_depth.shape == (128, 128)


def test_crop_alignment():
    pair = make_pair(64, 64, 4)
    out = crop_patch(pair, 32, 5)
    # LR block means sit under the matching HR crop
    ys = [i for i in range(0, 64 - 31, 4)]
    hits = [(y, x) for y in ys for x in ys
            if np.array_equal(pair.gt_depth.values[y:y + 32, x:x + 32], out.gt_depth.values)]
    assert len(hits) == 1
    y, x = hits[0]
    assert np.array_equal(pair.lr_depth.values[y // 4:y // 4 + 8, x // 4:x // 4 + 8], out.lr_depth.values)


def test_crop_deterministic():
    pair = make_pair(64, 64, 4)
    a, b = crop_patch(pair, 32, 42), crop_patch(pair, 32, 42)
    assert np.array_equal(a.gt_depth.values, b.gt_depth.values)


def test_crop_too_large():
    with pytest.raises(DataError):
        crop_patch(make_pair(16, 16, 2), 32, 0)
