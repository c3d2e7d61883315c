"""Fast invariant checks runnable from an installed package (``sfg selftest``)."""

import io
import math

import numpy as np
import torch

from .cfunet import gaussian, grid_sample, spatial_kernel, trilateral_weights
from .config import ModelConfig
from .data import DegradationConfig, DepthMap, bicubic_resize, degrade
from .evaluation import rmse
from .model import SFGNet, save_checkpoint, load_checkpoint
from .peanet import flow_enhance
from .train import dsr_loss, smooth_l1

TINY = ModelConfig(L=2, L_prime=4, K=2, T=2, widths=(8, 16), corr_width=16, decoder_max_width=16,
                   peanet_widths=(8, 8, 16))


def check_gaussian():
    assert math.isclose(gaussian(0.0, 1.0), 1 / math.sqrt(2 * math.pi), rel_tol=1e-12)
    xs = np.linspace(0, 5, 50)
    vals = [gaussian(x, 1.3) for x in xs]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def check_kernel_symmetry():
    g = torch.Generator().manual_seed(0)
    f = torch.rand(1, 4, 3, 3, generator=g, dtype=torch.float64)
    rgb = [torch.rand(1, 3, 3, 3, generator=g, dtype=torch.float64)]
    w = trilateral_weights(f, rgb, 1.0, 1.0, 1.0)[0]
    assert torch.allclose(w, w.T)
    a = spatial_kernel([(0, 0), (0, 1), (2, 2)], 1.5)
    assert torch.allclose(a, a.T) and bool((a > 0).all()) and bool((a <= gaussian(0.0, 1.5)).all())


def check_grid_sample_affine():
    g = torch.Generator().manual_seed(1)
    d = torch.rand(1, 1, 4, 4, generator=g, dtype=torch.float64)
    flow = 0.2 * torch.randn(1, 2, 8, 8, generator=g, dtype=torch.float64)
    lhs = grid_sample(2.5 * d - 0.3, flow)
    rhs = 2.5 * grid_sample(d, flow) - 0.3
    assert torch.allclose(lhs, rhs, atol=1e-12)


def check_smooth_l1():
    assert smooth_l1(0.0) == 0 and smooth_l1(1.0) == 0.5 == smooth_l1(-1.0) and smooth_l1(2.0) == 1.5
    h = 1e-6
    for u in (-1.0, 1.0):
        left = (smooth_l1(u - h) - smooth_l1(u - 2 * h)) / h
        right = (smooth_l1(u + 2 * h) - smooth_l1(u + h)) / h
        assert abs(left - right) < 1e-4


def check_loss_zero():
    gt = torch.rand(1, 1, 5, 5)
    assert dsr_loss(gt, gt, gt).item() == 0.0
    assert math.isclose(dsr_loss(gt + 1, gt, gt).item(), 0.5, rel_tol=1e-6)


def check_degrade_identity():
    d = DepthMap(np.random.default_rng(0).random((9, 7)))
    cfg = DegradationConfig(mode="noisy", scale=1, noise_std=0.0, blur_kernel_size=1)
    assert np.array_equal(degrade(d, cfg, 0).values, d.values)


def check_bicubic_constant():
    d = DepthMap(np.full((5, 6), 0.5))
    assert np.allclose(bicubic_resize(d, 11, 13).values, 0.5, atol=1e-12)


def check_rmse_offset():
    x = np.random.default_rng(2).random((6, 6))
    assert math.isclose(rmse(x + 0.25, x), 0.25, rel_tol=1e-9)


def check_flow_enhance_zero():
    g = torch.rand(1, 4, 6, 6)
    assert torch.equal(flow_enhance(g, torch.zeros(1, 2, 6, 6)), g)


def check_zero_init_identity():
    torch.manual_seed(0)
    model = SFGNet(TINY).eval()
    d = torch.rand(1, 1, 8, 8)
    rgb = torch.rand(1, 3, 32, 32)
    with torch.no_grad():
        out = model(d, rgb)
    bil = torch.nn.functional.interpolate(d, size=(32, 32), mode="bilinear", align_corners=False)
    assert torch.allclose(out.refine, bil, atol=1e-6)
    assert all(bool(torch.isfinite(f).all()) for f in out.flows)


def check_checkpoint_round_trip():
    torch.manual_seed(0)
    model = SFGNet(TINY).eval()
    buf = io.BytesIO()
    save_checkpoint(buf, model)
    buf.seek(0)
    loaded, _ = load_checkpoint(buf)
    loaded.eval()
    d, rgb = torch.rand(1, 1, 8, 8), torch.rand(1, 3, 32, 32)
    with torch.no_grad():
        assert torch.equal(model(d, rgb).refine, loaded(d, rgb).refine)


CHECKS = [
    check_gaussian, check_kernel_symmetry, check_grid_sample_affine, check_smooth_l1,
    check_loss_zero, check_degrade_identity, check_bicubic_constant, check_rmse_offset,
    check_flow_enhance_zero, check_zero_init_identity, check_checkpoint_round_trip,
]


def run(stream=None):
    failed = 0
    for check in CHECKS:
        name = check.__name__.removeprefix("check_")
        try:
            check()
            status = "PASS"
        except Exception as exc:  # report every failure, keep going
            status = f"FAIL ({type(exc).__name__}: {exc})"
            failed += 1
        print(f"{status[:4]} {name}{status[4:]}", file=stream)
    return failed == 0
