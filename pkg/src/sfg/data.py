"""RGB-D pair loading, degradation and patch sampling.

Depth rasters are stored as 16-bit PNGs holding normalized values scaled to
[0, 65535]; a stored zero marks a hole. The raw range used for
denormalization lives in a per-split ``meta.json``.
"""

import json
import os
from dataclasses import dataclass, field

import cv2
import numpy as np

from .errors import ConfigError, DataError

QMAX = 65535
DEGRADE_MODES = ("downsample-only", "noisy", "holes")


@dataclass
class DepthMap:
    values: np.ndarray
    valid_mask: np.ndarray = None
    min_raw: float = 0.0
    max_raw: float = 1.0
    units: str = "norm"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"depth must be 2-D, got shape {self.values.shape}")
        if self.valid_mask is None:
            self.valid_mask = np.ones(self.values.shape, dtype=bool)
        self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
        if self.valid_mask.shape != self.values.shape:
            raise DataError("valid_mask shape differs from values")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def denormalized(self):
        return self.min_raw + self.values * (self.max_raw - self.min_raw)

    def with_values(self, values, valid_mask=None):
        return DepthMap(values, self.valid_mask if valid_mask is None else valid_mask,
                        self.min_raw, self.max_raw, self.units)


@dataclass
class RGBImage:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[2] != 3:
            raise DataError(f"rgb must be HxWx3, got shape {self.values.shape}")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


@dataclass
class SamplePair:
    lr_depth: DepthMap
    rgb: RGBImage
    gt_depth: DepthMap
    scale: float = None
    name: str = ""

    def __post_init__(self):
        if self.rgb.values.shape[:2] != self.gt_depth.shape:
            raise DataError(
                f"rgb {self.rgb.values.shape[:2]} and gt {self.gt_depth.shape} differ in size")
        if self.scale is None:
            self.scale = self.gt_depth.height / self.lr_depth.height


@dataclass
class DegradationConfig:
    mode: str = "downsample-only"
    scale: float = 4.0
    noise_std: float = 0.07
    blur_kernel_size: int = 5
    hole_rate: float = 0.0
    downsample_filter: str = "bicubic"

    def validate(self):
        if self.mode not in DEGRADE_MODES:
            raise ConfigError(f"unknown degradation mode {self.mode!r}")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if self.blur_kernel_size < 1 or self.blur_kernel_size % 2 == 0:
            raise ConfigError("blur_kernel_size must be an odd integer >= 1")
        if not 0.0 <= self.hole_rate <= 1.0:
            raise ConfigError("hole_rate must lie in [0, 1]")
        if self.scale <= 0:
            raise ConfigError("scale must be positive")
        if self.downsample_filter != "bicubic":
            raise ConfigError("only bicubic downsampling is supported")


# ---------------------------------------------------------------- resampling

def cubic_weight(x, a=-0.5):
    """Keys cubic convolution kernel; a=-0.5 is Catmull-Rom."""
    x = np.abs(x)
    return np.where(
        x <= 1, (a + 2) * x**3 - (a + 3) * x**2 + 1,
        np.where(x < 2, a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a, 0.0))


def bicubic_matrix(n_in, n_out):
    """(n_out, n_in) matrix of bicubic weights, half-pixel centres, clamped edges."""
    out = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(int)
    for k in range(-1, 3):
        idx = base + k
        w = cubic_weight(src - idx)
        np.add.at(out, (np.arange(n_out), np.clip(idx, 0, n_in - 1)), w)
    return out


def bicubic_resize_array(a, target_h, target_w):
    if target_h <= 0 or target_w <= 0:
        raise ValueError(f"target size must be positive, got {target_h}x{target_w}")
    a = np.asarray(a, dtype=np.float64)
    if a.shape[:2] == (target_h, target_w):
        return a.copy()
    wh = bicubic_matrix(a.shape[0], target_h)
    ww = bicubic_matrix(a.shape[1], target_w)
    if a.ndim == 2:
        return wh @ a @ ww.T
    return np.einsum("ij,jkc,lk->ilc", wh, a, ww)


def bicubic_resize(d, target_h, target_w):
    """Bicubic (Catmull-Rom) resize of a depth map; the valid mask is resized by nearest."""
    values = bicubic_resize_array(d.values, target_h, target_w)
    rows = np.minimum((np.arange(target_h) + 0.5) * d.height / target_h, d.height - 1).astype(int)
    cols = np.minimum((np.arange(target_w) + 0.5) * d.width / target_w, d.width - 1).astype(int)
    mask = d.valid_mask[np.ix_(rows, cols)]
    return d.with_values(values, mask)


def lr_size(h, w, scale):
    return max(1, int(round(h / scale))), max(1, int(round(w / scale)))


# ---------------------------------------------------------------- degradation

def edge_region(values, percentile=80.0):
    gx = cv2.Sobel(values, cv2.CV_64F, 1, 0, ksize=3)
    gy = cv2.Sobel(values, cv2.CV_64F, 0, 1, ksize=3)
    mag = np.hypot(gx, gy)
    # floor ignores round-off gradients in flat regions
    return mag > max(np.percentile(mag, percentile), 1e-6 * mag.max(), 1e-12)


def degrade(gt, cfg, seed):
    """Blur, bicubic downsample, add noise, clamp, then punch edge holes.

    ``downsample-only`` skips blur and noise; blur and noise belong to
    ``noisy`` mode and edge holes to ``holes`` mode. The output is fully
    determined by ``seed``.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    values = gt.values
    if cfg.mode == "noisy" and cfg.blur_kernel_size > 1:
        k = cfg.blur_kernel_size
        values = cv2.GaussianBlur(values, (k, k), 0, borderType=cv2.BORDER_REFLECT_101)
    h0, w0 = lr_size(gt.height, gt.width, cfg.scale)
    clean = bicubic_resize_array(values, h0, w0)
    out = clean
    if cfg.mode == "noisy" and cfg.noise_std > 0:
        out = out + rng.normal(0.0, cfg.noise_std, size=out.shape)
    out = np.clip(out, 0.0, 1.0)
    lr = bicubic_resize(gt, h0, w0)
    mask = lr.valid_mask.copy()
    if cfg.mode == "holes" and cfg.hole_rate > 0:
        candidates = edge_region(clean)
        drop = candidates & (rng.random(out.shape) < cfg.hole_rate)
        out = np.where(drop, 0.0, out)
        mask &= ~drop
    return gt.with_values(out, mask)


# ---------------------------------------------------------------- cropping

def crop_patch(pair, patch, seed):
    """Random aligned crop: ``patch`` x ``patch`` in HR, matching extent in LR."""
    H, W = pair.gt_depth.shape
    if patch > min(H, W):
        raise DataError(f"patch {patch} larger than image {H}x{W}")
    s = pair.scale
    h0, w0 = pair.lr_depth.shape
    lp = max(1, int(round(patch / s)))
    rng = np.random.default_rng(seed)
    ly = int(rng.integers(0, h0 - lp + 1))
    lx = int(rng.integers(0, w0 - lp + 1))
    y = min(int(round(ly * s)), H - patch)
    x = min(int(round(lx * s)), W - patch)
    lr = pair.lr_depth
    gt = pair.gt_depth
    return SamplePair(
        lr.with_values(lr.values[ly:ly + lp, lx:lx + lp], lr.valid_mask[ly:ly + lp, lx:lx + lp]),
        RGBImage(pair.rgb.values[y:y + patch, x:x + patch]),
        gt.with_values(gt.values[y:y + patch, x:x + patch], gt.valid_mask[y:y + patch, x:x + patch]),
        scale=patch / lp,
        name=pair.name,
    )


# ---------------------------------------------------------------- file I/O

def save_depth(path, d):
    q = np.rint(np.clip(d.values, 0.0, 1.0) * QMAX).astype(np.uint16)
    # a stored zero means "hole", so valid pixels never quantize to it
    q[d.valid_mask & (q == 0)] = 1
    q[~d.valid_mask] = 0
    if not cv2.imwrite(str(path), q):
        raise DataError(f"could not write {path}")


def read_depth(path, meta=None):
    path = str(path)
    if not os.path.exists(path):
        raise DataError(f"missing file: {path}")
    meta = meta or {}
    if path.endswith(".npy"):
        raw = np.load(path).astype(np.float64)
        lo, hi = meta.get("min_raw", 0.0), meta.get("max_raw", max(float(raw.max()), 1e-12))
        values = np.where(raw > 0, (raw - lo) / (hi - lo), 0.0)
        valid = raw > 0
    else:
        raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
        if raw is None:
            raise DataError(f"unreadable raster: {path}")
        if raw.ndim == 3:
            raw = raw[..., 0]
        if raw.dtype == np.uint16:
            values = raw.astype(np.float64) / QMAX
        elif raw.dtype == np.uint8:
            values = raw.astype(np.float64) / 255.0
        elif np.issubdtype(raw.dtype, np.floating):
            values = raw.astype(np.float64)
        else:
            raise DataError(f"unsupported depth dtype {raw.dtype} in {path}")
        valid = values > 0
        lo, hi = meta.get("min_raw", 0.0), meta.get("max_raw", 1.0)
    values = np.clip(np.nan_to_num(values, nan=0.0), 0.0, 1.0)
    return DepthMap(values, valid, float(lo), float(hi), meta.get("units", "norm"))


def save_rgb(path, rgb):
    u8 = np.rint(np.clip(rgb.values, 0.0, 1.0) * 255).astype(np.uint8)
    if not cv2.imwrite(str(path), cv2.cvtColor(u8, cv2.COLOR_RGB2BGR)):
        raise DataError(f"could not write {path}")


def read_rgb(path):
    path = str(path)
    if not os.path.exists(path):
        raise DataError(f"missing file: {path}")
    bgr = cv2.imread(path, cv2.IMREAD_COLOR)
    if bgr is None:
        raise DataError(f"unreadable raster: {path}")
    return RGBImage(cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB).astype(np.float64) / 255.0)


def load_pair(depth_path, rgb_path, gt_path, meta=None, name=""):
    lr = read_depth(depth_path, meta)
    rgb = read_rgb(rgb_path)
    gt = read_depth(gt_path, meta)
    return SamplePair(lr, rgb, gt, name=name)


# ---------------------------------------------------------------- datasets

@dataclass
class Dataset:
    """In-memory list of pairs; ``root/{lr,rgb,gt}/<id>.png`` plus ``root/meta.json`` on disk."""

    pairs: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    def __iter__(self):
        return iter(self.pairs)

    def split(self, frac, seed=0):
        """Hold out ``frac`` of the pairs (at least one) as a validation set."""
        idx = np.random.default_rng(seed).permutation(len(self.pairs))
        n_val = max(1, int(round(frac * len(self.pairs)))) if len(self.pairs) > 1 else 0
        val = [self.pairs[i] for i in sorted(idx[:n_val])]
        train = [self.pairs[i] for i in sorted(idx[n_val:])]
        return Dataset(train, dict(self.info)), Dataset(val, dict(self.info))


def save_dataset(root, dataset):
    for sub in ("lr", "rgb", "gt"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    samples = {}
    for i, pair in enumerate(dataset.pairs):
        name = pair.name or f"{i:05d}"
        save_depth(os.path.join(root, "lr", name + ".png"), pair.lr_depth)
        save_rgb(os.path.join(root, "rgb", name + ".png"), pair.rgb)
        save_depth(os.path.join(root, "gt", name + ".png"), pair.gt_depth)
        gt = pair.gt_depth
        samples[name] = {"min_raw": gt.min_raw, "max_raw": gt.max_raw, "units": gt.units}
    meta = dict(dataset.info)
    meta["samples"] = samples
    with open(os.path.join(root, "meta.json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)


def load_dataset(root, require_lr=True):
    if not os.path.isdir(os.path.join(root, "gt")):
        raise DataError(f"{root} has no gt/ directory")
    meta_path = os.path.join(root, "meta.json")
    meta = {}
    if os.path.exists(meta_path):
        with open(meta_path) as f:
            meta = json.load(f)
    per_sample = meta.pop("samples", {})
    names = sorted(os.path.splitext(n)[0] for n in os.listdir(os.path.join(root, "gt"))
                   if n.endswith(".png"))
    pairs = []
    for name in names:
        lr_path = os.path.join(root, "lr", name + ".png")
        if require_lr or os.path.exists(lr_path):
            pairs.append(load_pair(lr_path, os.path.join(root, "rgb", name + ".png"),
                                   os.path.join(root, "gt", name + ".png"),
                                   meta=per_sample.get(name), name=name))
        else:
            # GT stands in for the LR map until it is degraded
            gt = read_depth(os.path.join(root, "gt", name + ".png"), per_sample.get(name))
            pairs.append(SamplePair(gt, read_rgb(os.path.join(root, "rgb", name + ".png")), gt,
                                    name=name))
    if not pairs:
        raise DataError(f"no samples under {root}")
    return Dataset(pairs, meta)


def degrade_dataset(dataset, cfg, seed):
    """Replace every pair's LR depth by a fresh degradation of its GT."""
    out = []
    for i, pair in enumerate(dataset.pairs):
        lr = degrade(pair.gt_depth, cfg, seed + i)
        out.append(SamplePair(lr, pair.rgb, pair.gt_depth, name=pair.name))
    info = dict(dataset.info, degradation=cfg.mode, scale=cfg.scale)
    return Dataset(out, info)


# ---------------------------------------------------------------- synthetic scenes

def synthetic_scene(h, w, rng, n_shapes=6, texture=0.03):
    """Piecewise-planar depth with colour-coded objects sharing its edges."""
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    gx, gy = rng.uniform(-0.3, 0.3, 2)
    depth = 0.6 + gx * (xx - 0.5) + gy * (yy - 0.5)
    rgb = np.empty((h, w, 3))
    rgb[:] = rng.uniform(0.2, 0.8, 3)
    rgb += 0.1 * (yy[..., None] - 0.5)
    for _ in range(n_shapes):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(0.08, 0.3) * h, rng.uniform(0.08, 0.3) * w
        if rng.random() < 0.5:
            inside = ((np.arange(h)[:, None] - cy) / ry) ** 2 + ((np.arange(w)[None] - cx) / rx) ** 2 < 1
        else:
            inside = (np.abs(np.arange(h)[:, None] - cy) < ry) & (np.abs(np.arange(w)[None] - cx) < rx)
        plane = rng.uniform(0.1, 0.9) + rng.uniform(-0.2, 0.2) * (xx - cx / w)
        depth = np.where(inside, plane, depth)
        rgb[inside] = rng.uniform(0.0, 1.0, 3)
    rgb += texture * rng.standard_normal((h, w, 1))
    return np.clip(depth, 0.02, 1.0), np.clip(rgb, 0.0, 1.0)


def synthetic_dataset(n, size, cfg, seed, units="cm", depth_range=(50.0, 500.0)):
    """``n`` synthetic RGB-D pairs of ``size`` x ``size`` degraded by ``cfg``."""
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        depth, rgb = synthetic_scene(size, size, rng)
        gt = DepthMap(depth, None, depth_range[0], depth_range[1], units)
        lr = degrade(gt, cfg, seed * 100003 + i)
        pairs.append(SamplePair(lr, RGBImage(rgb), gt, name=f"{i:05d}"))
    return Dataset(pairs, {"degradation": cfg.mode, "scale": cfg.scale, "synthetic": True})
