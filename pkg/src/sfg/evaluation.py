"""RMSE benchmarking and report emission."""

import json
import os
from dataclasses import asdict, dataclass, field

import cv2
import numpy as np

from .data import bicubic_resize
from .errors import DataError


def rmse(pred, gt, mask=None):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DataError(f"prediction {pred.shape} and gt {gt.shape} differ")
    if mask is None:
        mask = np.ones(gt.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise DataError("RMSE over an empty mask")
    diff = (pred - gt)[mask]
    return float(np.sqrt(np.mean(diff * diff)))


def depth_rmse(pred, gt, units="cm"):
    """RMSE of normalized ``pred`` against DepthMap ``gt``, in raw units when ``units != 'norm'``.

    Returns (value, units actually used).
    """
    if units == "norm" or gt.units == "norm":
        return rmse(pred, gt.values, gt.valid_mask), "norm"
    span = gt.max_raw - gt.min_raw
    return rmse(gt.min_raw + pred * span, gt.denormalized(), gt.valid_mask), gt.units


@dataclass
class EvalReport:
    dataset: str
    scale: str
    units: str
    model: str
    ablation: str
    per_sample: list = field(default_factory=list)  # [{"name", "rmse"}]
    boundary_crop: int = 0
    invalid_pixels: str = "excluded"

    @property
    def mean_rmse(self):
        if not self.per_sample:
            return float("nan")
        return float(np.mean([s["rmse"] for s in self.per_sample]))

    def to_dict(self):
        d = asdict(self)
        d["mean_rmse"] = self.mean_rmse
        d["n_samples"] = len(self.per_sample)
        return d


def evaluate(model, dataset, scale, units="cm", model_id="", dataset_id="", dump_dir=None):
    """Per-sample RMSE of the refined prediction; optional raster dumps."""
    from .model import predict

    if len(dataset) == 0:
        raise DataError("empty evaluation set")
    report = EvalReport(dataset_id, str(scale), units, model_id, model.cfg.ablation_tag())
    used = set()
    for pair in dataset:
        out = predict(model, pair)
        pred = out.refine[0, 0].double().numpy()
        if pred.shape != pair.gt_depth.shape:
            raise DataError(f"{pair.name}: prediction {pred.shape} vs gt {pair.gt_depth.shape}")
        value, u = depth_rmse(pred, pair.gt_depth, units)
        used.add(u)
        report.per_sample.append({"name": pair.name, "rmse": value})
        if dump_dir:
            dump_rasters(dump_dir, pair, out.coarse[0, 0].double().numpy(), pred)
    report.units = used.pop() if len(used) == 1 else "mixed"
    return report


def evaluate_baseline(dataset, scale, units="cm", method="bicubic", dataset_id=""):
    report = EvalReport(dataset_id, str(scale), units, method, "baseline")
    used = set()
    for pair in dataset:
        H, W = pair.gt_depth.shape
        if method == "bicubic":
            pred = bicubic_resize(pair.lr_depth, H, W).values
        elif method == "bilinear":
            pred = cv2.resize(pair.lr_depth.values, (W, H), interpolation=cv2.INTER_LINEAR)
        else:
            raise ValueError(f"unknown baseline {method!r}")
        value, u = depth_rmse(pred, pair.gt_depth, units)
        used.add(u)
        report.per_sample.append({"name": pair.name, "rmse": value})
    report.units = used.pop() if len(used) == 1 else "mixed"
    return report


def to_u8(a):
    return np.rint(np.clip(a, 0, 1) * 255).astype(np.uint8)


def dump_rasters(out_dir, pair, coarse, refine):
    """Side-by-side input | coarse | refined | gt strip for visual inspection."""
    os.makedirs(out_dir, exist_ok=True)
    H, W = pair.gt_depth.shape
    lr = cv2.resize(pair.lr_depth.values, (W, H), interpolation=cv2.INTER_NEAREST)
    strip = np.concatenate([lr, coarse, refine, pair.gt_depth.values], axis=1)
    cv2.imwrite(os.path.join(out_dir, f"{pair.name}_strip.png"), to_u8(strip))


def error_heatmap(pred, gt, mask=None):
    """8-bit |pred - gt| scaled so the largest error maps to 255."""
    err = np.abs(np.asarray(pred, np.float64) - np.asarray(gt, np.float64))
    if mask is not None:
        err = np.where(mask, err, 0.0)
    peak = err.max()
    return to_u8(err / peak) if peak > 0 else np.zeros(err.shape, np.uint8)


def format_table(report):
    lines = [f"dataset={report.dataset} scale={report.scale} model={report.model} "
             f"ablation={report.ablation} units={report.units}",
             f"{'sample':<24}{'RMSE':>12}"]
    for s in report.per_sample:
        lines.append(f"{s['name']:<24}{s['rmse']:>12.4f}")
    lines.append(f"{'mean':<24}{report.mean_rmse:>12.4f}")
    return "\n".join(lines) + "\n"


def emit_report(report, out, heatmaps=None):
    """Write ``report.json`` and ``report.txt``; ``heatmaps`` maps sample name -> (pred, gt, mask)."""
    os.makedirs(out, exist_ok=True)
    paths = [os.path.join(out, "report.json"), os.path.join(out, "report.txt")]
    with open(paths[0], "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    with open(paths[1], "w") as f:
        f.write(format_table(report))
    for name, (pred, gt, mask) in (heatmaps or {}).items():
        p = os.path.join(out, f"{name}_error.png")
        cv2.imwrite(p, error_heatmap(pred, gt, mask))
        paths.append(p)
    return paths
