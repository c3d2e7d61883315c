"""``sfg`` command line: synth, degrade, train, eval, infer, selftest."""

import argparse
import json
import logging
import os
import sys

import numpy as np
import torch

from . import data as sdata
from .config import resolve
from .errors import ConfigError, SFGError

log = logging.getLogger("sfg")


def _add_config_args(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. model.sigma_s=2.0")


def _overrides(args, mapping):
    out = {}
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    for attr, key in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[key] = str(value)
    return out


def build_parser():
    parser = argparse.ArgumentParser(prog="sfg", description="Structure flow-guided depth super-resolution")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic RGB-D dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--scale", type=float, default=4.0)
    p.add_argument("--mode", default="downsample-only", choices=sdata.DEGRADE_MODES)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("degrade", help="synthesize LR depth for every GT map in a split")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=sdata.DEGRADE_MODES)
    p.add_argument("--noise-std", type=float)
    p.add_argument("--blur", type=int)
    p.add_argument("--hole-rate", type=float)
    p.add_argument("--scale", type=float)
    p.add_argument("--seed", type=int, default=0)
    _add_config_args(p)

    p = sub.add_parser("train", help="train the two-stage model")
    p.add_argument("--data", required=True)
    p.add_argument("--val", help="validation split; default holds out train.val_frac of --data")
    p.add_argument("--out", required=True)
    p.add_argument("--no-peanet", action="store_true")
    p.add_argument("--no-trisa", action="store_true")
    p.add_argument("--no-crossattn", action="store_true")
    p.add_argument("--fpa-iters", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume")
    _add_config_args(p)

    p = sub.add_parser("eval", help="RMSE report for a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--scale", default="native", choices=["4", "8", "16", "native"])
    p.add_argument("--out", required=True)
    p.add_argument("--units", default="cm", choices=["cm", "norm"])
    p.add_argument("--heatmaps", action="store_true")
    p.add_argument("--dumps", action="store_true", help="write input/coarse/refined/gt strips")

    p = sub.add_parser("infer", help="super-resolve one LR depth map")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--lr", dest="lr_path", required=True)
    p.add_argument("--rgb", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-guidance", metavar="DIR")

    sub.add_parser("selftest", help="run the built-in invariant checks")
    return parser


def cmd_synth(args):
    cfg = sdata.DegradationConfig(mode=args.mode, scale=args.scale)
    ds = sdata.synthetic_dataset(args.n, args.size, cfg, args.seed)
    sdata.save_dataset(args.out, ds)
    print(f"wrote {len(ds)} pairs to {args.out}")


def cmd_degrade(args):
    cfg = resolve(args.config, _overrides(args, {
        "mode": "degrade.mode", "noise_std": "degrade.noise_std", "blur": "degrade.blur_kernel_size",
        "hole_rate": "degrade.hole_rate", "scale": "degrade.scale"}))
    cfg.paths.update({"in": args.inp, "out": args.out})
    cfg.write(args.out)
    ds = sdata.load_dataset(args.inp, require_lr=False)
    out = sdata.degrade_dataset(ds, cfg.degrade, args.seed)
    sdata.save_dataset(args.out, out)
    print(f"degraded {len(out)} pairs ({cfg.degrade.mode}, x{cfg.degrade.scale:g}) into {args.out}")


def cmd_train(args):
    from .model import SFGNet
    from .train import train

    over = _overrides(args, {"fpa_iters": "model.K", "steps": "train.steps", "lr": "train.lr",
                             "batch_size": "train.batch_size", "patch_size": "train.patch_size",
                             "seed": "train.seed"})
    for flag, key in (("no_peanet", "model.use_peanet"), ("no_trisa", "model.use_trisa"),
                      ("no_crossattn", "model.use_crossattn")):
        if getattr(args, flag):
            over[key] = "false"
    cfg = resolve(args.config, over)
    cfg.paths.update({"data": args.data, "out": args.out, "val": args.val or ""})
    cfg.write(args.out)
    ds = sdata.load_dataset(args.data)
    if args.val:
        val = sdata.load_dataset(args.val)
    else:
        ds, val = ds.split(cfg.train.val_frac, cfg.train.seed)
    torch.manual_seed(cfg.train.seed)
    model = SFGNet(cfg.model)
    state = train(ds, model, cfg.train, out_dir=args.out, val=val, resume=args.resume)
    print(json.dumps({"step": state.step, "best_val_rmse": state.best_val_rmse,
                      "ablation": cfg.model.ablation_tag(),
                      "checkpoint": os.path.join(args.out, "last.pt")}))


def cmd_eval(args):
    from .evaluation import emit_report, evaluate
    from .model import load_checkpoint, predict

    model, state = load_checkpoint(args.ckpt)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "eval_args.json"), "w") as f:
        json.dump(vars(args), f, indent=2, sort_keys=True)
    ds = sdata.load_dataset(args.data)
    if args.scale != "native":
        ds = sdata.degrade_dataset(ds, sdata.DegradationConfig(scale=float(args.scale)), seed=0)
    dump = os.path.join(args.out, "dumps") if args.dumps else None
    report = evaluate(model, ds, args.scale, args.units, model_id=os.path.basename(args.ckpt),
                      dataset_id=os.path.basename(os.path.normpath(args.data)), dump_dir=dump)
    heat = None
    if args.heatmaps:
        heat = {}
        for pair in ds:
            pred = predict(model, pair).refine[0, 0].double().numpy()
            heat[pair.name] = (pred, pair.gt_depth.values, pair.gt_depth.valid_mask)
    emit_report(report, args.out, heat)
    print(f"mean RMSE {report.mean_rmse:.4f} {report.units} over {len(report.per_sample)} samples")


def cmd_infer(args):
    from .model import load_checkpoint, predict

    model, _ = load_checkpoint(args.ckpt)
    rgb = sdata.read_rgb(args.rgb)
    # no GT at inference; a zero map only carries the target size
    pair = sdata.SamplePair(sdata.read_depth(args.lr_path), rgb,
                            sdata.DepthMap(np.zeros(rgb.values.shape[:2])))
    out = predict(model, pair)
    refine = out.refine[0, 0].double().numpy()
    sdata.save_depth(args.out, sdata.DepthMap(np.clip(refine, 0, 1)))
    if args.dump_guidance:
        os.makedirs(args.dump_guidance, exist_ok=True)
        for t, g in enumerate(out.guides, 1):
            arr = g[0].numpy()
            np.save(os.path.join(args.dump_guidance, f"guide_t{t}.npy"), arr)
            mean = np.abs(arr).mean(0)
            sdata.save_depth(os.path.join(args.dump_guidance, f"guide_t{t}.png"),
                             sdata.DepthMap(mean / max(mean.max(), 1e-12)))
    print(f"wrote {refine.shape[0]}x{refine.shape[1]} depth to {args.out}")


def cmd_selftest(args):
    from .selftest import run

    return 0 if run(sys.stdout) else 1


COMMANDS = {"synth": cmd_synth, "degrade": cmd_degrade, "train": cmd_train, "eval": cmd_eval,
            "infer": cmd_infer, "selftest": cmd_selftest}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.command](args) or 0
    except SFGError as exc:
        print(f"sfg: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
