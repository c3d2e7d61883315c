"""Joint training of both stages with the masked two-term smooth-L1 objective."""

import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import crop_patch
from .errors import DataError, DivergenceError
from .model import save_checkpoint

log = logging.getLogger(__name__)


def smooth_l1(u):
    """0.5 u^2 inside |u| <= 1, |u| - 0.5 outside; works on floats and tensors."""
    if torch.is_tensor(u):
        a = u.abs()
        return torch.where(a <= 1, 0.5 * u * u, a - 0.5)
    a = abs(u)
    return 0.5 * u * u if a <= 1 else a - 0.5


def dsr_loss(coarse, refine, gt, mask=None, w_coarse=1.0, w_refine=1.0):
    """Mean over valid pixels of the coarse and refined smooth-L1 terms.

    ``refine=None`` drops the second term (single-stage ablation).
    """
    if mask is None:
        mask = torch.ones_like(gt, dtype=torch.bool)
    mask = mask.bool()
    n = mask.sum()
    if n == 0:
        raise DataError("loss mask has no valid pixels")
    per_pixel = w_coarse * smooth_l1(coarse - gt)
    if refine is not None:
        per_pixel = per_pixel + w_refine * smooth_l1(refine - gt)
    return (per_pixel * mask).sum() / n


@dataclass
class TrainState:
    params: dict
    optimizer: dict
    step: int
    best_val_rmse: float = math.inf
    history: list = field(default_factory=list)


def make_batch(pairs, dtype=torch.float32):
    d_lr = torch.from_numpy(np.stack([p.lr_depth.values for p in pairs])[:, None]).to(dtype)
    rgb = torch.from_numpy(np.stack([p.rgb.values.transpose(2, 0, 1) for p in pairs])).to(dtype)
    gt = torch.from_numpy(np.stack([p.gt_depth.values for p in pairs])[:, None]).to(dtype)
    mask = torch.from_numpy(np.stack([p.gt_depth.valid_mask for p in pairs])[:, None])
    return d_lr, rgb, gt, mask


def sample_batch(dataset, cfg, step):
    """Batch for ``step``; depends only on (seed, step) so resumed runs see the same data."""
    rng = np.random.default_rng([cfg.seed, step])
    n = len(dataset)
    idx = rng.choice(n, size=cfg.batch_size, replace=n < cfg.batch_size)
    crops = []
    for i in idx:
        pair = dataset[int(i)]
        patch = min(cfg.patch_size, *pair.gt_depth.shape)
        crops.append(crop_patch(pair, patch, int(rng.integers(2**31))))
    return make_batch(crops)


def build_optimizer(model, cfg):
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2),
                           weight_decay=cfg.weight_decay)
    every = max(1, int(round(cfg.lr_decay_every * cfg.steps)))
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=every, gamma=cfg.lr_decay_factor)
    return opt, sched


def batch_loss(model, batch, cfg):
    d_lr, rgb, gt, mask = batch
    out = model(d_lr, rgb)
    refine = out.refine if model.peanet is not None else None
    return dsr_loss(out.coarse, refine, gt, mask, cfg.w_coarse, cfg.w_refine)


def validation_rmse(model, pairs):
    from .evaluation import rmse
    from .model import predict

    errs = [rmse(predict(model, p).refine[0, 0].double().numpy(), p.gt_depth.values,
                 p.gt_depth.valid_mask) for p in pairs]
    model.train()
    return float(np.mean(errs))


def train(dataset, model, cfg, out_dir=None, val=None, resume=None, max_steps=None):
    """Optimise ``model`` in place on ``dataset`` and return the final TrainState.

    ``resume`` is a checkpoint path; ``max_steps`` stops early without
    changing the learning-rate schedule, which is tied to ``cfg.steps``.
    """
    if len(dataset) == 0:
        raise DataError("empty training set")
    cfg.validate()
    opt, sched = build_optimizer(model, cfg)
    step = 0
    best = math.inf
    if resume is not None:
        state = torch.load(resume, map_location="cpu", weights_only=False)
        model.load_state_dict(state["params"])
        opt.load_state_dict(state["optimizer"])
        sched.load_state_dict(state["scheduler"])
        step = state["step"]
        best = state["extra"].get("best_val_rmse", math.inf)
    log_file = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        log_file = open(os.path.join(out_dir, "log.jsonl"), "a" if resume else "w")
    history = []
    stop = cfg.steps if max_steps is None else min(cfg.steps, max_steps)
    model.train()
    try:
        while step < stop:
            batch = sample_batch(dataset, cfg, step)
            lr = opt.param_groups[0]["lr"]
            loss = batch_loss(model, batch, cfg)
            if not torch.isfinite(loss):
                raise DivergenceError(f"loss became {loss.item()} at step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            step += 1
            record = {"step": step, "loss": loss.item(), "lr": lr}
            if val is not None and len(val) and (step % cfg.val_every == 0 or step == stop):
                record["rmse_val"] = validation_rmse(model, val)
                best = min(best, record["rmse_val"])
            history.append(record)
            if log_file and (step % cfg.log_every == 0 or "rmse_val" in record):
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
            if step % 100 == 0:
                log.info("step %d loss %.5f", step, record["loss"])
            if out_dir and (step % cfg.ckpt_every == 0 or step == stop):
                save_checkpoint(os.path.join(out_dir, "last.pt"), model, opt, sched, step,
                                {"best_val_rmse": best, "ablation": model.cfg.ablation_tag()})
    finally:
        if log_file:
            log_file.close()
    return TrainState(model.state_dict(), opt.state_dict(), step, best, history)
