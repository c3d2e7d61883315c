import dataclasses
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .cfunet import CFUNet, bicubic_upsample
from .config import ModelConfig
from .errors import DataError
from .peanet import PEANet


@dataclass
class SFGOutput:
    coarse: torch.Tensor
    refine: torch.Tensor
    flows: list
    guides: list


def pad_to_multiple(x, multiple):
    h, w = x.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if not ph and not pw:
        return x
    mode = "reflect" if ph < h and pw < w else "replicate"
    return F.pad(x, (0, pw, 0, ph), mode=mode)


class SFGNet(nn.Module):
    """Flow-guided upsampling followed by edge refinement."""

    def __init__(self, cfg=None):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        self.cfg.validate()
        self.cfunet = CFUNet(self.cfg)
        self.peanet = PEANet(self.cfg) if self.cfg.use_peanet else None

    def forward(self, d_lr, rgb):
        """``d_lr`` (N,1,h0,w0) and ``rgb`` (N,3,H,W) in [0,1]."""
        if d_lr.dim() != 4 or rgb.dim() != 4 or rgb.shape[1] != 3:
            raise DataError("expected d_lr (N,1,h,w) and rgb (N,3,H,W)")
        H, W = rgb.shape[-2:]
        m = self.cfg.pad_multiple
        d_bic = pad_to_multiple(bicubic_upsample(d_lr, (H, W)), m)
        rgb_p = pad_to_multiple(rgb, m)
        coarse, flows = self.cfunet(d_bic, rgb_p, d_lr, (H, W))
        if self.peanet is None:
            return SFGOutput(coarse, coarse, flows, [])
        refine, guides = self.peanet(pad_to_multiple(coarse, m), rgb_p, flows)
        return SFGOutput(coarse, refine[..., :H, :W], flows, guides)


def to_tensors(pair, dtype=torch.float32):
    d_lr = torch.from_numpy(pair.lr_depth.values).to(dtype)[None, None]
    rgb = torch.from_numpy(np.ascontiguousarray(pair.rgb.values.transpose(2, 0, 1))).to(dtype)[None]
    return d_lr, rgb


def predict(model, pair):
    """Run a single pair through ``model`` without gradients; returns SFGOutput."""
    model.eval()
    d_lr, rgb = to_tensors(pair, next(model.parameters()).dtype)
    with torch.no_grad():
        return model(d_lr, rgb)


def save_checkpoint(path, model, optimizer=None, scheduler=None, step=0, extra=None):
    state = {
        "model_config": dataclasses.asdict(model.cfg),
        "params": model.state_dict(),
        "step": step,
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "scheduler": scheduler.state_dict() if scheduler is not None else None,
        "extra": extra or {},
    }
    torch.save(state, path)


def load_checkpoint(path):
    """Returns (model, raw checkpoint dict)."""
    try:
        state = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    mc = dict(state["model_config"])
    for key in ("widths", "peanet_widths"):
        mc[key] = tuple(mc[key])
    model = SFGNet(ModelConfig(**mc))
    model.load_state_dict(state["params"])
    return model, state
