"""Flow-enhanced pyramid edge attention: refines the coarse depth with RGB
guidance whose edges are emphasised by the flow magnitude."""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .cfunet import bicubic_upsample, conv_block


def flow_magnitude(delta, size=None):
    mag = torch.linalg.vector_norm(delta, dim=1, keepdim=True)
    if size is not None and tuple(mag.shape[-2:]) != tuple(size):
        mag = F.interpolate(mag, size=size, mode="bilinear", align_corners=False)
    return mag


def flow_enhance(g, delta):
    """``(1 + |delta|) * g`` with the flow magnitude resampled to ``g``'s grid."""
    return flow_magnitude(delta, g.shape[-2:]) * g + g


class PyramidAttention(nn.Module):
    """Multi-scale guidance refinement, iterated ``K`` times with shared weights.

    Branch k average-pools by 2^k; branch outputs are bicubically resized back,
    concatenated and merged. ``K == 0`` keeps only the input fusion conv.
    """

    def __init__(self, g_channels, f_channels, K):
        super().__init__()
        if K < 0:
            raise ValueError(f"K must be >= 0, got {K}")
        self.K = K
        self.fuse = conv_block(g_channels + f_channels, g_channels)
        self.branches = nn.ModuleList(conv_block(g_channels, g_channels) for _ in range(K))
        self.merge = conv_block(g_channels * K, g_channels) if K else None

    def step(self, g, f):
        z = self.fuse(torch.cat([g, f], 1))
        size = z.shape[-2:]
        outs = []
        for k, branch in enumerate(self.branches):
            p = F.avg_pool2d(z, 2 ** k) if k else z
            b = branch(p)
            if k:
                b = bicubic_upsample(b, size)
            outs.append(b)
        return self.merge(torch.cat(outs, 1))

    def forward(self, g_flow, f_coarse):
        if g_flow.shape[-2:] != f_coarse.shape[-2:]:
            raise ValueError("guidance and depth features must share a grid")
        if self.K == 0:
            return self.fuse(torch.cat([g_flow, f_coarse], 1))
        g = g_flow
        for _ in range(self.K):
            g = self.step(g, f_coarse)
        return g


class PEANet(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        T, w = cfg.T, cfg.peanet_widths
        self.T, self.L_prime = T, cfg.L_prime
        self.depth_layers = nn.ModuleList()
        cin = 1
        for t in range(T + 1):
            self.depth_layers.append(nn.Sequential(conv_block(cin, w[t], 1 if t == 0 else 2),
                                                   conv_block(w[t], w[t])))
            cin = w[t]
        self.rgb_layers = nn.ModuleList()
        cin = 3
        for t in range(T):
            self.rgb_layers.append(nn.Sequential(conv_block(cin, w[t], 1 if t == 0 else 2),
                                                 conv_block(w[t], w[t])))
            cin = w[t]
        self.pyramids = nn.ModuleList(PyramidAttention(w[t], w[t], cfg.K) for t in range(T))
        self.edge_in = conv_block(w[T], w[T])
        # decoder step t fuses F_edge (width w[T-t+1]) with layer T-t+1 guidance and depth features
        self.fu = nn.ModuleList()
        for t in range(1, T + 1):
            idx = T - t  # zero-based layer index of T-t+1
            self.fu.append(nn.Sequential(conv_block(w[idx + 1] + 2 * w[idx], w[idx]),
                                         conv_block(w[idx], w[idx])))
        self.head = nn.Conv2d(w[0], 1, 3, 1, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def encode(self, coarse, rgb):
        fs, gs = [], []
        x = coarse
        for layer in self.depth_layers:
            x = layer(x)
            fs.append(x)
        x = rgb
        for layer in self.rgb_layers:
            x = layer(x)
            gs.append(x)
        return fs, gs

    def guidance(self, gs, fs, flows):
        guides = []
        for t in range(1, self.T + 1):
            delta = flows[self.L_prime - t - 1]  # flows[0] is level 1
            g_flow = flow_enhance(gs[t - 1], delta)
            guides.append(self.pyramids[t - 1](g_flow, fs[t - 1]))
        return guides

    def forward(self, coarse, rgb, flows):
        """Returns (refined depth, guidance features per layer)."""
        if len(flows) < self.T + 1:
            raise ValueError(f"need at least T+1={self.T + 1} flow levels, got {len(flows)}")
        fs, gs = self.encode(coarse, rgb)
        guides = self.guidance(gs, fs, flows)
        e = self.edge_in(fs[self.T])
        for t in range(1, self.T + 1):
            idx = self.T - t
            e = F.interpolate(e, scale_factor=2, mode="bilinear", align_corners=False)
            if e.shape[-2:] != fs[idx].shape[-2:]:
                raise ValueError(f"edge decoder step {t}: {tuple(e.shape[-2:])} "
                                 f"vs {tuple(fs[idx].shape[-2:])}")
            e = self.fu[t - 1](torch.cat([e, guides[idx], fs[idx]], 1))
        return coarse + self.head(e), guides
