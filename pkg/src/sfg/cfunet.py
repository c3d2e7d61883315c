"""Cross-modality flow network: depth/RGB encoders, trilateral and cross
attention at the coarsest grid, a coarse-to-fine flow decoder, and
flow-guided grid sampling of the LR depth."""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import bicubic_matrix

SQRT_2PI = math.sqrt(2 * math.pi)


def gaussian(x, sigma):
    """Normalized 1-D Gaussian density ``exp(-x^2 / 2 sigma^2) / (sigma sqrt(2 pi))``."""
    if not torch.is_tensor(sigma) and sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if torch.is_tensor(x) or torch.is_tensor(sigma):
        return torch.exp(-x**2 / (2 * sigma**2)) / (sigma * SQRT_2PI)
    return math.exp(-x * x / (2 * sigma * sigma)) / (sigma * SQRT_2PI)


def gaussian_sq(d2, sigma):
    # takes a squared distance so no sqrt sits in the backward pass
    return torch.exp(-d2 / (2 * sigma**2)) / (sigma * SQRT_2PI)


def pairwise_sq_dist(x):
    """(N, P, C) -> (N, P, P) squared Euclidean distances."""
    sq = (x * x).sum(-1)
    d2 = sq.unsqueeze(-1) + sq.unsqueeze(-2) - 2 * x @ x.transpose(-1, -2)
    return d2.clamp_min(0.0)


def grid_coords(h, w, dtype=torch.float64, device=None):
    rows, cols = torch.meshgrid(torch.arange(h, dtype=dtype, device=device),
                                torch.arange(w, dtype=dtype, device=device), indexing="ij")
    return torch.stack([rows.reshape(-1), cols.reshape(-1)], -1)


def spatial_kernel(coords, sigma_s):
    coords = torch.as_tensor(coords, dtype=torch.float64)
    return gaussian_sq(pairwise_sq_dist(coords.unsqueeze(0))[0], sigma_s)


def flat(x):
    # (N, C, h, w) -> (N, h*w, C)
    return x.flatten(2).transpose(1, 2)


def color_kernel_matrix(rgb_feats, sigma_c, feature_norm=False):
    """Sum over layers of Gaussian colour affinities; layer 0 is taken raw."""
    shape = rgb_feats[0].shape[-2:]
    total = 0
    for l, g in enumerate(rgb_feats):
        if g.shape[-2:] != shape:
            raise ValueError(f"colour feature {l} is {tuple(g.shape[-2:])}, expected {tuple(shape)}")
        if feature_norm and l > 0:
            g = F.normalize(g, dim=1)
        total = total + gaussian_sq(pairwise_sq_dist(flat(g)), sigma_c)
    return total


def color_kernel_sum(rgb_feats, i, j, sigma_c):
    """Colour kernel sum for one pixel pair of unbatched (C, h, w) features."""
    shape = rgb_feats[0].shape[-2:]
    total = 0.0
    for l, g in enumerate(rgb_feats):
        if g.shape[-2:] != shape:
            raise ValueError(f"colour feature {l} is {tuple(g.shape[-2:])}, expected {tuple(shape)}")
        g = g.reshape(g.shape[0], -1)
        total += gaussian(torch.linalg.vector_norm(g[:, i] - g[:, j]), sigma_c)
    return total


def trilateral_weights(feat, rgb_feats, sigma_s, sigma_c, sigma_d, feature_norm=False):
    n, _, h, w = feat.shape
    coords = grid_coords(h, w, feat.dtype, feat.device)
    alpha = gaussian_sq(pairwise_sq_dist(coords.unsqueeze(0)), sigma_s)
    beta = color_kernel_matrix(rgb_feats, sigma_c, feature_norm)
    f = F.normalize(feat, dim=1) if feature_norm else feat
    gamma = gaussian_sq(pairwise_sq_dist(flat(f)), sigma_d)
    return alpha * beta * gamma


def trilateral_self_attention(feat, rgb_feats, sigma_s, sigma_c, sigma_d,
                              normalize=True, feature_norm=False):
    """Aggregate depth features with spatial x colour x depth Gaussian weights, plus a residual.

    ``feat`` is (N, D, h, w); ``rgb_feats`` lists (N, C_l, h, w) colour
    features with the raw image first.
    """
    if any(g.shape[0] != feat.shape[0] or g.shape[-2:] != feat.shape[-2:] for g in rgb_feats):
        raise ValueError("colour features must match the depth feature grid")
    w = trilateral_weights(feat, rgb_feats, sigma_s, sigma_c, sigma_d, feature_norm)
    if normalize:
        w = w / w.sum(-1, keepdim=True)
    if not torch.isfinite(w).all():
        raise FloatingPointError("non-finite trilateral kernel")
    x = flat(feat)
    out = w @ x + x
    return out.transpose(1, 2).reshape(feat.shape)


class TrilateralSelfAttention(nn.Module):
    def __init__(self, sigma_s=4.0, sigma_c=1.0, sigma_d=1.0, learn_sigmas=False,
                 normalize=True, feature_norm=True):
        super().__init__()
        log_sigmas = torch.log(torch.tensor([sigma_s, sigma_c, sigma_d], dtype=torch.float32))
        self.log_sigmas = nn.Parameter(log_sigmas, requires_grad=learn_sigmas)
        self.normalize = normalize
        self.feature_norm = feature_norm

    def forward(self, feat, rgb_feats):
        s = self.log_sigmas.exp().to(feat.dtype)
        return trilateral_self_attention(feat, rgb_feats, s[0], s[1], s[2],
                                         self.normalize, self.feature_norm)


class AttentionBranch(nn.Module):
    """Non-local attention: queries from one modality, keys/values from the other."""

    def __init__(self, dim, expansion=2):
        super().__init__()
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.mlp = nn.Sequential(nn.Linear(dim, dim * expansion), nn.ReLU(inplace=True),
                                 nn.Linear(dim * expansion, dim))
        self.scale = dim ** -0.5

    def attention(self, x, y):
        return torch.softmax(self.q(x) @ self.k(y).transpose(1, 2) * self.scale, dim=-1)

    def forward(self, x, y):
        # x, y: (N, P, D)
        return x + self.mlp(self.attention(x, y) @ self.v(y))


class CrossAttention(nn.Module):
    def __init__(self, dim, expansion=2):
        super().__init__()
        self.depth_query = AttentionBranch(dim, expansion)
        self.rgb_query = AttentionBranch(dim, expansion)

    def forward(self, fbar, g):
        if fbar.shape != g.shape:
            raise ValueError(f"cross-attention inputs differ: {tuple(fbar.shape)} vs {tuple(g.shape)}")
        x, y = flat(fbar), flat(g)
        f_out = self.depth_query(x, y).transpose(1, 2).reshape(fbar.shape)
        g_out = self.rgb_query(y, x).transpose(1, 2).reshape(g.shape)
        return f_out, g_out


def conv_block(cin, cout, stride=1):
    return nn.Sequential(nn.Conv2d(cin, cout, 3, stride, 1), nn.LeakyReLU(0.1, inplace=True))


def identity_grid(h, w, dtype=torch.float32, device=None):
    ys = (2 * torch.arange(h, dtype=dtype, device=device) + 1) / h - 1
    xs = (2 * torch.arange(w, dtype=dtype, device=device) + 1) / w - 1
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gx, gy], -1)


def grid_sample(d_lr, flow):
    """Bilinearly sample ``d_lr`` (N,1,h0,w0) at the HR identity grid plus ``flow`` (N,2,H,W).

    Flow is in normalized coordinates where [-1, 1] spans the image; channel
    0 is the x offset. Samples past the border take the border value.
    """
    if not torch.isfinite(flow).all():
        raise FloatingPointError("non-finite flow")
    n, _, h, w = flow.shape
    grid = identity_grid(h, w, flow.dtype, flow.device).unsqueeze(0) + flow.permute(0, 2, 3, 1)
    return F.grid_sample(d_lr, grid, mode="bilinear", padding_mode="border", align_corners=False)


_BICUBIC_CACHE = {}


def bicubic_upsample(x, size):
    """Catmull-Rom resize matching :func:`sfg.data.bicubic_resize`."""
    h, w = x.shape[-2:]
    key = (h, w) + tuple(size)
    if key not in _BICUBIC_CACHE:
        _BICUBIC_CACHE[key] = (torch.from_numpy(bicubic_matrix(h, size[0])),
                               torch.from_numpy(bicubic_matrix(w, size[1])))
    wh, ww = (m.to(x) for m in _BICUBIC_CACHE[key])
    return wh @ x @ ww.T


class Encoder(nn.Module):
    """Stride-2 conv blocks; returns one feature map per layer."""

    def __init__(self, cin, widths, first_stride=2):
        super().__init__()
        layers = []
        for i, wd in enumerate(widths):
            stride = first_stride if i == 0 else 2
            layers.append(nn.Sequential(conv_block(cin, wd, stride), conv_block(wd, wd)))
            cin = wd
        self.layers = nn.ModuleList(layers)

    def forward(self, x):
        feats = []
        for layer in self.layers:
            x = layer(x)
            feats.append(x)
        return feats


def decoder_width(level_factor, cap):
    return min(cap, 16 * 2 ** level_factor)


class FlowDecoder(nn.Module):
    """Correlation layers below the encoder, then a deconvolution ladder that
    predicts one flow per level, each doubling resolution.

    ``skip_channels[k]`` is the width of skip feature k (0 = RGB image,
    1..L encoder layers); the feature at k lives at 1/2^k resolution.
    """

    def __init__(self, skip_channels, fused_channels, L_prime, corr_width=128,
                 max_width=128, flow_clamp=2.0):
        super().__init__()
        L = len(skip_channels) - 1
        self.L, self.L_prime, self.flow_clamp = L, L_prime, flow_clamp
        corr = []
        cin = fused_channels
        for _ in range(L + 1, L_prime + 1):
            corr.append(nn.Sequential(conv_block(cin, corr_width, 2), conv_block(corr_width, corr_width)))
            cin = corr_width
        self.corr = nn.ModuleList(corr)
        skips = list(skip_channels) + [corr_width] * (L_prime - L)

        self.up, self.fuse, self.heads = nn.ModuleList(), nn.ModuleList(), nn.ModuleList()
        prev = skips[L_prime]
        for l in range(1, L_prime + 1):
            factor = L_prime - l  # level l lives at 1/2^factor
            wd = decoder_width(factor, max_width)
            extra = 0 if l == 1 else 2
            self.up.append(nn.ConvTranspose2d(prev + extra, wd, 4, 2, 1))
            skip = 0 if l == 1 else skips[L_prime - l]
            self.fuse.append(nn.Sequential(conv_block(wd + skip, wd), conv_block(wd, wd)))
            head = nn.Conv2d(wd, 2, 3, 1, 1)
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)
            self.heads.append(head)
            prev = wd

    def correlated(self, fused):
        feats = []
        x = fused
        for layer in self.corr:
            x = layer(x)
            feats.append(x)
        return feats

    def forward(self, skips, fused):
        """``skips`` = [G_0 .. G_L]; returns (flows coarse->fine, correlated features)."""
        g = list(skips) + self.correlated(fused)
        flows = []
        x = self.fuse[0](self.up[0](g[self.L_prime]))
        delta = self.heads[0](x).clamp(-self.flow_clamp, self.flow_clamp)
        flows.append(delta)
        for l in range(1, self.L_prime):
            up = self.up[l](torch.cat([x, delta], 1))
            skip = g[self.L_prime - l - 1]
            if skip.shape[-2:] != up.shape[-2:]:
                raise ValueError(f"flow level {l + 1}: skip {tuple(skip.shape[-2:])} "
                                 f"vs upsampled {tuple(up.shape[-2:])}")
            x = self.fuse[l](torch.cat([up, skip], 1))
            coarse = F.interpolate(delta, scale_factor=2, mode="bilinear", align_corners=False)
            delta = (self.heads[l](x) + coarse).clamp(-self.flow_clamp, self.flow_clamp)
            flows.append(delta)
        return flows, g[self.L + 1:]


class CFUNet(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.depth_encoder = Encoder(1, cfg.widths)
        self.rgb_encoder = Encoder(3, cfg.widths)
        dim = cfg.widths[-1]
        self.trisa = TrilateralSelfAttention(cfg.sigma_s, cfg.sigma_c, cfg.sigma_d, cfg.learn_sigmas,
                                             cfg.kernel_normalize, cfg.kernel_feature_norm)
        self.cross = CrossAttention(dim, cfg.mlp_expansion)
        self.decoder = FlowDecoder([3] + list(cfg.widths), 2 * dim, cfg.L_prime, cfg.corr_width,
                                   cfg.decoder_max_width, cfg.flow_clamp)

    def attend(self, f_last, g_last, rgb_feats):
        """Trilateral then cross attention, at a grid capped to ``attention_max_side``."""
        h, w = f_last.shape[-2:]
        side = self.cfg.attention_max_side
        size = (min(h, side), min(w, side))
        pooled = size != (h, w)
        if pooled:
            f_in = F.adaptive_avg_pool2d(f_last, size)
            g_in = F.adaptive_avg_pool2d(g_last, size)
        else:
            f_in, g_in = f_last, g_last
        fbar = f_in
        if self.cfg.use_trisa:
            colour = [F.adaptive_avg_pool2d(g, size) for g in rgb_feats]
            fbar = self.trisa(f_in, colour)
        if self.cfg.use_crossattn:
            f_out, g_out = self.cross(fbar, g_in)
        else:
            f_out, g_out = fbar, g_in
        if pooled:
            up = lambda d: F.interpolate(d, size=(h, w), mode="bilinear", align_corners=False)
            return f_last + up(f_out - f_in), g_last + up(g_out - g_in)
        return f_out, g_out

    def forward(self, d_bic, rgb, d_lr=None, out_size=None):
        """Features and flows on padded inputs; coarse depth if ``d_lr`` is given.

        ``out_size`` is the unpadded (H, W) at which the final flow samples
        ``d_lr``.
        """
        fs = self.depth_encoder(d_bic)
        gs = self.rgb_encoder(rgb)
        f_t, g_t = self.attend(fs[-1], gs[-1], [rgb] + gs)
        flows, corr = self.decoder([rgb] + gs, torch.cat([f_t, g_t], 1))
        coarse = None
        if d_lr is not None:
            H, W = out_size or d_bic.shape[-2:]
            coarse = grid_sample(d_lr, flows[-1][..., :H, :W])
        return coarse, flows
