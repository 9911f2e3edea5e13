"""Post-denoiser: shared SE-augmented residual encoder, dual regional
decoders (inclusion / background), and a fusion block that emits the
cleaned modulus map plus a segmentation mask."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import BasicBlock2d, SEBlock, init_weights

PAD_MULTIPLE = 8


class DenoiserOutputs(NamedTuple):
    y: torch.Tensor  # cleaned modulus map, >= 0
    m: torch.Tensor  # sigmoid mask in (0, 1)
    y_fg: torch.Tensor  # inclusion-only estimate
    y_bg: torch.Tensor  # background-only estimate


@dataclass
class DenoiserConfig:
    base_channels: int = 64
    blocks_per_stage: tuple[int, int, int] = (3, 4, 6)
    se_reduction: int = 4
    seed: int = 0

    def __post_init__(self):
        if len(self.blocks_per_stage) != 3:
            raise ValueError("encoder has exactly 3 stages")

    def to_dict(self) -> dict:
        return {
            "kind": "denoiser",
            "base_channels": self.base_channels,
            "blocks_per_stage": list(self.blocks_per_stage),
            "se_reduction": self.se_reduction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        d = {k: v for k, v in d.items() if k != "kind"}
        d["blocks_per_stage"] = tuple(d["blocks_per_stage"])
        return cls(**d)


class DenoiserEncoder(nn.Module):
    """Three residual stages; each stage is followed by 2x2 average pooling
    and SE gating, doubling channels per stage."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        c = cfg.base_channels
        widths = [c, 2 * c, 4 * c]
        self.stages = nn.ModuleList()
        self.se = nn.ModuleList()
        in_ch = 1
        for w, n_blocks in zip(widths, cfg.blocks_per_stage):
            blocks = [BasicBlock2d(in_ch, w)]
            blocks += [BasicBlock2d(w, w) for _ in range(n_blocks - 1)]
            self.stages.append(nn.Sequential(*blocks))
            self.se.append(SEBlock(w, cfg.se_reduction))
            in_ch = w
        self.widths = widths

    def forward(self, x):
        feats = []
        for stage, se in zip(self.stages, self.se):
            x = se(F.avg_pool2d(stage(x), 2))
            feats.append(x)
        return feats


class RegionalDecoder(nn.Module):
    """Mirror decoder with skip concatenation and SE gating at the two finer
    scales; returns the full-resolution feature and its >= 0 modulus head."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        c = cfg.base_channels
        self.conv0 = self._stage(4 * c, 2 * c)
        self.se0 = SEBlock(4 * c, cfg.se_reduction)
        self.conv1 = self._stage(4 * c, c)
        self.se1 = SEBlock(2 * c, cfg.se_reduction)
        self.conv2 = self._stage(2 * c, c)
        self.head = nn.Conv2d(c, 1, 3, padding=1)

    @staticmethod
    def _stage(in_ch, out_ch):
        return nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
        )

    @staticmethod
    def _up(x):
        return F.interpolate(x, scale_factor=2, mode="nearest")

    def forward(self, feats):
        j0, j1, j2 = feats
        d = self._up(self.conv0(j2))
        d = self.se0(torch.cat([d, j1], dim=1))
        d = self._up(self.conv1(d))
        d = self.se1(torch.cat([d, j0], dim=1))
        d = self._up(self.conv2(d))
        return d, F.relu(self.head(d))


class FusionBlock(nn.Module):
    """Concatenate the two regional features and reduce channels gradually;
    the mask taps the feature stack one step before the final reduction."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        c = cfg.base_channels
        self.bn = nn.BatchNorm2d(2 * c)
        self.reduce0 = self._conv_relu(2 * c, c)
        self.reduce1 = self._conv_relu(c, c)
        self.reduce2 = self._conv_relu(c, 1)
        self.mask_hidden = self._conv_relu(c, c)
        self.mask_head = nn.Conv2d(c, 1, 3, padding=1)

    @staticmethod
    def _conv_relu(in_ch, out_ch):
        return nn.Sequential(nn.Conv2d(in_ch, out_ch, 3, padding=1), nn.ReLU(inplace=True))

    def forward(self, d_fg, d_bg):
        if d_fg.shape != d_bg.shape:
            raise ValueError("regional features must have equal shapes")
        stack = self.bn(torch.cat([d_fg, d_bg], dim=1))
        pre0 = self.reduce0(stack)
        pre1 = self.reduce1(pre0)
        y = self.reduce2(pre1)
        m = torch.sigmoid(self.mask_head(self.mask_hidden(pre1)))
        return y, m


class DenoiserNet(nn.Module):
    """Primary reconstruction in, (y, m, y_fg, y_bg) out, all input-shaped.

    Inputs whose spatial size is not a multiple of 8 are zero-padded on the
    right/bottom and the outputs cropped back.
    """

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = DenoiserEncoder(cfg)
        self.decoder_fg = RegionalDecoder(cfg)
        self.decoder_bg = RegionalDecoder(cfg)
        self.fusion = FusionBlock(cfg)

    def forward(self, y_prime) -> DenoiserOutputs:
        if y_prime.ndim != 4 or y_prime.shape[1] != 1:
            raise ValueError("expected a (B, 1, A, L) map")
        a, l = y_prime.shape[-2:]
        pad_a = (-a) % PAD_MULTIPLE
        pad_l = (-l) % PAD_MULTIPLE
        x = F.pad(y_prime, (0, pad_l, 0, pad_a)) if (pad_a or pad_l) else y_prime
        feats = self.encoder(x)
        d_fg, y_fg = self.decoder_fg(feats)
        d_bg, y_bg = self.decoder_bg(feats)
        y, m = self.fusion(d_fg, d_bg)
        crop = lambda t: t[..., :a, :l]  # noqa: E731
        return DenoiserOutputs(y=crop(y), m=crop(m), y_fg=crop(y_fg), y_bg=crop(y_bg))


def build_denoiser(cfg: DenoiserConfig) -> DenoiserNet:
    torch.manual_seed(cfg.seed)
    net = DenoiserNet(cfg)
    init_weights(net)
    return net
