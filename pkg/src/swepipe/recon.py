"""Primary reconstruction network: 3D residual encoder, three nested
temporal blocks (overlapping time windows -> ConvLSTM -> temporal attention
-> FFT channel attention), and an SE-guided 2D decoder.

Two configurations share the code path: "full" maps a whole-region volume
(T, A, L) to an (A, L) modulus map; "patch" maps a (T, ap, lp) patch to a
centered (ceil(ap/3), ceil(lp/2)-1) footprint, trading axial pool factors
of 2 for 3 and using exact-size upsampling in the decoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import (
    ConvLSTM,
    FFTAttention,
    ResidualBlock3d,
    SEBlock,
    TemporalAttention,
    init_weights,
)

S_PATHS = 6


@dataclass
class TemporalWindowPlan:
    """S overlapping segments covering [0, t_len)."""

    t_len: int
    s_paths: int
    seg_len: int
    segments: list[tuple[int, int]] = field(default_factory=list)


def plan_windows(t_len: int, s: int = S_PATHS) -> TemporalWindowPlan:
    """seg_len = ceil(2 t / (s+1)); starts spread evenly with the last
    segment clamped to end at t_len."""
    if t_len < s:
        raise ValueError(f"need at least {s} frames, got {t_len}")
    seg_len = math.ceil(2 * t_len / (s + 1))
    span = t_len - seg_len
    starts = [int(math.floor(i * span / (s - 1) + 0.5)) for i in range(s)]
    segments = [(st, st + seg_len) for st in starts]
    return TemporalWindowPlan(t_len=t_len, s_paths=s, seg_len=seg_len, segments=segments)


# per-stage (T, A, L) pool kernels
FULL_POOLS = ((2, 2, 2), (2, 2, 2), (1, 2, 2))
PATCH_POOLS = ((2, 3, 2), (2, 3, 2), (1, 1, 2))


def _pool_size(size: int, k: int, ceil_spatial: bool) -> int:
    if k == 1:
        return size
    return math.ceil(size / k) if ceil_spatial else size // k


def encoder_shapes(
    mode: str, input_shape: tuple[int, int, int], base_channels: int
) -> list[tuple[int, int, int, int]]:
    """(C, T, A, L) of the three encoder outputs. Temporal sizes floor-divide,
    spatial sizes ceil-divide (realized by right/bottom padding)."""
    pools = FULL_POOLS if mode == "full" else PATCH_POOLS
    t, a, l = input_shape
    shapes = []
    for i, (kt, ka, kl) in enumerate(pools):
        t = _pool_size(t, kt, ceil_spatial=False)
        a = _pool_size(a, ka, ceil_spatial=True)
        l = _pool_size(l, kl, ceil_spatial=True)
        shapes.append((base_channels * 2**i, t, a, l))
    return shapes


def output_shape(mode: str, input_shape: tuple[int, int, int]) -> tuple[int, int]:
    _, a, l = input_shape
    if mode == "full":
        return a, l
    return math.ceil(a / 3), math.ceil(l / 2) - 1


@dataclass
class ReconConfig:
    mode: str = "patch"  # full | patch
    input_shape: tuple[int, int, int] = (70, 63, 10)
    base_channels: int = 16
    convlstm_depth: int = 3
    se_reduction: int = 4
    tukey_alpha: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("full", "patch"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.convlstm_depth != 3:
            raise ValueError("convlstm depth is fixed at 3")

    def to_dict(self) -> dict:
        return {
            "kind": "recon",
            "mode": self.mode,
            "input_shape": list(self.input_shape),
            "base_channels": self.base_channels,
            "convlstm_depth": self.convlstm_depth,
            "se_reduction": self.se_reduction,
            "tukey_alpha": self.tukey_alpha,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReconConfig":
        d = {k: v for k, v in d.items() if k != "kind"}
        d["input_shape"] = tuple(d["input_shape"])
        return cls(**d)


class SpatioTemporalEncoder(nn.Module):
    """Three residual 3D stages; the first two pool time and space, the
    last pools space only."""

    def __init__(self, cfg: ReconConfig):
        super().__init__()
        c = cfg.base_channels
        self.pools = FULL_POOLS if cfg.mode == "full" else PATCH_POOLS
        self.stages = nn.ModuleList(
            [ResidualBlock3d(1, c), ResidualBlock3d(c, 2 * c), ResidualBlock3d(2 * c, 4 * c)]
        )

    @staticmethod
    def _pad_and_pool(x, kernel):
        kt, ka, kl = kernel
        pad_a = (-x.shape[3]) % ka
        pad_l = (-x.shape[4]) % kl
        if pad_a or pad_l:
            # right/bottom -inf padding makes the spatial axes ceil-divide
            x = F.pad(x, (0, pad_l, 0, pad_a), value=float("-inf"))
        return F.max_pool3d(x, kernel)

    def forward(self, x):
        feats = []
        for stage, kernel in zip(self.stages, self.pools):
            x = self._pad_and_pool(stage(x), kernel)
            feats.append(x)
        return feats


class NestedTemporalBlock(nn.Module):
    """Six overlapping temporal windows, each through a stacked ConvLSTM and
    temporal attention; concatenated outputs pass batch norm, FFT channel
    attention, and a 1x1 recombination conv back to the input width."""

    def __init__(self, channels, t_len, depth=3, se_reduction=4):
        super().__init__()
        self.plan = plan_windows(t_len, S_PATHS)
        self.lstms = nn.ModuleList(
            ConvLSTM(channels, depth=depth) for _ in range(S_PATHS)
        )
        self.tams = nn.ModuleList(TemporalAttention(channels) for _ in range(S_PATHS))
        self.bn = nn.BatchNorm2d(S_PATHS * channels)
        self.fft_att = FFTAttention(S_PATHS * channels, se_reduction)
        self.recombine = nn.Conv2d(S_PATHS * channels, channels, 1)

    def forward(self, x):
        if x.shape[2] != self.plan.t_len:
            raise ValueError(
                f"expected {self.plan.t_len} frames, got {x.shape[2]}"
            )
        outs = []
        for (start, end), lstm, tam in zip(self.plan.segments, self.lstms, self.tams):
            seq = lstm(x[:, :, start:end])
            outs.append(tam(seq))
        merged = self.fft_att(self.bn(torch.cat(outs, dim=1)))
        return self.recombine(merged)


class ModulusDecoder(nn.Module):
    """Three conv+upsample stages from the coarsest collapsed feature, with
    skip concatenation and SE gating at the two finer levels."""

    def __init__(self, cfg: ReconConfig, level_shapes):
        super().__init__()
        c = cfg.base_channels
        self.out_shape = output_shape(cfg.mode, cfg.input_shape)
        # spatial targets after each upsample stage
        if cfg.mode == "full":
            _, a, l = cfg.input_shape
            self.targets = [
                (level_shapes[1][2], level_shapes[1][3]),
                (level_shapes[0][2], level_shapes[0][3]),
                (a, l),
            ]
            self.skip_crop = None
        else:
            self.targets = [
                (level_shapes[1][2], level_shapes[1][3]),
                self.out_shape,
                self.out_shape,
            ]
            self.skip_crop = self.out_shape
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
    def _resize(x, target):
        if x.shape[-2:] == tuple(target):
            return x
        return F.interpolate(x, size=target, mode="nearest-exact")

    def _skip(self, p):
        if self.skip_crop is not None:
            p = p[..., : self.skip_crop[0], : self.skip_crop[1]]
        return p

    def forward(self, p0, p1, p2):
        d = self._resize(self.conv0(p2), self.targets[0])
        d = self.se0(torch.cat([d, p1], dim=1))
        d = self._resize(self.conv1(d), self.targets[1])
        d = self.se1(torch.cat([d, self._skip(p0)], dim=1))
        d = self._resize(self.conv2(d), self.targets[2])
        return F.relu(self.head(d))


class ReconNet(nn.Module):
    """Volume in, non-negative modulus map out (normalized kPa/100)."""

    def __init__(self, cfg: ReconConfig):
        super().__init__()
        self.cfg = cfg
        shapes = encoder_shapes(cfg.mode, cfg.input_shape, cfg.base_channels)
        self.level_shapes = shapes
        self.encoder = SpatioTemporalEncoder(cfg)
        self.nested = nn.ModuleList(
            NestedTemporalBlock(
                ch, t, depth=cfg.convlstm_depth, se_reduction=cfg.se_reduction
            )
            for (ch, t, _, _) in shapes
        )
        self.decoder = ModulusDecoder(cfg, shapes)

    def forward(self, vol):
        # vol: (B, 1, T, A, L), min-max normalized
        if tuple(vol.shape[2:]) != tuple(self.cfg.input_shape):
            raise ValueError(
                f"input shape {tuple(vol.shape[2:])} != configured "
                f"{tuple(self.cfg.input_shape)}"
            )
        feats = self.encoder(vol)
        collapsed = [blk(f) for blk, f in zip(self.nested, feats)]
        return self.decoder(*collapsed)


def build_recon(cfg: ReconConfig) -> ReconNet:
    torch.manual_seed(cfg.seed)
    net = ReconNet(cfg)
    init_weights(net)
    return net
