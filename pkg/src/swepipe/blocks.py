"""Shared network building blocks: SE gating, 3D/2D residual blocks,
convolutional LSTM, temporal attention, FFT-based channel attention."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class SEBlock(nn.Module):
    """Squeeze-and-excite channel gate: global pool, bottleneck, sigmoid."""

    def __init__(self, channels, reduction=4):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def gate(self, x):
        s = x.mean(dim=tuple(range(2, x.ndim)))
        s = self.fc2(F.relu(self.fc1(s)))
        return torch.sigmoid(s)

    def forward(self, x):
        g = self.gate(x)
        return x * g.view(*g.shape, *([1] * (x.ndim - 2)))


class ResidualBlock3d(nn.Module):
    """conv-bn-relu-conv-bn with a 1x1x1 projection skip when channels differ."""

    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv1 = nn.Conv3d(in_ch, out_ch, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm3d(out_ch)
        self.conv2 = nn.Conv3d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm3d(out_ch)
        if in_ch != out_ch:
            self.proj = nn.Conv3d(in_ch, out_ch, 1, bias=False)
        else:
            self.proj = nn.Identity()

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.proj(x))


class BasicBlock2d(nn.Module):
    """ResNet basic block, stride 1 (downsampling is pooled outside)."""

    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        if in_ch != out_ch:
            self.proj = nn.Conv2d(in_ch, out_ch, 1, bias=False)
        else:
            self.proj = nn.Identity()

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.proj(x))


class ConvLSTMCell(nn.Module):
    def __init__(self, in_ch, hidden_ch, kernel=3):
        super().__init__()
        self.hidden_ch = hidden_ch
        self.gates = nn.Conv2d(
            in_ch + hidden_ch, 4 * hidden_ch, kernel, padding=kernel // 2
        )

    def forward(self, x, state):
        h, c = state
        gates = self.gates(torch.cat([x, h], dim=1))
        i, f, o, g = gates.chunk(4, dim=1)
        c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        return h, c


class ConvLSTM(nn.Module):
    """Stacked ConvLSTM over a (B, C, T, A, L) feature; returns the full
    hidden-state sequence of the last layer."""

    def __init__(self, channels, depth=3, kernel=3):
        super().__init__()
        self.cells = nn.ModuleList(
            ConvLSTMCell(channels, channels, kernel) for _ in range(depth)
        )

    def forward(self, x):
        b, c, t, a, l = x.shape
        seq = [x[:, :, i] for i in range(t)]
        for cell in self.cells:
            h = x.new_zeros(b, cell.hidden_ch, a, l)
            cstate = torch.zeros_like(h)
            out = []
            for frame in seq:
                h, cstate = cell(frame, (h, cstate))
                out.append(h)
            seq = out
        return torch.stack(seq, dim=2)


class TemporalAttention(nn.Module):
    """Softmax weighting over time: per-frame globally pooled descriptors
    are projected, the last frame's descriptor acts as query, and the frame
    scores collapse the temporal axis to a weighted sum."""

    def __init__(self, channels):
        super().__init__()
        self.key_proj = nn.Linear(channels, channels)
        self.query_proj = nn.Linear(channels, channels)

    def forward(self, h, return_weights=False):
        # h: (B, C, T, A, L)
        pooled = h.mean(dim=(3, 4)).transpose(1, 2)  # (B, T, C)
        keys = self.key_proj(pooled)
        query = self.query_proj(pooled[:, -1])  # (B, C)
        scores = torch.einsum("btc,bc->bt", keys, query)
        alpha = torch.softmax(scores, dim=1)
        out = torch.einsum("bcthw,bt->bchw", h, alpha)
        if return_weights:
            return out, alpha
        return out


def fft_magnitude(y: torch.Tensor) -> torch.Tensor:
    """Per-channel 2D DFT magnitude over the spatial axes."""
    return torch.fft.fft2(y, dim=(-2, -1)).abs()


class FFTAttention(nn.Module):
    """Channel gate computed from the magnitude spectrum of preconditioned
    features; output is x + x * gate."""

    def __init__(self, channels, reduction=4):
        super().__init__()
        self.pre = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(channels),
            nn.ReLU(inplace=True),
        )
        self.post = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(channels),
            nn.ReLU(inplace=True),
        )
        self.se = SEBlock(channels, reduction)

    def forward(self, x):
        y = self.pre(x)
        spectrum = fft_magnitude(y)
        gate = self.se.gate(self.post(spectrum))
        return x + x * gate.view(*gate.shape, 1, 1)


def init_weights(module: nn.Module) -> None:
    """Fan-in-scaled init for convolutions and linears, orthogonal-style
    init for recurrent gate kernels."""
    recurrent = {
        id(m.gates) for m in module.modules() if isinstance(m, ConvLSTMCell)
    }
    for m in module.modules():
        if isinstance(m, ConvLSTMCell):
            nn.init.orthogonal_(m.gates.weight)
            if m.gates.bias is not None:
                nn.init.zeros_(m.gates.bias)
        elif isinstance(m, (nn.Conv2d, nn.Conv3d)) and id(m) not in recurrent:
            nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Linear):
            nn.init.kaiming_uniform_(m.weight, nonlinearity="relu")
            nn.init.zeros_(m.bias)
