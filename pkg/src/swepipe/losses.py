"""Supervision terms: reconstruction MAE, regional denoising loss, fusion
(MAE + NCC) loss, total-variation loss, soft IoU loss, and their compound
combination."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

EPS = 1e-8


@dataclass
class LossWeights:
    """Compound-loss coefficients.

    alpha1:alpha2 is the mean BG:FG pixel-count ratio of the training
    masks (alpha2 normalized to 1), beta1 = kappa * (alpha1 + alpha2).
    """

    alpha1: float
    alpha2: float = 1.0
    beta2: float = 50.0
    gamma: float = 10.0
    mu: float = 1.0
    kappa: float = 0.5
    ratio_source: str = ""

    def __post_init__(self):
        if not 0.0 < self.kappa <= 1.0:
            raise ValueError("kappa must be in (0, 1]")
        self.beta1 = self.kappa * (self.alpha1 + self.alpha2)

    @classmethod
    def from_masks(cls, masks, ratio_source: str = "", **kw) -> "LossWeights":
        """Derive alpha1 from the mean BG:FG pixel ratio over the masks."""
        ratios = []
        for m in masks:
            m = np.asarray(m)
            fg = int(m.sum())
            if fg == 0 or fg == m.size:
                raise ValueError("mask with a single class cannot set the ratio")
            ratios.append((m.size - fg) / fg)
        return cls(alpha1=float(np.mean(ratios)), ratio_source=ratio_source, **kw)

    def to_dict(self) -> dict:
        return {
            "alpha1": self.alpha1,
            "alpha2": self.alpha2,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "gamma": self.gamma,
            "mu": self.mu,
            "kappa": self.kappa,
            "ratio_source": self.ratio_source,
        }


def _check_same_shape(*ts):
    shapes = {tuple(t.shape) for t in ts}
    if len(shapes) > 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")


def recon_mae(y_pred: torch.Tensor, y_gt: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over all pixels."""
    _check_same_shape(y_pred, y_gt)
    return torch.mean(torch.abs(y_gt - y_pred))


def denoise_loss(
    y_fg: torch.Tensor,
    y_bg: torch.Tensor,
    y_gt: torch.Tensor,
    m_gt: torch.Tensor,
    alpha1: float,
    alpha2: float,
):
    """Regional loss: each area cleaned against the truth inside its own
    region and penalized for leaking into the other.

    Returns (total, components) with the four unnormalized L1 terms.
    """
    _check_same_shape(y_fg, y_bg, y_gt, m_gt)
    if not torch.all((m_gt == 0) | (m_gt == 1)):
        raise ValueError("ground-truth mask must be binary")
    m = m_gt.to(y_fg.dtype)
    n = float(y_gt.numel())
    l_fg1 = torch.sum(torch.abs((y_fg - y_gt) * m))
    l_fg2 = torch.sum(torch.abs(y_fg * (1.0 - m)))
    l_bg1 = torch.sum(torch.abs((y_bg - y_gt) * (1.0 - m)))
    l_bg2 = torch.sum(torch.abs(y_bg * m))
    l_fg = (l_fg1 + l_fg2) / n
    l_bg = (l_bg1 + l_bg2) / n
    total = alpha1 * l_fg + alpha2 * l_bg
    comps = {"l_fg1": l_fg1, "l_fg2": l_fg2, "l_bg1": l_bg1, "l_bg2": l_bg2,
             "l_fg": l_fg, "l_bg": l_bg}
    return total, comps


def ncc(y: torch.Tensor, y_gt: torch.Tensor) -> torch.Tensor:
    """Normalized cross correlation with an epsilon-guarded denominator."""
    num = torch.sum(y_gt * y)
    den = torch.sqrt(torch.sum(y_gt**2) * torch.sum(y**2)) + EPS
    return num / den


def fusion_loss(y: torch.Tensor, y_gt: torch.Tensor, beta1: float, beta2: float):
    """beta1 * MAE + beta2 * (1 - NCC). Returns (total, mae_term, ncc_term)."""
    _check_same_shape(y, y_gt)
    mae_term = torch.mean(torch.abs(y_gt - y))
    ncc_term = 1.0 - ncc(y, y_gt)
    return beta1 * mae_term + beta2 * ncc_term, mae_term, ncc_term


def tv_loss(y: torch.Tensor):
    """Squared-difference total variation; the axial term is normalized by
    (A-1) and the lateral term by (L-1), nothing else."""
    if y.shape[-2] < 2 or y.shape[-1] < 2:
        raise ValueError("need at least 2 pixels along each axis")
    a, l = y.shape[-2], y.shape[-1]
    axial = torch.sum((y[..., :-1, :] - y[..., 1:, :]) ** 2) / (a - 1)
    lateral = torch.sum((y[..., :, :-1] - y[..., :, 1:]) ** 2) / (l - 1)
    return axial + lateral, axial, lateral


def iou_loss(m_pred: torch.Tensor, m_gt: torch.Tensor) -> torch.Tensor:
    """Soft IoU loss: 1 - |inter| / (|union| + eps), with the product/sum
    relaxation so soft predictions stay differentiable."""
    _check_same_shape(m_pred, m_gt)
    mg = m_gt.to(m_pred.dtype)
    inter = torch.sum(m_pred * mg)
    union = torch.sum(m_pred + mg - m_pred * mg)
    return 1.0 - inter / (union + EPS)


def compound_loss(outputs, y_gt: torch.Tensor, m_gt: torch.Tensor, w: LossWeights):
    """Denoiser supervision: regional + fusion + gamma*TV + mu*IoU.

    ``outputs`` needs fields y, m, y_fg, y_bg. Returns (total, breakdown).
    """
    l_den, comps = denoise_loss(
        outputs.y_fg, outputs.y_bg, y_gt, m_gt, w.alpha1, w.alpha2
    )
    l_fuse, mae_term, ncc_term = fusion_loss(outputs.y, y_gt, w.beta1, w.beta2)
    l_tv, tv_a, tv_l = tv_loss(outputs.y)
    l_iou = iou_loss(outputs.m, m_gt)
    total = l_den + l_fuse + w.gamma * l_tv + w.mu * l_iou
    breakdown = {
        "denoise": l_den,
        "fuse": l_fuse,
        "fuse_mae": mae_term,
        "fuse_ncc": ncc_term,
        "tv": l_tv,
        "tv_axial": tv_a,
        "tv_lateral": tv_l,
        "iou": l_iou,
        "total": total,
        **comps,
    }
    return total, breakdown
