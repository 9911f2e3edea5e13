"""Evaluation metrics (PSNR, CNR, SSIM, regional MAE, IoU, F1, HD, ASSD)
and the time-to-peak speed estimator used to validate the simulator."""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.spatial import cKDTree

from .simulate import MotionVolume


class FlatSignalError(ValueError):
    pass


class NonMonotoneArrivalError(ValueError):
    pass


def psnr(i_gt: np.ndarray, i_hat: np.ndarray) -> float:
    """-10 log10(MSE) after dividing each image by its own max."""
    gt = np.asarray(i_gt, dtype=np.float64)
    hat = np.asarray(i_hat, dtype=np.float64)
    if gt.max() <= 0 or hat.max() <= 0:
        raise ValueError("images must have a positive max")
    mse = float(np.mean((gt / gt.max() - hat / hat.max()) ** 2))
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def cnr(y: np.ndarray, mask: np.ndarray) -> float:
    """20 log10(|mu_FG - mu_BG| / sigma_BG); sentinels at the degeneracies."""
    y = np.asarray(y, dtype=np.float64)
    m = np.asarray(mask).astype(bool)
    if not m.any() or m.all():
        raise ValueError("mask needs at least one FG and one BG pixel")
    mu_fg = float(y[m].mean())
    mu_bg = float(y[~m].mean())
    sigma_bg = float(y[~m].std())
    contrast = abs(mu_fg - mu_bg)
    if contrast == 0.0:
        return -math.inf
    if sigma_bg == 0.0:
        return math.inf
    return 20.0 * math.log10(contrast / sigma_bg)


def ssim(i_gt: np.ndarray, i_hat: np.ndarray, data_range: float | None = None) -> float:
    """Whole-image SSIM from global means, variances and covariance."""
    a = np.asarray(i_gt, dtype=np.float64)
    b = np.asarray(i_hat, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    if data_range is None:
        data_range = float(max(a.max(), b.max()) - min(a.min(), b.min()))
        if data_range == 0.0:
            data_range = 1.0
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a, mu_b = a.mean(), b.mean()
    var_a, var_b = a.var(), b.var()
    cov = ((a - mu_a) * (b - mu_b)).mean()
    return float(
        (2 * mu_a * mu_b + c1)
        * (2 * cov + c2)
        / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    )


def region_mae(y: np.ndarray, y_gt: np.ndarray, mask: np.ndarray) -> tuple[float, float]:
    """MAE restricted to the FG pixels and to the BG pixels (inputs in kPa)."""
    y = np.asarray(y, dtype=np.float64)
    gt = np.asarray(y_gt, dtype=np.float64)
    m = np.asarray(mask).astype(bool)
    if not m.any() or m.all():
        raise ValueError("mask needs at least one FG and one BG pixel")
    err = np.abs(y - gt)
    return float(err[m].mean()), float(err[~m].mean())


def iou_f1(m_pred: np.ndarray, m_gt: np.ndarray) -> tuple[float, float]:
    """Set IoU and F1 of two binary masks; both empty is degenerate (1, 1)."""
    p = np.asarray(m_pred).astype(bool)
    g = np.asarray(m_gt).astype(bool)
    if p.shape != g.shape:
        raise ValueError("shape mismatch")
    tp = int(np.sum(p & g))
    fp = int(np.sum(p & ~g))
    fn = int(np.sum(~p & g))
    union = tp + fp + fn
    if union == 0:
        warnings.warn("both masks empty: IoU/F1 degenerate, reporting (1, 1)")
        return 1.0, 1.0
    iou = tp / union
    f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) > 0 else 0.0
    return float(iou), float(f1)


def surface_pixels(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with at least one background 4-neighbor (image border
    counts as background). Returns an (n, 2) coordinate array."""
    m = np.asarray(mask).astype(bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return np.argwhere(m & ~interior)


def hd_assd(
    m_pred: np.ndarray,
    m_gt: np.ndarray,
    spacing: tuple[float, float] = (1.0, 1.0),
) -> tuple[float, float]:
    """Hausdorff distance and average symmetric surface distance.

    HD is the max of the two directed max-min surface distances; ASSD sums
    the directed surface distances both ways and divides by the total mask
    pixel count n(gt) + n(pred).
    """
    p = np.asarray(m_pred).astype(bool)
    g = np.asarray(m_gt).astype(bool)
    if not p.any() or not g.any():
        raise ValueError("masks must be nonempty")
    sp = surface_pixels(p) * np.asarray(spacing, dtype=np.float64)
    sg = surface_pixels(g) * np.asarray(spacing, dtype=np.float64)
    d_g2p, _ = cKDTree(sp).query(sg)
    d_p2g, _ = cKDTree(sg).query(sp)
    hd = float(max(d_g2p.max(), d_p2g.max()))
    assd = float((d_g2p.sum() + d_p2g.sum()) / (int(g.sum()) + int(p.sum())))
    return hd, assd


def _parabolic_peak(signal: np.ndarray) -> float:
    """Sub-sample peak location by fitting a parabola through the argmax
    and its neighbors."""
    i = int(np.argmax(signal))
    if i == 0 or i == len(signal) - 1:
        return float(i)
    y0, y1, y2 = signal[i - 1], signal[i], signal[i + 1]
    denom = y0 - 2 * y1 + y2
    if denom == 0:
        return float(i)
    return i + 0.5 * (y0 - y2) / denom


def ttp_speed_estimate(
    vol: MotionVolume, depth_row: int, x1_mm: float, x2_mm: float
) -> float:
    """Shear speed from time-to-peak arrival difference between two lateral
    positions (mm from the push center), with sub-frame parabolic peak
    interpolation. Returns m/s."""
    if x2_mm <= x1_mm:
        raise ValueError("need x1 < x2")
    if x1_mm < 2.0:
        raise ValueError("positions must be >= 2 mm from the push center")
    pitch = vol.lateral_pitch_mm
    off = vol.layout.lateral_offsets_px[vol.region_index]
    first_col_mm = (off + 0.5) * pitch - vol.push_x_mm  # distance of column 0

    def col_of(x):
        j = int(round((x - first_col_mm) / pitch))
        if not 0 <= j < vol.data.shape[2]:
            raise ValueError(f"position {x} mm outside the region")
        return j

    cols = [col_of(x1_mm), col_of(x2_mm)]
    if cols[0] == cols[1]:
        raise ValueError("positions snap to the same lateral column")
    ttps = []
    for j, x in zip(cols, (x1_mm, x2_mm)):
        sig = vol.data[:, depth_row, j].astype(np.float64)
        if np.ptp(sig) <= 0:
            raise FlatSignalError(f"flat signal at {x} mm, row {depth_row}")
        ttps.append(_parabolic_peak(sig) / vol.prf_hz)
    dt = ttps[1] - ttps[0]
    if dt <= 0:
        raise NonMonotoneArrivalError(
            f"arrival not increasing between {x1_mm} and {x2_mm} mm"
        )
    dist_mm = (cols[1] - cols[0]) * pitch  # actual column-center separation
    return dist_mm * 1e-3 / dt


def sample_metrics(
    y_prime_kpa: np.ndarray,
    y_kpa: np.ndarray,
    m_pred: np.ndarray,
    truth_kpa: np.ndarray,
    mask_gt: np.ndarray,
    mask_threshold: float = 0.5,
) -> dict:
    """The full per-sample metric row for a reconstruction pair."""
    m_bin = np.asarray(m_pred) >= mask_threshold
    mae_fg, mae_bg = region_mae(y_kpa, truth_kpa, mask_gt)
    iou, f1 = iou_f1(m_bin, mask_gt)

    def guarded(fn, *a):
        # degenerate maps (e.g. all-zero output of an untrained net) yield
        # nan for the affected metric instead of aborting the report
        try:
            return fn(*a)
        except ValueError:
            return math.nan

    fg = mask_gt.astype(bool)
    row = {
        "mae_fg": mae_fg,
        "mae_bg": mae_bg,
        "cnr": guarded(cnr, y_kpa, mask_gt),
        "psnr": guarded(psnr, truth_kpa, y_kpa),
        "psnr_fg": guarded(psnr, truth_kpa[fg], y_kpa[fg]),
        "psnr_bg": guarded(psnr, truth_kpa[~fg], y_kpa[~fg]),
        "ssim": ssim(truth_kpa, y_kpa),
        "iou": iou,
        "f1": f1,
    }
    if m_bin.any():
        row["hd"], row["assd"] = hd_assd(m_bin, mask_gt)
    else:
        row["hd"] = math.nan
        row["assd"] = math.nan
    return row


METRIC_COLUMNS = [
    "mae_fg", "mae_bg", "cnr", "psnr", "psnr_fg", "psnr_bg",
    "ssim", "iou", "f1", "hd", "assd",
]


def aggregate_metrics(rows: list[dict]) -> dict:
    """Mean / median / std per column, ignoring non-finite entries."""
    agg = {}
    for col in METRIC_COLUMNS:
        vals = np.array([r[col] for r in rows if col in r], dtype=np.float64)
        finite = vals[np.isfinite(vals)]
        if finite.size == 0:
            agg[col] = {"mean": math.nan, "median": math.nan, "std": math.nan}
        else:
            agg[col] = {
                "mean": float(finite.mean()),
                "median": float(np.median(finite)),
                "std": float(finite.std()),
            }
    return agg


def format_metric_table(rows: list[dict], ids: list[str] | None = None) -> str:
    """Plain-text table: one line per sample plus mean/median/std footer."""
    ids = ids if ids is not None else [str(i) for i in range(len(rows))]
    headers = ["sample"] + METRIC_COLUMNS
    lines = ["  ".join(f"{h:>8s}" for h in headers)]
    for sid, row in zip(ids, rows):
        cells = [f"{sid:>8s}"]
        for col in METRIC_COLUMNS:
            v = row.get(col, math.nan)
            cells.append(f"{v:8.3f}" if np.isfinite(v) else f"{'inf' if v > 0 else 'nan':>8s}")
        lines.append("  ".join(cells))
    agg = aggregate_metrics(rows)
    for stat in ("mean", "median", "std"):
        cells = [f"{stat:>8s}"] + [f"{agg[c][stat]:8.3f}" for c in METRIC_COLUMNS]
        lines.append("  ".join(cells))
    return "\n".join(lines)
