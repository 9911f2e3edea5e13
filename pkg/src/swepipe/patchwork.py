"""Patch extraction, Tukey windowing, overlap-add stitching and region merging."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal.windows import tukey

from .simulate import MotionVolume, RegionLayout

# weight floor used only inside weighted accumulation so that pixels touched
# solely by a window's zero-valued rim still receive their prediction
WEIGHT_FLOOR = 1e-6


class CoverageError(ValueError):
    """Some output pixels are covered by no prediction footprint."""

    def __init__(self, holes):
        self.holes = holes
        preview = ", ".join(str(h) for h in holes[:8])
        more = "" if len(holes) <= 8 else f" (+{len(holes) - 8} more)"
        super().__init__(f"uncovered pixels: {preview}{more}")


def patch_output_shape(ap: int, lp: int) -> tuple[int, int]:
    """Output footprint of a patch-mode prediction: (ceil(ap/3), ceil(lp/2)-1)."""
    return math.ceil(ap / 3), math.ceil(lp / 2) - 1


@dataclass
class Window2D:
    """Separable 2D Tukey window; alpha is the taper fraction per axis."""

    weights: np.ndarray
    alpha: tuple[float, float]


def tukey2d(shape: tuple[int, int], alpha: float | tuple[float, float]) -> Window2D:
    """Outer product of two 1D Tukey windows. alpha=0 gives all ones."""
    if np.isscalar(alpha):
        alpha = (float(alpha), float(alpha))
    h, w = shape
    if h < 1 or w < 1:
        raise ValueError("window shape must be at least 1x1")
    for a in alpha:
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"tukey alpha {a} outside [0, 1]")
    wa = tukey(h, alpha[0], sym=True) if h > 1 else np.ones(1)
    wl = tukey(w, alpha[1], sym=True) if w > 1 else np.ones(1)
    return Window2D(weights=np.outer(wa, wl), alpha=tuple(alpha))


def _anchor_axis(size: int, patch: int, stride: int) -> list[int]:
    if patch > size:
        raise ValueError(f"patch size {patch} exceeds extent {size}")
    last = size - patch
    anchors = list(range(0, last + 1, max(stride, 1)))
    if anchors[-1] != last:
        anchors.append(last)
    return anchors


@dataclass
class PatchGrid:
    """Anchor plan for tiling a (T, A, L) volume with ap x lp spatial patches.

    ``anchors`` are top-left (a, l) input coordinates; the output footprint
    of each patch is centered inside it and has shape (out_a, out_l).
    """

    ap: int = 63
    lp: int = 10
    stride_a: int = 21
    stride_l: int = 2
    region_shape: tuple[int, int] = (168, 16)
    anchors: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.out_a, self.out_l = patch_output_shape(self.ap, self.lp)
        if not self.anchors:
            a_anchors = _anchor_axis(self.region_shape[0], self.ap, self.stride_a)
            l_anchors = _anchor_axis(self.region_shape[1], self.lp, self.stride_l)
            self.anchors = [(a, l) for a in a_anchors for l in l_anchors]

    @property
    def margins(self) -> tuple[int, int]:
        # leading offset of the centered output footprint inside the patch
        return (self.ap - self.out_a) // 2, (self.lp - self.out_l) // 2


def extract_patches(
    vol: MotionVolume | np.ndarray, grid: PatchGrid
) -> list[tuple[tuple[int, int], np.ndarray]]:
    """Cut T x ap x lp sub-volumes at the grid anchors."""
    data = vol.data if isinstance(vol, MotionVolume) else vol
    _, a, l = data.shape
    out = []
    for (pa, pl) in grid.anchors:
        if pa < 0 or pl < 0 or pa + grid.ap > a or pl + grid.lp > l:
            raise ValueError(f"anchor ({pa}, {pl}) out of bounds for {a}x{l}")
        out.append(((pa, pl), data[:, pa : pa + grid.ap, pl : pl + grid.lp]))
    return out


def overlap_add(
    predictions: list[tuple[tuple[int, int], np.ndarray]],
    region_shape: tuple[int, int],
    window: Window2D,
) -> np.ndarray:
    """Windowed overlap-add of output patches, normalized by accumulated weight.

    output(p) = sum_i w_i(p) pred_i(p) / sum_i w_i(p). Footprints that stick
    out of the region are cropped. Raises CoverageError on holes.
    """
    acc = np.zeros(region_shape, dtype=np.float64)
    wacc = np.zeros(region_shape, dtype=np.float64)
    count = np.zeros(region_shape, dtype=np.int32)
    w_full = np.maximum(window.weights, WEIGHT_FLOOR)
    for (oa, ol), pred in predictions:
        if pred.shape != window.weights.shape:
            raise ValueError(
                f"prediction shape {pred.shape} != window shape {window.weights.shape}"
            )
        a0, l0 = max(oa, 0), max(ol, 0)
        a1 = min(oa + pred.shape[0], region_shape[0])
        l1 = min(ol + pred.shape[1], region_shape[1])
        if a0 >= a1 or l0 >= l1:
            continue
        wp = w_full[a0 - oa : a1 - oa, l0 - ol : l1 - ol]
        acc[a0:a1, l0:l1] += wp * pred[a0 - oa : a1 - oa, l0 - ol : l1 - ol]
        wacc[a0:a1, l0:l1] += wp
        count[a0:a1, l0:l1] += 1
    if np.any(count == 0):
        holes = [tuple(ix) for ix in np.argwhere(count == 0)]
        raise CoverageError(holes)
    return acc / wacc


def merge_regions(
    region_maps: list[np.ndarray],
    layout: RegionLayout,
    window: Window2D | None = None,
) -> np.ndarray:
    """Merge R region maps into the full map by lateral windowed overlap-add."""
    if len(region_maps) != layout.r_regions:
        raise ValueError(
            f"expected {layout.r_regions} region maps, got {len(region_maps)}"
        )
    shape = (layout.region_axial_px, layout.region_lateral_px)
    for m in region_maps:
        if m.shape != shape:
            raise ValueError(f"region map shape {m.shape} != layout shape {shape}")
    if window is None:
        # taper laterally only; axial coverage is full per region
        window = tukey2d(shape, (0.0, 0.5))
    preds = [
        ((0, layout.lateral_offsets_px[k]), region_maps[k])
        for k in range(layout.r_regions)
    ]
    full_shape = (layout.region_axial_px, layout.full_lateral_px)
    return overlap_add(preds, full_shape, window)


@dataclass
class StitchPlan:
    """Edge-padded extraction plan whose output footprints tile a region.

    The volume is edge-replicated by the footprint margins, so the padded
    input anchor equals the output anchor in region coordinates and every
    region pixel is covered.
    """

    grid: PatchGrid
    pads: tuple[tuple[int, int], tuple[int, int]]  # (axial, lateral) (lead, trail)


def plan_stitch(
    region_shape: tuple[int, int],
    ap: int,
    lp: int,
    stride_a: int | None = None,
    stride_l: int | None = None,
) -> StitchPlan:
    out_a, out_l = patch_output_shape(ap, lp)
    stride_a = stride_a if stride_a is not None else max(out_a // 2, 1)
    stride_l = stride_l if stride_l is not None else max(out_l // 2, 1)
    ma, ml = (ap - out_a) // 2, (lp - out_l) // 2
    pads = ((ma, ap - out_a - ma), (ml, lp - out_l - ml))
    padded = (region_shape[0] + sum(pads[0]), region_shape[1] + sum(pads[1]))
    grid = PatchGrid(
        ap=ap, lp=lp, stride_a=stride_a, stride_l=stride_l, region_shape=padded
    )
    return StitchPlan(grid=grid, pads=pads)


def padded_volume(data: np.ndarray, plan: StitchPlan) -> np.ndarray:
    (pa0, pa1), (pl0, pl1) = plan.pads
    return np.pad(data, ((0, 0), (pa0, pa1), (pl0, pl1)), mode="edge")


def stitch_patches(
    outputs: list[tuple[tuple[int, int], np.ndarray]],
    region_shape: tuple[int, int],
    plan: StitchPlan,
    alpha: float | tuple[float, float] = 0.5,
) -> np.ndarray:
    """Overlap-add patch outputs back onto the region grid.

    ``outputs`` carry the padded-volume input anchors, which equal the
    output anchors in region coordinates by construction of the plan.
    """
    window = tukey2d((plan.grid.out_a, plan.grid.out_l), alpha)
    return overlap_add(outputs, region_shape, window)
