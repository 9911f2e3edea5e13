"""Bi-level circular-inclusion phantom generation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class PhantomGeometryError(ValueError):
    """Inclusion disc does not fit inside the ROI."""


@dataclass
class PhantomSpec:
    """Geometry and stiffness of one synthetic phantom.

    All lengths in mm, stiffness in kPa, density in kg/m^3. The truth
    grid is ``roi_axial_mm * axial_res`` by ``roi_lateral_mm *
    lateral_res_grid`` pixels.
    """

    roi_axial_mm: float = 21.0
    roi_lateral_mm: float = 40.0
    axial_res: float = 8.0
    lateral_res_grid: float = 1.0
    inclusion_center: tuple[float, float] = (10.5, 20.0)  # (axial, lateral) mm
    inclusion_diameter_mm: float = 8.0
    e_inclusion_kpa: float = 40.0
    e_background_kpa: float = 20.0
    density_kg_m3: float = 1000.0
    seed: int = 0

    def __post_init__(self):
        if self.e_inclusion_kpa <= 0 or self.e_background_kpa <= 0:
            raise ValueError("stiffness values must be strictly positive")
        if self.density_kg_m3 <= 0:
            raise ValueError("density must be strictly positive")
        if self.inclusion_diameter_mm <= 0:
            raise ValueError("inclusion diameter must be strictly positive")
        self._check_margins()

    def _check_margins(self):
        cz, cx = self.inclusion_center
        r = self.inclusion_diameter_mm / 2.0
        margins = {
            "axial-top": cz - r,
            "axial-bottom": self.roi_axial_mm - (cz + r),
            "lateral-left": cx - r,
            "lateral-right": self.roi_lateral_mm - (cx + r),
        }
        for name, m in margins.items():
            if m < 0:
                raise PhantomGeometryError(
                    f"inclusion violates {name} margin by {-m:.3f} mm"
                )

    @property
    def grid_shape(self) -> tuple[int, int]:
        a = int(round(self.roi_axial_mm * self.axial_res))
        l = int(round(self.roi_lateral_mm * self.lateral_res_grid))
        return a, l

    def to_dict(self) -> dict:
        return {
            "roi_axial_mm": self.roi_axial_mm,
            "roi_lateral_mm": self.roi_lateral_mm,
            "axial_res": self.axial_res,
            "lateral_res_grid": self.lateral_res_grid,
            "inclusion_center": list(self.inclusion_center),
            "inclusion_diameter_mm": self.inclusion_diameter_mm,
            "e_inclusion_kpa": self.e_inclusion_kpa,
            "e_background_kpa": self.e_background_kpa,
            "density_kg_m3": self.density_kg_m3,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        d = dict(d)
        d["inclusion_center"] = tuple(d["inclusion_center"])
        return cls(**d)


@dataclass
class PhantomTruth:
    """Rasterized ground truth: bi-level modulus map (kPa) and inclusion mask."""

    modulus_map: np.ndarray
    mask: np.ndarray
    spec: PhantomSpec = field(repr=False)


def pixel_centers_mm(n: int, res: float) -> np.ndarray:
    """Physical coordinate of each pixel center for n pixels at res px/mm."""
    return (np.arange(n) + 0.5) / res


def make_phantom(spec: PhantomSpec) -> PhantomTruth:
    """Rasterize a bi-level phantom; a pixel is inclusion iff its center
    lies inside the disc."""
    a, l = spec.grid_shape
    z = pixel_centers_mm(a, spec.axial_res)
    x = pixel_centers_mm(l, spec.lateral_res_grid)
    cz, cx = spec.inclusion_center
    r = spec.inclusion_diameter_mm / 2.0
    dist2 = (z[:, None] - cz) ** 2 + (x[None, :] - cx) ** 2
    mask = dist2 <= r * r
    modulus = np.where(mask, spec.e_inclusion_kpa, spec.e_background_kpa)
    return PhantomTruth(
        modulus_map=modulus.astype(np.float64),
        mask=mask.astype(np.uint8),
        spec=spec,
    )


def random_spec(
    rng: np.random.Generator,
    *,
    roi_axial_mm: float = 21.0,
    roi_lateral_mm: float = 40.0,
    axial_res: float = 8.0,
    lateral_res_grid: float = 1.0,
    diameter_range_mm: tuple[float, float] = (3.0, 12.0),
    e_inclusion_kpa: float | None = None,
    e_inclusion_range_kpa: tuple[float, float] = (8.0, 100.0),
    e_background_range_kpa: tuple[float, float] = (10.0, 35.0),
    seed: int = 0,
) -> PhantomSpec:
    """Draw a random phantom: diameter, position and stiffness are uniform
    within their ranges, the disc kept fully inside the ROI."""
    lo_d, hi_d = diameter_range_mm
    hi_d = min(hi_d, roi_axial_mm, roi_lateral_mm)
    d = float(rng.uniform(lo_d, hi_d))
    r = d / 2.0
    cz = float(rng.uniform(r, roi_axial_mm - r))
    cx = float(rng.uniform(r, roi_lateral_mm - r))
    if e_inclusion_kpa is None:
        e_inclusion_kpa = float(rng.uniform(*e_inclusion_range_kpa))
    e_bg = float(rng.uniform(*e_background_range_kpa))
    return PhantomSpec(
        roi_axial_mm=roi_axial_mm,
        roi_lateral_mm=roi_lateral_mm,
        axial_res=axial_res,
        lateral_res_grid=lateral_res_grid,
        inclusion_center=(cz, cx),
        inclusion_diameter_mm=d,
        e_inclusion_kpa=float(e_inclusion_kpa),
        e_background_kpa=e_bg,
        seed=seed,
    )
