"""Analytic multi-push shear-wave motion surrogate.

Each region sees one laterally offset push. Per depth row, a Gaussian
temporal pulse travels away from the push center at the local speed
v = sqrt(E / (3 rho)); the arrival time is the line integral of 1/v
along the lateral path, the amplitude carries the axial force envelope
and 1/sqrt(distance) spreading. No refraction or reflection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .phantoms import PhantomTruth, pixel_centers_mm

# floor on the geometric-decay distance, mm
DECAY_DIST_FLOOR_MM = 0.25
# reference peak displacement (um) at the decay floor for the default a0
REF_PEAK_UM = 20.0
REF_A0 = 2e5


class SimulationError(ValueError):
    pass


class InsufficientFramesError(SimulationError):
    """Raw frame budget (prop_time * prf) shorter than the frames requested."""


class DegenerateVolumeError(ValueError):
    """Constant volume cannot be min-max normalized."""


@dataclass
class ArfConfig:
    """Acoustic-radiation-force push and tracking-sequence parameters."""

    a0_n_per_m3: float = 2e5
    sigma_x_mm: float = 0.44
    sigma_z_mm: float = 8.0
    focus: tuple[float, float] | None = None  # (z0 mm, x0 mm); None = ROI middle
    push_duration_us: float = 400.0
    prop_time_ms: float = 8.0
    prf_hz: float = 8000.0
    lateral_offset_mm: float = 4.0

    def __post_init__(self):
        if self.sigma_x_mm <= 0 or self.sigma_z_mm <= 0:
            raise ValueError("sigma values must be strictly positive")
        if self.push_duration_us <= 0 or self.prop_time_ms <= 0 or self.prf_hz <= 0:
            raise ValueError("timing parameters must be strictly positive")

    @property
    def raw_frames(self) -> int:
        return int(math.floor(self.prop_time_ms * 1e-3 * self.prf_hz))

    def to_dict(self) -> dict:
        return {
            "a0_n_per_m3": self.a0_n_per_m3,
            "sigma_x_mm": self.sigma_x_mm,
            "sigma_z_mm": self.sigma_z_mm,
            "focus": list(self.focus) if self.focus is not None else None,
            "push_duration_us": self.push_duration_us,
            "prop_time_ms": self.prop_time_ms,
            "prf_hz": self.prf_hz,
            "lateral_offset_mm": self.lateral_offset_mm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArfConfig":
        d = dict(d)
        if d.get("focus") is not None:
            d["focus"] = tuple(d["focus"])
        return cls(**d)


@dataclass
class RegionLayout:
    """Geometry of the R overlapping push regions on the full truth grid."""

    r_regions: int = 4
    region_axial_px: int = 168
    region_lateral_px: int = 16
    lateral_offsets_px: tuple[int, ...] = (0, 8, 16, 24)
    full_lateral_px: int = 40
    frames_t: int = 70
    push_lateral_mm: tuple[float, ...] | None = None  # None: derived from offsets

    def __post_init__(self):
        offs = self.lateral_offsets_px
        if len(offs) != self.r_regions:
            raise ValueError("need one lateral offset per region")
        if any(b <= a for a, b in zip(offs, offs[1:])):
            raise ValueError("lateral offsets must be strictly increasing")
        w = self.region_lateral_px
        if offs[0] != 0 or offs[-1] + w < self.full_lateral_px:
            raise ValueError("region extents must cover the full lateral span")
        for a, b in zip(offs, offs[1:]):
            if a + w - b < 1:
                raise ValueError("consecutive regions must overlap by >= 1 px")

    def region_slice(self, k: int) -> slice:
        off = self.lateral_offsets_px[k]
        return slice(off, off + self.region_lateral_px)

    def to_dict(self) -> dict:
        return {
            "r_regions": self.r_regions,
            "region_axial_px": self.region_axial_px,
            "region_lateral_px": self.region_lateral_px,
            "lateral_offsets_px": list(self.lateral_offsets_px),
            "full_lateral_px": self.full_lateral_px,
            "frames_t": self.frames_t,
            "push_lateral_mm": (
                list(self.push_lateral_mm) if self.push_lateral_mm is not None else None
            ),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegionLayout":
        d = dict(d)
        d["lateral_offsets_px"] = tuple(d["lateral_offsets_px"])
        if d.get("push_lateral_mm") is not None:
            d["push_lateral_mm"] = tuple(d["push_lateral_mm"])
        return cls(**d)


@dataclass
class MotionVolume:
    """One region's displacement stack, frames x axial x lateral.

    Values are um before normalization and [0, 1] after;
    ``norm_bounds`` keeps the (min, max) pair once normalized.
    """

    data: np.ndarray
    region_index: int
    layout: RegionLayout = field(repr=False)
    snr_db: float = math.inf
    push_x_mm: float = 0.0
    lateral_pitch_mm: float = 1.0
    prf_hz: float = 8000.0
    truncated: bool = False  # frame budget ended before the slowest arrival
    norm_bounds: tuple[float, float] | None = None

    def copy_with(self, **kw) -> "MotionVolume":
        return replace(self, **kw)


def shear_speed_m_s(e_kpa: np.ndarray | float, density: float) -> np.ndarray | float:
    """v = sqrt(E / (3 rho)) with E in kPa, rho in kg/m^3."""
    return np.sqrt(np.asarray(e_kpa, dtype=np.float64) * 1e3 / (3.0 * density))


def simulate_region(
    truth: PhantomTruth,
    layout: RegionLayout,
    k: int,
    arf: ArfConfig,
) -> MotionVolume:
    """Synthesize the displacement volume for region k of a phantom."""
    if not 0 <= k < layout.r_regions:
        raise ValueError(f"region index {k} out of range")
    spec = truth.spec
    a_px, l_px = truth.modulus_map.shape
    if a_px < layout.region_axial_px or l_px < layout.full_lateral_px:
        raise SimulationError("truth grid does not cover the region extent")
    if np.any(truth.modulus_map <= 0):
        raise SimulationError("non-positive modulus in phantom")

    t_frames = layout.frames_t
    if arf.raw_frames < t_frames:
        raise InsufficientFramesError(
            f"{arf.raw_frames} raw frames from prop_time {arf.prop_time_ms} ms "
            f"at {arf.prf_hz} Hz, but {t_frames} requested; raise prop_time"
        )

    pitch = 1.0 / spec.lateral_res_grid
    x_cols = pixel_centers_mm(l_px, spec.lateral_res_grid)
    z_rows = pixel_centers_mm(layout.region_axial_px, spec.axial_res)

    if layout.push_lateral_mm is not None:
        push_x = layout.push_lateral_mm[k]
    else:
        push_x = layout.lateral_offsets_px[k] * pitch - arf.lateral_offset_mm
    z0 = arf.focus[0] if arf.focus is not None else spec.roi_axial_mm / 2.0

    sl = layout.region_slice(k)
    e_rows = truth.modulus_map[: layout.region_axial_px, :]  # kPa, full lateral
    v_rows = shear_speed_m_s(e_rows, spec.density_kg_m3)  # m/s

    # arrival time per column: integrate slowness rightward from the push
    # center, sampling the clamped nearest column (push sits left of the grid)
    step_mm = pitch
    slowness = step_mm / v_rows  # ms per column step (mm / (m/s) = ms)
    first_leg = (x_cols[0] - push_x) / v_rows[:, 0]  # push -> first column
    arrival = np.concatenate(
        [first_leg[:, None], first_leg[:, None] + np.cumsum(slowness[:, :-1], axis=1)],
        axis=1,
    )  # (A, L') ms

    dist_mm = x_cols[None, :] - push_x  # > 0 everywhere on the grid
    envelope = np.exp(-((z_rows - z0) ** 2) / (2.0 * arf.sigma_z_mm**2))
    amp = (
        REF_PEAK_UM
        * (arf.a0_n_per_m3 / REF_A0)
        * envelope[:, None]
        / np.sqrt(np.maximum(dist_mm, DECAY_DIST_FLOOR_MM) / DECAY_DIST_FLOOR_MM)
    )

    sigma_t = arf.push_duration_us * 1e-3 / 2.0  # ms
    t = np.arange(t_frames) / arf.prf_hz * 1e3  # ms

    arr_k = arrival[:, sl]
    amp_k = amp[:, sl]
    pulse = np.exp(
        -((t[:, None, None] - arr_k[None, :, :]) ** 2) / (2.0 * sigma_t**2)
    )
    data = (amp_k[None, :, :] * pulse).astype(np.float32)

    truncated = bool(np.max(arr_k) > t[-1])
    return MotionVolume(
        data=data,
        region_index=k,
        layout=layout,
        snr_db=math.inf,
        push_x_mm=push_x,
        lateral_pitch_mm=pitch,
        prf_hz=arf.prf_hz,
        truncated=truncated,
    )


def add_noise(
    vol: MotionVolume, snr_db: float, rng: np.random.Generator | None = None
) -> MotionVolume:
    """Add zero-mean white Gaussian noise at the requested SNR.

    sigma = rms(signal) * 10^(-snr_db/20); snr_db = inf returns an
    identical copy.
    """
    if not np.all(np.isfinite(vol.data)):
        raise ValueError("volume contains non-finite values")
    if math.isinf(snr_db):
        return vol.copy_with(data=vol.data.copy(), snr_db=math.inf)
    rng = rng if rng is not None else np.random.default_rng()
    rms = float(np.sqrt(np.mean(vol.data.astype(np.float64) ** 2)))
    sigma = rms * 10.0 ** (-snr_db / 20.0)
    noisy = vol.data + rng.normal(0.0, sigma, size=vol.data.shape).astype(np.float32)
    return vol.copy_with(data=noisy, snr_db=float(snr_db))


def min_max_normalize(vol: MotionVolume) -> MotionVolume:
    """Map values affinely onto [0, 1], keeping the (min, max) pair."""
    lo = float(vol.data.min())
    hi = float(vol.data.max())
    if hi <= lo:
        raise DegenerateVolumeError("constant volume: min == max")
    data = ((vol.data - lo) / (hi - lo)).astype(np.float32)
    return vol.copy_with(data=data, norm_bounds=(lo, hi))


# presets: "paper" is the full-scale default geometry, "desk" a small
# configuration for CPU-speed tests
def paper_layout() -> RegionLayout:
    return RegionLayout()


def paper_arf() -> ArfConfig:
    # prop_time raised to 9 ms so 70 frames fit at 8 kHz
    return ArfConfig(prop_time_ms=9.0)


def desk_layout() -> RegionLayout:
    return RegionLayout(
        r_regions=2,
        region_axial_px=64,
        region_lateral_px=16,
        lateral_offsets_px=(0, 8),
        full_lateral_px=24,
        frames_t=32,
    )


def desk_arf() -> ArfConfig:
    # slower tracking rate so 32 frames still span the whole region for
    # soft (slow) media
    return ArfConfig(prop_time_ms=8.0, prf_hz=4000.0)


PRESETS = {
    "paper": (paper_layout, paper_arf),
    "desk": (desk_layout, desk_arf),
}
