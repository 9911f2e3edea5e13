"""Dataset generation: random phantoms, per-region simulation, noise."""

from __future__ import annotations

import math

import numpy as np

from . import phantoms, simulate, swedio


def simulate_sample(
    spec: phantoms.PhantomSpec,
    layout: simulate.RegionLayout,
    arf: simulate.ArfConfig,
    snr_db: float = math.inf,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """All R region volumes of one phantom, stacked (R, T, A, L), raw um."""
    truth = phantoms.make_phantom(spec)
    vols = []
    for k in range(layout.r_regions):
        vol = simulate.simulate_region(truth, layout, k, arf)
        vol = simulate.add_noise(vol, snr_db, rng)
        vols.append(vol.data)
    return np.stack(vols, axis=0)


def spec_for_preset(preset: str, rng: np.random.Generator, **kw) -> phantoms.PhantomSpec:
    layout, _ = [f() for f in simulate.PRESETS[preset]]
    axial_mm = layout.region_axial_px / 8.0
    lateral_mm = float(layout.full_lateral_px)
    dmax = 12.0 if preset == "paper" else min(axial_mm, lateral_mm) * 0.75
    return phantoms.random_spec(
        rng,
        roi_axial_mm=axial_mm,
        roi_lateral_mm=lateral_mm,
        diameter_range_mm=(3.0, dmax),
        **kw,
    )


def generate_dataset(
    n: int,
    snr_db: float = math.inf,
    seed: int = 0,
    preset: str = "paper",
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15),
) -> swedio.Dataset:
    """n random phantoms with simulated multi-push motion, split into
    train/val/test with disjoint inclusion stiffness values."""
    if preset not in simulate.PRESETS:
        raise ValueError(f"unknown preset {preset!r}")
    layout_fn, arf_fn = simulate.PRESETS[preset]
    layout, arf = layout_fn(), arf_fn()
    rng = np.random.default_rng(seed)
    pools = swedio.stiffness_pools(rng, fractions=split_fractions)

    counts = _split_counts(n, split_fractions)
    samples = []
    idx = 0
    for split, count in counts.items():
        pool = pools[split]
        for _ in range(count):
            sample_seed = seed + idx
            sample_rng = np.random.default_rng(sample_seed)
            e_inc = float(pool[int(sample_rng.integers(len(pool)))])
            spec = spec_for_preset(
                preset, sample_rng, e_inclusion_kpa=e_inc, seed=sample_seed
            )
            vols = simulate_sample(spec, layout, arf, snr_db, sample_rng)
            samples.append(
                swedio.Sample(
                    spec=spec,
                    volumes=vols,
                    seed=sample_seed,
                    snr_db=snr_db,
                    split=split,
                )
            )
            idx += 1
    return swedio.Dataset(layout=layout, arf=arf, samples=samples)


def _split_counts(n: int, fractions) -> dict[str, int]:
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    return {"train": n_train, "val": n_val, "test": n - n_train - n_val}
