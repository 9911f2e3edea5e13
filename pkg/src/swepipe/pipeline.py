"""Cascade inference (patches -> regions -> merged map -> denoiser) and
the evaluation report machinery."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import metrics, patchwork
from .checkpoint import load_into_model
from .denoiser import DenoiserConfig, DenoiserNet, build_denoiser
from .recon import ReconConfig, ReconNet, build_recon
from .swedio import Dataset, Sample

KPA_SCALE = 100.0  # modulus maps are regressed in units of 100 kPa


def load_recon(ckpt_path: str, rcfg: ReconConfig) -> ReconNet:
    net = build_recon(rcfg)
    net.meta = load_into_model(ckpt_path, net, rcfg.to_dict())
    net.eval()
    return net


def load_denoiser(ckpt_path: str, dcfg: DenoiserConfig) -> DenoiserNet:
    net = build_denoiser(dcfg)
    net.meta = load_into_model(ckpt_path, net, dcfg.to_dict())
    net.eval()
    return net


def load_net_auto(ckpt_path: str):
    """Rebuild a network from the config embedded in its checkpoint."""
    from .checkpoint import load_checkpoint

    _, _, meta = load_checkpoint(ckpt_path)
    cfg_dict = meta.get("config")
    if cfg_dict is None:
        raise ValueError(f"checkpoint {ckpt_path} carries no config record")
    if cfg_dict.get("kind") == "recon":
        return load_recon(ckpt_path, ReconConfig.from_dict(cfg_dict))
    if cfg_dict.get("kind") == "denoiser":
        return load_denoiser(ckpt_path, DenoiserConfig.from_dict(cfg_dict))
    raise ValueError(f"unknown checkpoint kind {cfg_dict.get('kind')!r}")


def _normalize(v: np.ndarray) -> np.ndarray:
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        raise ValueError("constant volume cannot be normalized")
    return ((v - lo) / (hi - lo)).astype(np.float32)


def reconstruct_region(net: ReconNet, volume: np.ndarray, cfg) -> np.ndarray:
    """Stage-1 estimate for one region volume (already raw um; normalized
    here). Patch mode stitches centered patch footprints with a Tukey
    window; full mode is a single forward pass."""
    data = _normalize(volume)
    t, a, l = data.shape
    if net.cfg.mode == "full":
        with torch.no_grad():
            y = net(torch.from_numpy(data).reshape(1, 1, t, a, l))
        return y[0, 0].numpy().astype(np.float64)

    ap, lp = net.cfg.input_shape[1], net.cfg.input_shape[2]
    stride = getattr(cfg, "patch_stride", None)
    plan = patchwork.plan_stitch(
        (a, l),
        ap,
        lp,
        stride_a=None if stride is None else stride[0],
        stride_l=None if stride is None else stride[1],
    )
    padded = patchwork.padded_volume(data, plan)
    patches = patchwork.extract_patches(padded, plan.grid)
    outputs = []
    batch = 32
    with torch.no_grad():
        for i in range(0, len(patches), batch):
            chunk = patches[i : i + batch]
            x = torch.from_numpy(np.stack([p for _, p in chunk])).unsqueeze(1)
            y = net(x).squeeze(1).numpy()
            outputs.extend(
                (anchor, y[j].astype(np.float64))
                for j, (anchor, _) in enumerate(chunk)
            )
    alpha = getattr(cfg, "tukey_alpha", net.cfg.tukey_alpha)
    return patchwork.stitch_patches(outputs, (a, l), plan, alpha)


def primary_reconstruction(net: ReconNet, sample: Sample, layout, cfg) -> np.ndarray:
    """Merged full-ROI primary map (normalized units) from all R regions."""
    region_maps = [
        reconstruct_region(net, sample.volumes[k], cfg)
        for k in range(layout.r_regions)
    ]
    alpha = getattr(cfg, "tukey_alpha", 0.5)
    window = patchwork.tukey2d(
        (layout.region_axial_px, layout.region_lateral_px), (0.0, alpha)
    )
    return patchwork.merge_regions(region_maps, layout, window)


@dataclass
class InferenceResult:
    y_prime_kpa: np.ndarray
    y_kpa: np.ndarray
    mask: np.ndarray  # sigmoid output in (0, 1)
    metrics: dict | None
    untrained: bool


def infer(
    recon_net: ReconNet,
    denoiser_net: DenoiserNet,
    sample: Sample,
    layout,
    cfg,
    with_metrics: bool = True,
) -> InferenceResult:
    y_prime = primary_reconstruction(recon_net, sample, layout, cfg)
    with torch.no_grad():
        out = denoiser_net(
            torch.from_numpy(y_prime.astype(np.float32)).reshape(
                1, 1, *y_prime.shape
            )
        )
    y = out.y[0, 0].numpy().astype(np.float64)
    mask = out.m[0, 0].numpy().astype(np.float64)
    untrained = (
        getattr(recon_net, "meta", {}).get("steps", 0) == 0
        or getattr(denoiser_net, "meta", {}).get("steps", 0) == 0
    )
    row = None
    if with_metrics:
        truth = sample.truth()
        row = metrics.sample_metrics(
            y_prime * KPA_SCALE,
            y * KPA_SCALE,
            mask,
            truth.modulus_map,
            truth.mask,
        )
        row["untrained"] = untrained
    return InferenceResult(
        y_prime_kpa=y_prime * KPA_SCALE,
        y_kpa=y * KPA_SCALE,
        mask=mask,
        metrics=row,
        untrained=untrained,
    )


def save_panel(result: InferenceResult, truth, path: str) -> None:
    """Side-by-side raster: truth | primary | denoised | mask."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    panels = [
        ("truth [kPa]", truth.modulus_map),
        ("primary [kPa]", result.y_prime_kpa),
        ("denoised [kPa]", result.y_kpa),
        ("mask", result.mask),
    ]
    vmax = max(truth.modulus_map.max(), result.y_kpa.max())
    fig, axes = plt.subplots(1, 4, figsize=(11, 3.2))
    for ax, (title, img) in zip(axes, panels):
        if title == "mask":
            im = ax.imshow(img, vmin=0, vmax=1, cmap="gray", aspect="auto")
        else:
            im = ax.imshow(img, vmin=0, vmax=vmax, cmap="viridis", aspect="auto")
        ax.set_title(title, fontsize=9)
        ax.axis("off")
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def evaluate(
    recon_net: ReconNet,
    denoiser_net: DenoiserNet,
    dataset: Dataset,
    out_dir: str,
    cfg,
    split: str = "test",
    plots: bool = True,
) -> dict:
    """Per-sample metric rows plus aggregates over one split; writes the
    text table, a JSON report, and one image panel per sample."""
    ids = [i for i, s in enumerate(dataset.samples) if s.split == split]
    if not ids:
        raise ValueError(f"split {split!r} is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in ids:
        sample = dataset.samples[i]
        result = infer(recon_net, denoiser_net, sample, dataset.layout, cfg)
        rows.append(result.metrics)
        if plots:
            save_panel(result, sample.truth(), out / f"sample_{i:05d}.png")
    table = metrics.format_metric_table(rows, [str(i) for i in ids])
    (out / "metrics.txt").write_text(table + "\n")
    report = {
        "split": split,
        "n": len(ids),
        "sample_ids": ids,
        "rows": [_jsonable(r) for r in rows],
        "aggregate": metrics.aggregate_metrics(rows),
    }
    (out / "report.json").write_text(json.dumps(report, indent=1))
    return report


def _jsonable(row: dict) -> dict:
    out = {}
    for k, v in row.items():
        if isinstance(v, float) and math.isinf(v):
            out[k] = "inf" if v > 0 else "-inf"
        else:
            out[k] = v
    return out
