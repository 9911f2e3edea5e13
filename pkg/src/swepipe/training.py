"""Training drivers for both stages: Adam + reduce-on-plateau, per-epoch
validation, best-by-val checkpointing, deterministic under a fixed seed."""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import losses, patchwork
from .checkpoint import config_fingerprint, save_checkpoint
from .denoiser import DenoiserConfig, build_denoiser
from .recon import ReconConfig, build_recon
from .swedio import Dataset, Sample, read_tensor, write_tensor


class DivergenceError(RuntimeError):
    """Loss became non-finite; a diagnostic snapshot is saved first."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot


class PlateauScheduler:
    """Multiply lr by ``factor`` once the monitored value has failed to
    improve for ``patience`` consecutive epochs; never mid-epoch."""

    def __init__(self, optimizer, factor=0.8, patience=5):
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.best = math.inf
        self.bad_epochs = 0

    @property
    def lr(self):
        return self.optimizer.param_groups[0]["lr"]

    def step(self, value):
        if value < self.best:
            self.best = value
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            for group in self.optimizer.param_groups:
                group["lr"] *= self.factor
            self.bad_epochs = 0
            return True
        return False


@dataclass
class TrainConfig:
    stage: str = "recon"  # recon | denoiser
    mode: str = "patch"  # full | patch (recon only)
    batch: int | None = None  # default 8 for recon, 16 for denoiser
    lr: float = 1e-3
    scheduler_factor: float = 0.8
    scheduler_patience: int = 5
    epochs: int = 150
    max_steps: int | None = None
    seed: int = 0
    checkpoint_dir: str = "runs"
    device: str | None = None  # None: SWEPIPE_DEVICE env var, else cpu
    # network sizes
    base_channels: int | None = None  # default 16 recon / 64 denoiser
    blocks_per_stage: tuple[int, int, int] = (3, 4, 6)
    # patch geometry (recon patch mode)
    patch_ap: int = 63
    patch_lp: int = 10
    patch_stride: tuple[int, int] | None = None  # None: output footprint size
    tukey_alpha: float = 0.5
    # loss weights (denoiser); alpha ratio derived from the train masks
    kappa: float = 0.5
    beta2: float = 50.0
    gamma: float = 10.0
    mu: float = 1.0
    # denoiser input source: predicted primary maps or noise-corrupted truth
    input_source: str = "predicted"  # predicted | truth-corrupted
    truth_noise_sigma: float = 0.05
    train_split: str = "train"
    val_split: str = "val"

    def resolve_batch(self):
        if self.batch is not None:
            return self.batch
        return 8 if self.stage == "recon" else 16

    def resolve_channels(self):
        if self.base_channels is not None:
            return self.base_channels
        return 16 if self.stage == "recon" else 64

    def resolve_device(self):
        if self.device:
            return self.device
        return os.environ.get("SWEPIPE_DEVICE", "cpu")


@dataclass
class RunReport:
    stage: str
    config: dict
    fingerprint: str
    epochs: list[dict] = field(default_factory=list)  # per-epoch loss terms
    best_epoch: int = -1
    best_val: float = math.inf
    steps: int = 0
    wall_clock_s: float = 0.0
    checkpoint_path: str = ""
    metrics: dict = field(default_factory=dict)

    def save(self, path):
        Path(path).write_text(json.dumps(self.__dict__, indent=1, default=str))


def normalize_volume(v: np.ndarray) -> np.ndarray:
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        raise ValueError("constant volume cannot be normalized")
    return ((v - lo) / (hi - lo)).astype(np.float32)


def truth_region_norm(sample: Sample, layout, k: int) -> np.ndarray:
    truth = sample.truth()
    sl = layout.region_slice(k)
    return (truth.modulus_map[: layout.region_axial_px, sl] / 100.0).astype(np.float32)


class PatchIndex:
    """Flat index of (sample, region, anchor) patch records over a split,
    with normalized padded volumes and truth regions held in memory."""

    def __init__(self, dataset: Dataset, samples: list[Sample], cfg: TrainConfig):
        layout = dataset.layout
        shape = (layout.region_axial_px, layout.region_lateral_px)
        stride = cfg.patch_stride
        self.plan = patchwork.plan_stitch(
            shape,
            cfg.patch_ap,
            cfg.patch_lp,
            stride_a=None if stride is None else stride[0],
            stride_l=None if stride is None else stride[1],
        )
        self.out_a, self.out_l = self.plan.grid.out_a, self.plan.grid.out_l
        self.volumes = []  # padded normalized (T, A+pad, L+pad)
        self.truths = []  # (A, L) kPa/100
        self.records = []
        for si, s in enumerate(samples):
            for k in range(layout.r_regions):
                vi = len(self.volumes)
                self.volumes.append(
                    patchwork.padded_volume(normalize_volume(s.volumes[k]), self.plan)
                )
                self.truths.append(truth_region_norm(s, layout, k))
                for anchor in self.plan.grid.anchors:
                    self.records.append((vi, anchor))

    def __len__(self):
        return len(self.records)

    def item(self, i):
        vi, (a, l) = self.records[i]
        ap, lp = self.plan.grid.ap, self.plan.grid.lp
        x = self.volumes[vi][:, a : a + ap, l : l + lp]
        y = self.truths[vi][a : a + self.out_a, l : l + self.out_l]
        return x, y


class FullIndex:
    """One record per (sample, region) for full-volume training."""

    def __init__(self, dataset: Dataset, samples: list[Sample]):
        layout = dataset.layout
        self.volumes = []
        self.truths = []
        for s in samples:
            for k in range(layout.r_regions):
                self.volumes.append(normalize_volume(s.volumes[k]))
                self.truths.append(truth_region_norm(s, layout, k))

    def __len__(self):
        return len(self.volumes)

    def item(self, i):
        return self.volumes[i], self.truths[i]


def make_batch(index, indices):
    xs, ys = zip(*(index.item(i) for i in indices))
    x = torch.from_numpy(np.stack(xs)).unsqueeze(1)
    y = torch.from_numpy(np.stack(ys)).unsqueeze(1)
    return x, y


class QuotaSampler:
    """Per-epoch record order over several indexes: the first index
    contributes everything, each extra index a fixed quota of records
    drawn fresh every epoch."""

    def __init__(self, indexes, quotas, seed):
        assert len(quotas) == len(indexes) - 1
        self.indexes = indexes
        self.quotas = quotas
        self.seed = seed

    def epoch_order(self, epoch):
        rng = np.random.default_rng((self.seed + 1) * 100_000 + epoch)
        pairs = [(0, int(i)) for i in rng.permutation(len(self.indexes[0]))]
        for di, quota in enumerate(self.quotas, start=1):
            order = rng.permutation(len(self.indexes[di]))
            pairs += [(di, int(i)) for i in order[: min(quota, len(order))]]
        rng.shuffle(pairs)
        return pairs

    def batch(self, pairs):
        xs, ys = [], []
        for di, i in pairs:
            x, y = self.indexes[di].item(i)
            xs.append(x)
            ys.append(y)
        x = torch.from_numpy(np.stack(xs)).unsqueeze(1)
        y = torch.from_numpy(np.stack(ys)).unsqueeze(1)
        return x, y


def _diverged_snapshot(ckpt_dir, net, cfg_dict, epoch, step):
    path = Path(ckpt_dir) / "diverged.swec"
    save_checkpoint(
        path, net.state_dict(), cfg_dict,
        {"epoch": epoch, "step": step, "config": cfg_dict, "diverged": True},
    )
    return str(path)


def train_recon(
    cfg: TrainConfig, dataset: Dataset, extra_datasets: list[tuple[Dataset, int]] = ()
) -> tuple[str, RunReport]:
    """Optimize the reconstruction MAE; returns (checkpoint path, report).

    ``extra_datasets`` are (dataset, per-epoch sample quota) pairs mixed
    into each epoch alongside the primary dataset's full train split.
    """
    t0 = time.time()
    torch.manual_seed(cfg.seed)
    device = cfg.resolve_device()
    layout = dataset.layout
    t_frames = layout.frames_t

    if cfg.mode == "patch":
        input_shape = (t_frames, cfg.patch_ap, cfg.patch_lp)
    else:
        input_shape = (t_frames, layout.region_axial_px, layout.region_lateral_px)
    rcfg = ReconConfig(
        mode=cfg.mode,
        input_shape=input_shape,
        base_channels=cfg.resolve_channels(),
        seed=cfg.seed,
        tukey_alpha=cfg.tukey_alpha,
    )
    net = build_recon(rcfg).to(device)
    cfg_dict = rcfg.to_dict()

    def make_index(ds, samples):
        if cfg.mode == "patch":
            return PatchIndex(ds, samples, cfg)
        return FullIndex(ds, samples)

    train_samples = dataset.split(cfg.train_split)
    if not train_samples:
        raise ValueError(f"no samples in split {cfg.train_split!r}")
    val_samples = dataset.split(cfg.val_split) or train_samples
    indexes = [make_index(dataset, train_samples)]
    quotas = []
    for extra, quota in extra_datasets:
        indexes.append(make_index(extra, extra.split(cfg.train_split)))
        quotas.append(quota)
    sampler = QuotaSampler(indexes, quotas, cfg.seed)
    val_idx = make_index(dataset, val_samples)

    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    sched = PlateauScheduler(opt, cfg.scheduler_factor, cfg.scheduler_patience)
    report = RunReport(
        stage="recon", config=cfg_dict, fingerprint=config_fingerprint(cfg_dict)
    )
    ckpt_dir = Path(cfg.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = ckpt_dir / "recon.swec"

    batch_size = cfg.resolve_batch()
    step = 0
    stop = False
    for epoch in range(cfg.epochs):
        net.train()
        order = sampler.epoch_order(epoch)
        train_losses = []
        for i in range(0, len(order), batch_size):
            x, y = sampler.batch(order[i : i + batch_size])
            x, y = x.to(device), y.to(device)
            opt.zero_grad()
            loss = losses.recon_mae(net(x), y)
            if not torch.isfinite(loss):
                snap = _diverged_snapshot(ckpt_dir, net, cfg_dict, epoch, step)
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch} step {step}", snapshot=snap
                )
            loss.backward()
            opt.step()
            train_losses.append(float(loss.detach()))
            step += 1
            if cfg.max_steps is not None and step >= cfg.max_steps:
                stop = True
                break
        val = _validate_recon(net, val_idx, max(batch_size, 4) * 4, device)
        report.epochs.append(
            {
                "epoch": epoch,
                "train_mae": float(np.mean(train_losses)) if train_losses else math.nan,
                "val_mae": val,
                "lr": sched.lr,
            }
        )
        if val < report.best_val:
            report.best_val = val
            report.best_epoch = epoch
            save_checkpoint(
                ckpt_path,
                net.state_dict(),
                cfg_dict,
                {"epoch": epoch, "val": val, "steps": step, "config": cfg_dict},
            )
        sched.step(val)
        if stop:
            break
    report.steps = step
    report.wall_clock_s = time.time() - t0
    report.checkpoint_path = str(ckpt_path)
    return str(ckpt_path), report


def _validate_recon(net, idx, batch_size, device):
    net.eval()
    total, n = 0.0, 0
    with torch.no_grad():
        for i in range(0, len(idx), batch_size):
            x, y = make_batch(idx, range(i, min(i + batch_size, len(idx))))
            x, y = x.to(device), y.to(device)
            mae = losses.recon_mae(net(x), y)
            total += float(mae) * x.shape[0]
            n += x.shape[0]
    return total / max(n, 1)


def cache_primary_maps(
    recon_ckpt: str,
    rcfg: ReconConfig,
    dataset: Dataset,
    out_dir: str,
    cfg: TrainConfig,
) -> dict[int, str]:
    """Run stage-1 inference over the whole dataset and persist the merged
    primary maps, one tensor file per sample id."""
    from .pipeline import load_recon, primary_reconstruction

    net = load_recon(recon_ckpt, rcfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for i, sample in enumerate(dataset.samples):
        y_prime = primary_reconstruction(net, sample, dataset.layout, cfg)
        p = out / f"yprime_{i:05d}.swed"
        write_tensor(p, y_prime.astype(np.float32))
        paths[i] = str(p)
    (out / "cache.json").write_text(
        json.dumps({"recon_ckpt": recon_ckpt, "files": {str(k): v for k, v in paths.items()}})
    )
    return paths


def load_primary_cache(cache_dir: str, dataset: Dataset) -> dict[int, np.ndarray]:
    meta_path = Path(cache_dir) / "cache.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"no primary-map cache at {cache_dir}")
    meta = json.loads(meta_path.read_text())
    return {
        int(k): read_tensor(Path(cache_dir) / Path(v).name)
        for k, v in meta["files"].items()
    }


def train_denoiser(
    cfg: TrainConfig,
    dataset: Dataset,
    primary_maps: dict[int, np.ndarray] | None = None,
) -> tuple[str, RunReport]:
    """Optimize the compound loss on (primary map -> truth, mask) pairs."""
    t0 = time.time()
    torch.manual_seed(cfg.seed)
    device = cfg.resolve_device()
    layout = dataset.layout

    train_ids = [i for i, s in enumerate(dataset.samples) if s.split == cfg.train_split]
    val_ids = [i for i, s in enumerate(dataset.samples) if s.split == cfg.val_split]
    if not train_ids:
        raise ValueError(f"no samples in split {cfg.train_split!r}")
    if not val_ids:
        val_ids = train_ids

    if cfg.input_source == "predicted":
        if primary_maps is None:
            raise ValueError(
                "denoiser training needs primary maps: pass a cache or train "
                "the reconstruction stage first"
            )
        inputs = primary_maps
    elif cfg.input_source == "truth-corrupted":
        rng = np.random.default_rng(cfg.seed)
        inputs = {}
        for i, s in enumerate(dataset.samples):
            t = (s.truth().modulus_map / 100.0).astype(np.float32)
            inputs[i] = t + rng.normal(0, cfg.truth_noise_sigma, t.shape).astype(
                np.float32
            )
    else:
        raise ValueError(f"unknown input source {cfg.input_source!r}")

    truths, masks = {}, {}
    for i, s in enumerate(dataset.samples):
        tr = s.truth()
        truths[i] = (tr.modulus_map / 100.0).astype(np.float32)
        masks[i] = tr.mask.astype(np.float32)

    w = losses.LossWeights.from_masks(
        [masks[i] for i in train_ids],
        ratio_source=f"{cfg.train_split}[{len(train_ids)}]",
        kappa=cfg.kappa,
        beta2=cfg.beta2,
        gamma=cfg.gamma,
        mu=cfg.mu,
    )

    dcfg = DenoiserConfig(
        base_channels=cfg.resolve_channels(),
        blocks_per_stage=cfg.blocks_per_stage,
        seed=cfg.seed,
    )
    net = build_denoiser(dcfg).to(device)
    cfg_dict = dcfg.to_dict()
    report = RunReport(
        stage="denoiser", config=cfg_dict, fingerprint=config_fingerprint(cfg_dict)
    )
    report.metrics["loss_weights"] = w.to_dict()

    def tensors_for(ids):
        x = torch.from_numpy(
            np.stack([inputs[i] for i in ids]).astype(np.float32)
        ).unsqueeze(1)
        y = torch.from_numpy(np.stack([truths[i] for i in ids])).unsqueeze(1)
        m = torch.from_numpy(np.stack([masks[i] for i in ids])).unsqueeze(1)
        return x.to(device), y.to(device), m.to(device)

    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    sched = PlateauScheduler(opt, cfg.scheduler_factor, cfg.scheduler_patience)
    ckpt_dir = Path(cfg.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = ckpt_dir / "denoiser.swec"

    batch_size = cfg.resolve_batch()
    term_keys = ("denoise", "fuse", "fuse_mae", "fuse_ncc", "tv", "iou", "total")
    step = 0
    stop = False
    for epoch in range(cfg.epochs):
        net.train()
        order = np.random.default_rng((cfg.seed + 1) * 100_000 + epoch).permutation(
            len(train_ids)
        )
        sums = {k: 0.0 for k in term_keys}
        nb = 0
        for i in range(0, len(order), batch_size):
            ids = [train_ids[j] for j in order[i : i + batch_size]]
            x, y, m = tensors_for(ids)
            opt.zero_grad()
            out = net(x)
            total, breakdown = losses.compound_loss(out, y, m, w)
            if not torch.isfinite(total):
                snap = _diverged_snapshot(ckpt_dir, net, cfg_dict, epoch, step)
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch} step {step}", snapshot=snap
                )
            total.backward()
            opt.step()
            for k in term_keys:
                sums[k] += float(breakdown[k].detach())
            nb += 1
            step += 1
            if cfg.max_steps is not None and step >= cfg.max_steps:
                stop = True
                break
        net.eval()
        with torch.no_grad():
            xv, yv, mv = tensors_for(val_ids)
            val_total, _ = losses.compound_loss(net(xv), yv, mv, w)
        val = float(val_total)
        entry = {"epoch": epoch, "val_loss": val, "lr": sched.lr}
        entry.update({f"train_{k}": sums[k] / max(nb, 1) for k in term_keys})
        report.epochs.append(entry)
        if val < report.best_val:
            report.best_val = val
            report.best_epoch = epoch
            save_checkpoint(
                ckpt_path,
                net.state_dict(),
                cfg_dict,
                {"epoch": epoch, "val": val, "steps": step, "config": cfg_dict},
            )
        sched.step(val)
        if stop:
            break
    report.steps = step
    report.wall_clock_s = time.time() - t0
    report.checkpoint_path = str(ckpt_path)
    return str(ckpt_path), report
