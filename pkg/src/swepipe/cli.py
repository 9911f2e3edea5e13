"""Command-line entry point: gen, train-recon, train-denoiser, infer, eval,
report. Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric divergence."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from .config import ConfigError, coerce, load_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


def _parse_snr(text: str) -> float:
    if text.lower() in ("inf", "infinity"):
        return math.inf
    return float(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swepipe", description="shear-wave elastography pipeline"
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--snr", type=str, default="inf", help="dB or 'inf'")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--preset", choices=("paper", "desk"), default="paper")
    g.add_argument("--out", required=True)
    g.add_argument("--train-frac", type=float, default=0.7)
    g.add_argument("--val-frac", type=float, default=0.15)

    def common_train(p):
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--dataset", required=True)
        p.add_argument("--out", default="runs")
        p.add_argument("--batch", type=int, default=None)
        p.add_argument("--lr", type=float, default=1e-3)
        p.add_argument("--epochs", type=int, default=150)
        p.add_argument("--max-steps", type=int, default=None)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--channels", type=int, default=None)
        p.add_argument("--device", default=None)

    tr = sub.add_parser("train-recon", help="train the reconstruction stage")
    common_train(tr)
    tr.add_argument("--mode", choices=("patch", "full"), default="patch")
    tr.add_argument("--patch-ap", type=int, default=63)
    tr.add_argument("--patch-lp", type=int, default=10)

    td = sub.add_parser("train-denoiser", help="train the post-denoiser stage")
    common_train(td)
    td.add_argument("--recon-ckpt", default=None)
    td.add_argument("--yprime-cache", default=None)
    td.add_argument(
        "--input-source", choices=("predicted", "truth-corrupted"), default="predicted"
    )
    td.add_argument("--kappa", type=float, default=0.5)
    td.add_argument("--beta2", type=float, default=50.0)
    td.add_argument("--gamma", type=float, default=10.0)
    td.add_argument("--mu", type=float, default=1.0)

    inf = sub.add_parser("infer", help="cascade inference on one sample")
    inf.add_argument("--recon-ckpt", required=True)
    inf.add_argument("--denoiser-ckpt", required=True)
    inf.add_argument("--dataset", required=True)
    inf.add_argument("--sample", type=int, required=True)
    inf.add_argument("--out", required=True)

    ev = sub.add_parser("eval", help="evaluate a split and emit plots")
    ev.add_argument("--recon-ckpt", required=True)
    ev.add_argument("--denoiser-ckpt", required=True)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--split", default="test")
    ev.add_argument("--out", required=True)
    ev.add_argument("--no-plots", action="store_true")

    rp = sub.add_parser("report", help="re-render a saved evaluation report")
    rp.add_argument("--run", required=True)
    return parser


def apply_config_file(args: argparse.Namespace) -> None:
    """Config-file keys fill in any flag still at its parser default."""
    if getattr(args, "config", None) is None:
        return
    flat = load_config(args.config)
    for key, value in flat.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise ConfigError(f"unknown config key {key!r}")
        setattr(args, attr, coerce(value, getattr(args, attr)))


def cmd_gen(args) -> int:
    from . import forge, swedio

    ds = forge.generate_dataset(
        n=args.n,
        snr_db=_parse_snr(args.snr),
        seed=args.seed,
        preset=args.preset,
        split_fractions=(
            args.train_frac,
            args.val_frac,
            max(1.0 - args.train_frac - args.val_frac, 0.0),
        ),
    )
    swedio.write_dataset(ds, args.out)
    print(f"wrote {len(ds.samples)} samples to {args.out}")
    return EXIT_OK


def _train_cfg(args, stage: str):
    from .training import TrainConfig

    kw = dict(
        stage=stage,
        batch=args.batch,
        lr=args.lr,
        epochs=args.epochs,
        max_steps=args.max_steps,
        seed=args.seed,
        checkpoint_dir=args.out,
        base_channels=args.channels,
        device=args.device,
    )
    if stage == "recon":
        kw.update(mode=args.mode, patch_ap=args.patch_ap, patch_lp=args.patch_lp)
    else:
        kw.update(
            input_source=args.input_source,
            kappa=args.kappa,
            beta2=args.beta2,
            gamma=args.gamma,
            mu=args.mu,
        )
    return TrainConfig(**kw)


def cmd_train_recon(args) -> int:
    from . import swedio, training

    ds = swedio.read_dataset(args.dataset)
    cfg = _train_cfg(args, "recon")
    ckpt, report = training.train_recon(cfg, ds)
    report.save(Path(args.out) / "recon_report.json")
    print(f"best val MAE {report.best_val:.5f} at epoch {report.best_epoch}; "
          f"checkpoint {ckpt}")
    return EXIT_OK


def cmd_train_denoiser(args) -> int:
    from . import swedio, training

    ds = swedio.read_dataset(args.dataset)
    cfg = _train_cfg(args, "denoiser")
    primary = None
    if cfg.input_source == "predicted":
        if args.yprime_cache:
            primary = training.load_primary_cache(args.yprime_cache, ds)
        elif args.recon_ckpt:
            from .pipeline import load_net_auto, primary_reconstruction

            net = load_net_auto(args.recon_ckpt)
            primary = {
                i: primary_reconstruction(net, s, ds.layout, cfg)
                for i, s in enumerate(ds.samples)
            }
        else:
            print(
                "error: need --recon-ckpt or --yprime-cache for predicted inputs",
                file=sys.stderr,
            )
            return EXIT_DATA
    ckpt, report = training.train_denoiser(cfg, ds, primary)
    report.save(Path(args.out) / "denoiser_report.json")
    print(f"best val loss {report.best_val:.5f} at epoch {report.best_epoch}; "
          f"checkpoint {ckpt}")
    return EXIT_OK


def cmd_infer(args) -> int:
    from . import swedio
    from .pipeline import infer, load_net_auto, save_panel
    from .swedio import write_tensor
    from .training import TrainConfig

    ds = swedio.read_dataset(args.dataset)
    if not 0 <= args.sample < len(ds.samples):
        print(f"error: sample {args.sample} out of range", file=sys.stderr)
        return EXIT_DATA
    recon_net = load_net_auto(args.recon_ckpt)
    denoiser_net = load_net_auto(args.denoiser_ckpt)
    sample = ds.samples[args.sample]
    result = infer(recon_net, denoiser_net, sample, ds.layout, TrainConfig())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(out / "y_prime_kpa.swed", result.y_prime_kpa)
    write_tensor(out / "y_kpa.swed", result.y_kpa)
    write_tensor(out / "mask.swed", result.mask)
    save_panel(result, sample.truth(), out / "panel.png")
    (out / "metrics.json").write_text(
        json.dumps({k: str(v) for k, v in (result.metrics or {}).items()}, indent=1)
    )
    if result.untrained:
        print("note: one or both checkpoints carry zero training steps")
    print(f"inference artifacts in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from . import swedio
    from .pipeline import evaluate, load_net_auto
    from .training import TrainConfig

    ds = swedio.read_dataset(args.dataset)
    recon_net = load_net_auto(args.recon_ckpt)
    denoiser_net = load_net_auto(args.denoiser_ckpt)
    report = evaluate(
        recon_net,
        denoiser_net,
        ds,
        args.out,
        TrainConfig(),
        split=args.split,
        plots=not args.no_plots,
    )
    print(Path(args.out, "metrics.txt").read_text())
    print(f"evaluated {report['n']} samples; artifacts in {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .metrics import METRIC_COLUMNS

    data = json.loads(Path(args.run).read_text())
    if "aggregate" in data:
        agg = data["aggregate"]
        print(f"split {data.get('split')}, n={data.get('n')}")
        header = f"{'metric':>8s}  {'mean':>10s}  {'median':>10s}  {'std':>10s}"
        print(header)
        for col in METRIC_COLUMNS:
            a = agg[col]
            print(f"{col:>8s}  {a['mean']:10.4f}  {a['median']:10.4f}  {a['std']:10.4f}")
    else:
        for e in data.get("epochs", []):
            print(json.dumps(e))
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "train-recon": cmd_train_recon,
    "train-denoiser": cmd_train_denoiser,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv=None) -> int:
    from .training import DivergenceError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        apply_config_file(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.verb](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as e:
        print(f"divergence: {e} (snapshot: {e.snapshot})", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, FileNotFoundError, KeyError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
