"""Command-line entry point: train, eval, gradcheck, ablate, sweep, gen-data."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import ConfigError, RunConfig, apply_overrides, load_config, parse_ini, preset
from .data import DataError, NormalizationStats, denormalize, gen_synthetic, make_windows, normalize, save_csv
from .evaluation import DEFAULT_K_GRID, DEFAULT_T_GRID, run_ablation, run_sweep, write_ablation, write_sweep
from .metrics import compute_metrics
from .model import TINY, gradient_check_model, init_params, parse_variant, predict, train
from .numerics import NonFiniteError, ShapeError

log = logging.getLogger("hrhn")

GRADCHECK_THRESHOLD = 1e-4


class CommandFailed(Exception):
    """A command ran but its verdict is a failure."""


# ---------------------------------------------------------------- config resolution


def _parse_sets(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        out.setdefault(section.strip(), {})[name.strip()] = value
    return out


def resolve_config(args) -> RunConfig:
    config = preset(args.preset) if getattr(args, "preset", None) else RunConfig()
    if getattr(args, "config", None):
        config = load_config(args.config, config)
    apply_overrides(config, _parse_sets(getattr(args, "set", None)))
    if getattr(args, "seed", None) is not None:
        config.run.seed = args.seed
    if getattr(args, "out", None):
        config.run.out = args.out
    if getattr(args, "data", None):
        config.dataset.path = args.data
        config.dataset.synthetic = None
    if getattr(args, "variant", None):
        v = parse_variant(args.variant)
        config.model.attention = v.mode_string
        if args.variant.strip().lower().startswith("rhn") or args.variant.strip().lower() == "hrhn":
            config.model.use_conv_frontend = v.use_conv_frontend
    return config.validate()


def _dtype(config: RunConfig):
    return np.float64 if config.run.precision == "float64" else np.float32


# ---------------------------------------------------------------- commands


def cmd_train(args) -> int:
    config = resolve_config(args)
    out = config.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    config.write(out / "config.ini")

    data = config.load_dataset()
    if config.dataset.normalize:
        data, stats = normalize(data)
    else:
        stats = NormalizationStats.identity(data.n, data.d)
    mcfg, variant = config.model_config(), config.variant()
    tr = make_windows(data, mcfg.T, "train")
    lo, hi = data.split_range("validation")
    va = make_windows(data, mcfg.T, "validation") if hi - lo >= mcfg.T else None
    params = init_params(mcfg, variant, seed=config.run.seed, dtype=_dtype(config))
    print(f"training {variant.mode_string} (conv={variant.use_conv_frontend}) with {params.count()} parameters "
          f"on {len(tr)} windows")

    def on_epoch(row):
        print(f"epoch {row['epoch']:4d}  step {row['step']:6d}  train_loss {row['train_loss']:.6f}  "
              f"val_rmse {row['val_rmse']:.6f}")

    result = train(tr, va, params, config.train_config(), variant,
                   denormalize=lambda a: denormalize(a, stats), on_epoch=on_epoch)
    with (out / "train_log.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "step", "train_loss", "val_rmse"])
        w.writeheader()
        w.writerows(result.log)
    extra = {
        "stats": stats.to_dict(),
        "config_ini": config.to_ini(),
        "best_epoch": result.best_epoch,
        "steps": result.steps,
        "diverged": result.diverged,
    }
    ckpt = checkpoint.save(out / "checkpoint.hrhn", result.params, extra)
    print(f"best epoch {result.best_epoch}; checkpoint written to {ckpt}")
    if result.diverged:
        print("warning: training diverged; best finite checkpoint kept", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    params, extra = checkpoint.load(args.checkpoint)
    if args.config or args.preset or args.data:
        config = resolve_config(args)
    else:
        config = parse_ini(extra["config_ini"]) if "config_ini" in extra else None
        if config is None:
            raise ConfigError("checkpoint carries no config; pass --config or --preset")
        if args.out:
            config.run.out = args.out
    data = config.load_dataset()
    mcfg = params.config
    if (data.n, data.d) != (mcfg.n, mcfg.d):
        raise ShapeError(
            f"checkpoint geometry (n={mcfg.n}, d={mcfg.d}, T={mcfg.T}) does not match dataset "
            f"(n={data.n}, d={data.d})"
        )
    stats = NormalizationStats.from_dict(extra["stats"]) if "stats" in extra else None
    if stats is not None:
        data, _ = normalize(data, stats)
    windows = make_windows(data, mcfg.T, args.split)
    pred = predict(windows, params)
    tgt = windows.target
    if stats is not None:
        pred, tgt = denormalize(pred, stats), denormalize(tgt, stats)
    report = compute_metrics(pred, tgt)
    out = config.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    (out / f"eval_{args.split}.json").write_text(json.dumps(report.to_dict(), indent=2))
    mape = "omitted (zero targets)" if report.mape is None else f"{report.mape:.6f} ({report.mape_percent:.4f}%)"
    print(f"{args.split}: N={report.n} D={report.d} RMSE {report.rmse:.6f}  MAE {report.mae:.6f}  MAPE {mape}")
    if args.dump:
        dump = Path(args.dump)
        dump.parent.mkdir(parents=True, exist_ok=True)
        with dump.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row"] + [f"pred{j}" for j in range(mcfg.d)] + [f"target{j}" for j in range(mcfg.d)])
            for start, p, t in zip(windows.start, pred, tgt):
                w.writerow([int(start) + mcfg.T - 1, *map(float, p), *map(float, t)])
    return 0


def cmd_gradcheck(args) -> int:
    config = resolve_config(args)
    variant = config.variant()
    depth_ok = variant.attention_mode != "single_layer" or variant.layer <= TINY.K
    if not depth_ok:
        raise ConfigError(f"tiny geometry has K={TINY.K}; cannot check {variant.mode_string}")
    print(f"gradient check: tiny geometry n={TINY.n} T={TINY.T} K={TINY.K} l=p={TINY.l} m={TINY.m} d={TINY.d}, "
          f"variant {variant.mode_string}, conv={variant.use_conv_frontend}, float64")
    worst = gradient_check_model(TINY, variant, seed=config.run.seed, perturbation=args.perturbation)
    for name, err in worst.items():
        flag = "ok" if err < args.threshold else "FAIL"
        print(f"  {name:28s} {err:.3e}  {flag}")
    overall = max(worst.values(), default=0.0)
    verdict = "PASS" if overall < args.threshold else "FAIL"
    print(f"max relative error {overall:.3e} vs threshold {args.threshold:g}: {verdict}")
    if verdict == "FAIL":
        raise CommandFailed(f"gradient check failed: {overall:.3e} >= {args.threshold:g}")
    return 0


def _seeds(text: str) -> list[int]:
    if "," in text:
        return [int(s) for s in text.split(",") if s.strip()]
    return list(range(int(text)))


def cmd_ablate(args) -> int:
    config = resolve_config(args)
    data = config.load_dataset()
    rows = run_ablation(data, config.model_config(), config.train_config(), _seeds(args.seeds))
    out = config.out_dir()
    config.write(out / "config.ini")
    csv_path, _ = write_ablation(rows, out)
    print(f"{'variant':16s} {'rmse':>10s} {'mae':>10s} {'mape':>10s}")
    for r in rows:
        d = r.to_dict()
        fmt = lambda v: "n/a" if v is None else f"{v:.5f}"  # noqa: E731
        print(f"{d['variant']:16s} {fmt(d['rmse']):>10s} {fmt(d['mae']):>10s} {fmt(d['mape']):>10s}")
    print(f"table written to {csv_path}")
    if any(r.errors for r in rows):
        raise CommandFailed("some ablation runs failed; see the errors column")
    return 0


def cmd_sweep(args) -> int:
    config = resolve_config(args)
    data = config.load_dataset()
    values = [int(v) for v in args.values.split(",")] if args.values else list(
        DEFAULT_T_GRID if args.axis == "T" else DEFAULT_K_GRID
    )
    variant = config.variant()
    result = run_sweep(args.axis, values, data, config.model_config(), config.train_config(),
                       _seeds(args.seeds), variant)
    out = config.out_dir()
    config.write(out / "config.ini")
    csv_path, _ = write_sweep(result, out)
    for x, y in result.series():
        print(f"{args.axis}={x}: median RMSE {'n/a' if y is None else f'{y:.5f}'}")
    print(f"series written to {csv_path}")
    if any("error" in r for point in result.runs for r in point):
        raise CommandFailed("some sweep points failed")
    return 0


def cmd_gen_data(args) -> int:
    options = {"n": args.n, "d": args.d}
    if args.noise is not None:
        options["noise"] = args.noise
    if args.switches is not None:
        options["n_switches"] = args.switches
    data = gen_synthetic(args.kind, args.length, args.seed, **options)
    save_csv(data, args.output)
    meta = Path(args.output).with_suffix(".meta.json")
    meta.write_text(json.dumps(data.meta, indent=2))
    print(f"wrote {len(data)} rows (n={data.n}, d={data.d}) to {args.output}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hrhn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, variant=True):
        p.add_argument("--config", help="INI run config")
        p.add_argument("--preset", help="named preset: nasdaq, tiny, quickstart, regime")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory (default $HRHN_OUT or ./runs)")
        p.add_argument("--data", help="CSV file; overrides the dataset source")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config key")
        if variant:
            p.add_argument("--variant", help="hrhn | rhn | rhn_conv | rhn_ha | rhn_attn<k> | hierarchical | "
                                             "classical_top | single_layer(k)")

    p = sub.add_parser("train", help="train a model and write checkpoint + log")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    common(p, variant=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "validation", "test"])
    p.add_argument("--dump", help="write per-window predictions to this CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check on the tiny geometry")
    common(p)
    p.add_argument("--threshold", type=float, default=GRADCHECK_THRESHOLD)
    p.add_argument("--perturbation", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train every ablation variant over several seeds")
    common(p, variant=False)
    p.add_argument("--seeds", default="5", help="count (0..N-1) or comma list")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="median RMSE while varying T or K")
    common(p)
    p.add_argument("--axis", required=True, choices=["T", "K"])
    p.add_argument("--values", help="comma-separated ascending grid")
    p.add_argument("--seeds", default="5")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    p.add_argument("--kind", required=True, choices=["linear_exo", "regime_switch"])
    p.add_argument("--length", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--noise", type=float)
    p.add_argument("--switches", type=int)
    p.add_argument("--output", "--out", dest="output", required=True)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CommandFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, DataError, ShapeError, NonFiniteError, checkpoint.CheckpointError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
