"""Command-line entry point wiring all stages into reproducible experiments.

Subcommands: gen, inspect, snr, lr-find, train, attack, saliency. Each reads
one JSON experiment config (--config) plus dotted-key overrides (--set);
identical config + seed reproduces byte-identical outputs. Exit codes:
0 success, 1 usage/config error, 2 runtime failure (e.g. divergence).
"""

import argparse
import json
import os
import struct
import sys

import numpy as np

from . import analysis, attack as attack_mod, nn, synth, traces
from .config import (
    load_experiment,
    load_stats,
    prepare_traces,
    resolve_model_config,
    save_stats,
)
from .errors import ConfigInvalid, Diverged, ScaforgeError
from .optim import lr_find
from .train import checkpoint_load, fit

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the CLI contract wants 1
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(self._exit_usage(message))

    def _exit_usage(self, message):
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        return 1


def _build_parser() -> _Parser:
    p = _Parser(prog="scaforge", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", required=True, help="experiment config JSON")
        sp.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="dotted-key config override")

    sp = sub.add_parser("gen", help="generate synthetic traces to a SCAT file")
    common(sp)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("inspect", help="print a SCAT file header")
    sp.add_argument("path")

    sp = sub.add_parser("snr", help="per-sample SNR to CSV")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--partition", default="label",
                    choices=["label", "mask", "masked_sbox"])

    sp = sub.add_parser("lr-find", help="exponential learning-rate sweep to CSV")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--lr-min", type=float, default=1e-6)
    sp.add_argument("--lr-max", type=float, default=1.0)
    sp.add_argument("--steps", type=int, default=100)

    sp = sub.add_parser("train", help="train a model; writes history + checkpoints")
    common(sp)
    sp.add_argument("--out", required=True, help="output run directory")
    sp.add_argument("--workers", type=int, default=None,
                    help="override train.workers")
    sp.add_argument("--checkpoint-every", type=int, default=None)

    sp = sub.add_parser("attack", help="guessing-entropy curve from a checkpoint")
    common(sp)
    sp.add_argument("--ckpt", required=True, help="checkpoint prefix")
    sp.add_argument("--out", required=True, help="GE curve CSV path")
    sp.add_argument("--stats", default=None,
                    help="preprocessing stats JSON from the training run")

    sp = sub.add_parser("saliency", help="mean absolute input gradient to CSV")
    common(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--out", required=True)
    return p


def _load_cfg(args):
    try:
        return load_experiment(args.config, args.overrides)
    except FileNotFoundError as e:
        raise ConfigInvalid(str(e)) from None
    except json.JSONDecodeError as e:
        raise ConfigInvalid(f"{args.config}: {e}") from None


def _cap_workers(n: int) -> int:
    cap = os.environ.get("SCAFORGE_THREADS")
    return min(n, max(1, int(cap))) if cap else n


def _cmd_gen(args):
    cfg = _load_cfg(args)
    if cfg.data.synth is None:
        raise ConfigInvalid("gen needs a data.synth section")
    ts = synth.generate(cfg.data.synth)
    traces.save_traceset(ts, args.out)
    print(f"wrote {ts.n_traces}x{ts.n_samples} {ts.samples.dtype.name} traces to {args.out}")
    return 0


def _cmd_inspect(args):
    with open(args.path, "rb") as f:
        raw = f.read(traces._HEADER.size)
    if len(raw) < traces._HEADER.size:
        raise ScaforgeError(f"{args.path}: too short for a SCAT header")
    magic, version, flags, n_traces, n_samples, dtype_code, mask_len, _ = \
        traces._HEADER.unpack(raw)
    names = {0: "i8", 1: "i16", 2: "f32"}
    meta = [name for bit, name in
            ((1, "keys"), (2, "plaintexts"), (4, "masks"), (8, "labels")) if flags & bit]
    print(f"magic={magic!r} version={version} n_traces={n_traces} n_samples={n_samples} "
          f"dtype={names.get(dtype_code, dtype_code)} mask_len={mask_len} "
          f"meta={','.join(meta) or 'none'}")
    return 0


def _cmd_snr(args):
    cfg = _load_cfg(args)
    ts, _ = prepare_traces(cfg.data)
    if args.partition == "label":
        classes = analysis.partition_by_label(ts)
    elif args.partition == "mask":
        classes = analysis.partition_by_mask(ts)
    else:
        classes = analysis.partition_by_masked_sbox(ts, cfg.data.target_byte)
    report = analysis.snr(ts, classes)
    analysis.export_csv({"snr": report.values}, args.out)
    print(f"snr argmax at sample {report.argmax} "
          f"(value {report.values[report.argmax]:.4g}); wrote {args.out}")
    return 0


def _cmd_lr_find(args):
    cfg = _load_cfg(args)
    ts, _ = prepare_traces(cfg.data)
    model_cfg = resolve_model_config(cfg.model, ts.n_samples)
    model = nn.build_model(model_cfg, seed=cfg.seed)
    curve = lr_find(model, ts.samples.astype(np.float32), ts.labels,
                    cfg.train.optimizer, lr_min=args.lr_min, lr_max=args.lr_max,
                    n_steps=args.steps, batch_size=cfg.train.batch_size,
                    seed=cfg.seed)
    analysis.export_csv({"lr": curve.lrs, "raw_loss": curve.raw_losses,
                         "smoothed_loss": curve.smoothed}, args.out)
    print(f"suggestion: {curve.suggestion}"
          + (f" (truncated at step {curve.truncated_at})"
             if curve.truncated_at is not None else ""))
    return 0


def _cmd_train(args):
    cfg = _load_cfg(args)
    ts, stats = prepare_traces(cfg.data)
    if args.workers is not None:
        cfg.train.workers = args.workers
    cfg.train.workers = _cap_workers(cfg.train.workers)
    model_cfg = resolve_model_config(cfg.model, ts.n_samples)
    model = nn.build_model(model_cfg, seed=cfg.train.seed)
    os.makedirs(args.out, exist_ok=True)
    if stats is not None:
        save_stats(stats, os.path.join(args.out, "preprocess_stats.json"))
    result = fit(model, ts, cfg.train, out_dir=args.out,
                 checkpoint_every=args.checkpoint_every)
    hist = result.history
    analysis.export_csv(
        {"epoch": [r.epoch for r in hist],
         "train_loss": [r.train_loss for r in hist],
         "ema_loss": [r.ema_loss for r in hist],
         "val_loss": [np.nan if r.val_loss is None else r.val_loss for r in hist],
         "lr_last": [r.lr_last for r in hist]},
        os.path.join(args.out, "metrics.csv"), include_index=False)
    print(f"trained {cfg.train.epochs} epochs; final train loss "
          f"{hist[-1].train_loss:.4f}; outputs in {args.out}")
    return 0


def _attack_data(cfg):
    section = cfg.attack.data if cfg.attack.data is not None else cfg.data
    return section


def _cmd_attack(args):
    cfg = _load_cfg(args)
    section = _attack_data(cfg)
    stats = load_stats(args.stats) if args.stats else None
    ts, _ = prepare_traces(section, stats=stats)
    model, _, _ = checkpoint_load(args.ckpt)
    curve = attack_mod.guessing_entropy(
        model, ts, repetitions=cfg.attack.repetitions,
        max_traces=cfg.attack.max_traces, step=cfg.attack.step,
        seed=cfg.seed, target_byte=section.target_byte)
    analysis.export_csv({"n_traces": curve.n_traces, "mean_rank": curve.mean_rank},
                        args.out, include_index=False)
    summary = {"traces_to_zero": curve.traces_to_zero,
               "final_mean_rank": float(curve.mean_rank[-1]),
               "repetitions": curve.repetitions}
    with open(os.path.splitext(args.out)[0] + "_summary.json", "w") as f:
        json.dump(summary, f, sort_keys=True)
    print(f"traces-to-zero: {curve.traces_to_zero}; "
          f"mean rank at {curve.n_traces[-1]} traces: {curve.mean_rank[-1]:.2f}")
    return 0


def _cmd_saliency(args):
    cfg = _load_cfg(args)
    ts, _ = prepare_traces(cfg.data)
    model, _, _ = checkpoint_load(args.ckpt)
    values = analysis.saliency(model, ts)
    analysis.export_csv({"saliency": values}, args.out)
    print(f"saliency argmax at sample {int(np.argmax(values))}; wrote {args.out}")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "inspect": _cmd_inspect,
    "snr": _cmd_snr,
    "lr-find": _cmd_lr_find,
    "train": _cmd_train,
    "attack": _cmd_attack,
    "saliency": _cmd_saliency,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigInvalid as e:
        print(f"scaforge {args.command}: config error: {e}", file=sys.stderr)
        return 1
    except Diverged as e:
        print(f"scaforge {args.command}: diverged after "
              f"{len(e.history)} epochs: {e}", file=sys.stderr)
        return 2
    except (ScaforgeError, OSError, struct.error) as e:
        print(f"scaforge {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
