#!/usr/bin/env python3
"""End-to-end demo on unprotected synthetic leakage.

Generates profiling/attack sets (HW of the S-box output at one sample, sigma
2.0), trains a small MLP on a 5-sample POI window, and prints the
guessing-entropy curve. Finishes in well under a minute on a laptop CPU.
"""

import argparse
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

import numpy as np

from scaforge.attack import guessing_entropy
from scaforge.nn import LayerSpec, ModelConfig, build_model
from scaforge.optim import OptimizerConfig, ScheduleConfig
from scaforge.synth import SynthConfig, generate
from scaforge.train import TrainConfig, fit
from scaforge.traces import standardize, window

KEY = bytes(range(16))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sigma", type=float, default=2.0)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=21)
    args = ap.parse_args()

    prof = generate(SynthConfig(n_traces=10000, n_samples=100, sigma=args.sigma,
                                leak_pos_masked=33, leak_pos_mask=66,
                                unprotected=True, key_mode="fixed", key=KEY, seed=101))
    atk = generate(SynthConfig(n_traces=2000, n_samples=100, sigma=args.sigma,
                               leak_pos_masked=33, leak_pos_mask=66,
                               unprotected=True, key_mode="fixed", key=KEY, seed=202))
    prof_std, stats = standardize(window(prof, 31, 5), "pointwise")
    atk_std, _ = standardize(window(atk, 31, 5), "pointwise", stats=stats)

    model = build_model(ModelConfig(input_width=5, layers=[
        LayerSpec(kind="dense", units=16), LayerSpec(kind="relu"),
        LayerSpec(kind="softmax_ce_head")]), seed=args.seed)
    cfg = TrainConfig(epochs=args.epochs, batch_size=64, seed=args.seed + 1,
                      val_fraction=0.1,
                      optimizer=OptimizerConfig(kind="adam", base_lr=2e-3),
                      schedule=ScheduleConfig(kind="exp_cosine", lr_max=2e-3))
    result = fit(model, prof_std, cfg)
    for rec in result.history[::5] + result.history[-1:]:
        print(f"epoch {rec.epoch:3d}: train {rec.train_loss:.4f} "
              f"ema {rec.ema_loss:.4f} val {rec.val_loss:.4f}")

    curve = guessing_entropy(result.model, atk_std, repetitions=50,
                             max_traces=2000, step=1, seed=3)
    print(f"\ntraces-to-zero-entropy: {curve.traces_to_zero}")
    for n in (1, 5, 10, 20, 50, 100, 500):
        print(f"mean rank @ {n:4d} traces: {curve.mean_rank[n - 1]:7.2f}")


if __name__ == "__main__":
    main()
