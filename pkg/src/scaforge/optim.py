"""Optimizers, learning-rate schedules, LR finder, stochastic weight averaging.

Optimizer steps are pure state transitions over named parameter dicts: they
return new dicts and never mutate their inputs, so the training loop owns all
state. The schedule family covers the setups used for trace classifiers:
constant, linear one-cycle, and an exponentially-decayed raised-cosine

    lr(t) = lr_max * 2^(-t/H) * (1 + cos(2*pi*t/P)) / 2

with period P one-fifth of the run and half-life H half of it by default, so
lr(0) = lr_max and the envelope halves at H.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DivergedImmediately, NonFiniteGradient, OutOfRange, ShapeMismatch

__all__ = [
    "LrCurve",
    "OptState",
    "OptimizerConfig",
    "ScheduleConfig",
    "SwaState",
    "init_opt_state",
    "lr_find",
    "lr_grid",
    "lr_sweep",
    "opt_step",
    "scale_lr",
    "schedule_value",
    "swa_update",
]


@dataclass
class OptimizerConfig:
    kind: str = "adam"            # "rmsprop" | "adam"
    base_lr: float = 1e-3
    beta1: float = 0.9            # adam
    beta2: float = 0.999          # adam
    decay: float = 0.9            # rmsprop
    eps: Optional[float] = None   # default 1e-8 (adam) / 1e-7 (rmsprop)

    def __post_init__(self):
        if self.kind not in ("rmsprop", "adam"):
            raise ValueError(f"optimizer kind {self.kind!r} not in (rmsprop, adam)")
        if self.eps is None:
            self.eps = 1e-8 if self.kind == "adam" else 1e-7
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1 and 0 < self.decay < 1):
            raise ValueError("beta1, beta2, decay must lie in (0, 1)")
        if not (self.eps > 0 and self.base_lr > 0):
            raise ValueError("eps and base_lr must be > 0")


@dataclass
class OptState:
    t: int = 0
    m: dict = field(default_factory=dict)  # adam first moment
    v: dict = field(default_factory=dict)  # second moment / rmsprop accumulator


def init_opt_state(params: dict) -> OptState:
    return OptState(t=0,
                    m={k: np.zeros_like(p) for k, p in params.items()},
                    v={k: np.zeros_like(p) for k, p in params.items()})


def opt_step(cfg: OptimizerConfig, state: OptState, params: dict, grads: dict,
             lr: float):
    """One optimizer update; returns (new_params, new_state).

    Raises NonFiniteGradient if any gradient entry is NaN/Inf so the caller
    can treat the run as diverged.
    """
    new_params, new_m, new_v = {}, {}, {}
    t = state.t + 1
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: grad shape {g.shape} != param shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in {name}")
        if cfg.kind == "rmsprop":
            v = cfg.decay * state.v[name] + (1 - cfg.decay) * g * g
            new_params[name] = p - lr * g / (np.sqrt(v) + cfg.eps)
            new_v[name] = v
            new_m[name] = state.m[name]
        else:
            m = cfg.beta1 * state.m[name] + (1 - cfg.beta1) * g
            v = cfg.beta2 * state.v[name] + (1 - cfg.beta2) * g * g
            m_hat = m / (1 - cfg.beta1 ** t)
            v_hat = v / (1 - cfg.beta2 ** t)
            new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
            new_m[name], new_v[name] = m, v
    return new_params, OptState(t=t, m=new_m, v=new_v)


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------

@dataclass
class ScheduleConfig:
    kind: str = "constant"        # constant | one_cycle_linear | exp_cosine
    total_steps: int = 0
    lr: Optional[float] = None    # constant; resolved to optimizer base_lr if unset
    lr_max: float = 1e-3          # one_cycle_linear / exp_cosine
    div: float = 10.0             # one_cycle start divisor
    final_div: float = 100.0      # one_cycle end divisor (relative to lr_max/div)
    pct_peak: float = 0.4         # one_cycle fraction of steps spent ramping up
    period_frac: float = 0.2      # exp_cosine period as a fraction of total steps
    half_life_frac: float = 0.5   # exp_cosine envelope half-life fraction

    def __post_init__(self):
        if self.kind not in ("constant", "one_cycle_linear", "exp_cosine"):
            raise ValueError(f"schedule kind {self.kind!r} unknown")
        if self.kind != "constant":
            if not self.lr_max > 0:
                raise ValueError("lr_max must be > 0")
        if self.kind == "one_cycle_linear" and not 0 < self.pct_peak < 1:
            raise ValueError("pct_peak must lie in (0, 1)")
        if self.kind == "exp_cosine" and not (0 < self.period_frac <= 1
                                              and 0 < self.half_life_frac <= 1):
            raise ValueError("period_frac and half_life_frac must lie in (0, 1]")


def schedule_value(s: ScheduleConfig, t: float) -> float:
    """Learning rate at step t in [0, total_steps]."""
    if s.kind == "constant":
        if s.lr is None:
            raise ValueError("constant schedule needs lr set")
        return float(s.lr)
    total = s.total_steps
    if total <= 0:
        raise ValueError("schedule needs total_steps > 0")
    if not 0 <= t <= total:
        raise OutOfRange(f"step {t} outside [0, {total}]")
    if s.kind == "one_cycle_linear":
        peak = s.pct_peak * total
        lo, hi = s.lr_max / s.div, s.lr_max
        if t <= peak:
            return lo + (hi - lo) * (t / peak)
        final = s.lr_max / (s.div * s.final_div)
        return hi + (final - hi) * ((t - peak) / (total - peak))
    # exp_cosine
    h = s.half_life_frac * total
    p = s.period_frac * total
    return s.lr_max * 2.0 ** (-t / h) * (1.0 + math.cos(2.0 * math.pi * t / p)) / 2.0


def scale_lr(base_lr: float, batch_size: int, ref_batch: int = 50) -> float:
    """Linear learning-rate scaling for large batches: base * batch / ref."""
    if batch_size <= 0 or ref_batch <= 0:
        raise ValueError("batch sizes must be > 0")
    return base_lr * batch_size / ref_batch


# ---------------------------------------------------------------------------
# stochastic weight averaging
# ---------------------------------------------------------------------------

@dataclass
class SwaState:
    averaged: dict = field(default_factory=dict)
    n_models: int = 0


def swa_update(s: SwaState, params: dict) -> SwaState:
    """Fold one parameter snapshot into the running arithmetic mean."""
    if s.n_models == 0:
        return SwaState(averaged={k: p.copy() for k, p in params.items()}, n_models=1)
    n = s.n_models
    out = {}
    for k, avg in s.averaged.items():
        p = params[k]
        if p.shape != avg.shape:
            raise ShapeMismatch(f"{k}: snapshot shape {p.shape} != averaged {avg.shape}")
        out[k] = avg + (p - avg) / (n + 1)
    return SwaState(averaged=out, n_models=n + 1)


# ---------------------------------------------------------------------------
# learning-rate finder
# ---------------------------------------------------------------------------

@dataclass
class LrCurve:
    lrs: np.ndarray
    raw_losses: np.ndarray
    smoothed: np.ndarray
    suggestion: Optional[float]
    truncated_at: Optional[int]


def lr_grid(lr_min: float, lr_max: float, n_steps: int) -> np.ndarray:
    """Exponential sweep grid: lr_i = lr_min * (lr_max/lr_min)^(i/(n-1))."""
    if not 0 < lr_min < lr_max:
        raise ValueError("need 0 < lr_min < lr_max")
    if n_steps < 10:
        raise ValueError("n_steps must be >= 10")
    i = np.arange(n_steps)
    return lr_min * (lr_max / lr_min) ** (i / (n_steps - 1))


def lr_sweep(step_fn: Callable[[float], float], lr_min: float, lr_max: float,
             n_steps: int, ema_beta: float = 0.98,
             divergence_factor: float = 4.0) -> LrCurve:
    """Drive `step_fn` over the exponential lr grid and smooth the losses.

    `step_fn(lr)` performs one optimization step at that rate and returns the
    (pre-step) loss. The smoothed loss is a bias-corrected EMA. The sweep
    truncates once the smoothed loss exceeds `divergence_factor` times the
    best smoothed loss seen, or at the first non-finite loss; a non-finite
    loss within the first five steps raises DivergedImmediately. The
    offending point is dropped, so the curve holds `truncated_at` entries.

    The suggested rate sits at the steepest negative slope of the smoothed
    curve (None if the loss never decreases).
    """
    grid = lr_grid(lr_min, lr_max, n_steps)
    raws, smooths = [], []
    ema = 0.0
    best = math.inf
    truncated_at = None
    for i, lr in enumerate(grid):
        raw = float(step_fn(float(lr)))
        if not math.isfinite(raw):
            if i < 5:
                raise DivergedImmediately(f"loss non-finite at sweep step {i}")
            truncated_at = i
            break
        ema = ema_beta * ema + (1 - ema_beta) * raw
        smooth = ema / (1 - ema_beta ** (i + 1))
        if smooth > divergence_factor * best:
            truncated_at = i
            break
        raws.append(raw)
        smooths.append(smooth)
        best = min(best, smooth)

    smooths_arr = np.asarray(smooths)
    suggestion = None
    if len(smooths) >= 3:
        slopes = np.gradient(smooths_arr)
        k = int(np.argmin(slopes))
        if slopes[k] < 0:
            suggestion = float(grid[k])
    return LrCurve(lrs=grid[:len(raws)], raw_losses=np.asarray(raws),
                   smoothed=smooths_arr, suggestion=suggestion,
                   truncated_at=truncated_at)


def lr_find(model, samples: np.ndarray, labels: np.ndarray,
            opt_cfg: OptimizerConfig, lr_min: float = 1e-6, lr_max: float = 1.0,
            n_steps: int = 100, ema_beta: float = 0.98, batch_size: int = 64,
            seed: int = 0) -> LrCurve:
    """Exponential LR range test on a throwaway copy of `model`.

    Never evaluates more than n_steps batches and never touches the caller's
    model. Non-finite gradients are treated as a non-finite loss so the
    truncation contract applies.
    """
    from . import nn  # local import: optim must not require nn for the sweep core
    from .rng import substream

    probe = model.clone()
    params = probe.parameters()
    state = init_opt_state(params)
    order = substream(seed, "lrfind").permutation(samples.shape[0])
    pos = 0

    def next_batch():
        nonlocal pos
        idx = order[pos:pos + batch_size]
        if len(idx) < batch_size:
            pos = 0
            idx = order[:batch_size]
        pos += batch_size
        return samples[idx], labels[idx]

    def step(lr: float) -> float:
        nonlocal params, state
        x, y = next_batch()
        try:
            loss, grads = nn.backward(probe, x, y)
            params, state = opt_step(opt_cfg, state, params, grads, lr)
            probe.set_parameters(params)
        except NonFiniteGradient:
            return math.inf
        return loss

    return lr_sweep(step, lr_min, lr_max, n_steps, ema_beta=ema_beta)
