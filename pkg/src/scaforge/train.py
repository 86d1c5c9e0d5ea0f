"""Training loop: seeded shuffling, data-parallel gradient averaging,
EMA-loss monitoring, SWA snapshots, checkpointing, and per-epoch records.

Workers are execution lanes (threads) holding replica models, reproducing
multi-device gradient averaging semantics on one machine: each lane runs
backward on its shard, and gradients are reduced in worker-index order so
results do not depend on completion order. For batchnorm-free models the
averaged gradient equals the full-batch gradient (mean of equal-shard means);
batchnorm replicas use per-shard statistics, as real data-parallel training
does, and their running stats are merged by fixed-order averaging.
"""

import dataclasses
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import nn
from .errors import (
    ConfigInvalid,
    Diverged,
    ManifestMismatch,
    MissingMetadata,
    NonFiniteGradient,
)
from .optim import (
    OptimizerConfig,
    ScheduleConfig,
    SwaState,
    init_opt_state,
    opt_step,
    schedule_value,
    swa_update,
)
from .rng import substream
from .traces import TraceSet, shift_edge

__all__ = [
    "EpochRecord",
    "FitResult",
    "TrainConfig",
    "checkpoint_load",
    "checkpoint_save",
    "fit",
    "parallel_grad",
]

CKPT_FORMAT = "scaforge-ckpt"
CKPT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    workers: int = 1
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    max_shift: Optional[int] = None        # shift augmentation, None = off
    swa_start_epoch: Optional[int] = None  # SWA snapshots from this epoch on
    seed: int = 0
    val_fraction: float = 0.0
    eval_ge_every: Optional[int] = None    # epochs between GE probes on the val split
    precision: str = "f32"
    ema_beta: float = 0.98

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigInvalid("epochs and batch_size must be >= 1")
        if self.workers < 1:
            raise ConfigInvalid("workers must be >= 1")
        if self.batch_size % self.workers != 0:
            raise ConfigInvalid(f"batch_size {self.batch_size} not divisible "
                                f"by workers {self.workers}")
        if not 0 <= self.val_fraction <= 0.5:
            raise ConfigInvalid("val_fraction must lie in [0, 0.5]")
        if self.precision not in ("f32", "f64"):
            raise ConfigInvalid("precision must be f32 or f64")
        if not 0 < self.ema_beta < 1:
            raise ConfigInvalid("ema_beta must lie in (0, 1)")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    ema_loss: float
    val_loss: Optional[float]
    lr_last: float
    ge_at_checkpoint: Optional[float] = None
    wall_time_s: float = 0.0

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


@dataclass
class FitResult:
    model: "nn.Model"
    history: list
    swa_model: Optional["nn.Model"] = None
    checkpoints: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# data-parallel gradient averaging
# ---------------------------------------------------------------------------

def _replica_backward(replica, x, y):
    loss, grads = nn.backward(replica, x, y)
    return loss, grads


def _reduce(results, shard_sizes):
    """Combine per-worker (loss, grads) in worker-index order.

    Equal shards use the plain arithmetic mean; a ragged tail shard (final
    partial batch) is weighted by size so the result still equals the
    full-batch gradient.
    """
    total = sum(shard_sizes)
    equal = len(set(shard_sizes)) == 1
    w = len(results)
    mean_loss = 0.0
    mean_grads = {}
    for i, ((loss, grads), n) in enumerate(zip(results, shard_sizes)):
        scale = 1.0 / w if equal else n / total
        mean_loss += loss * scale
        for name, g in grads.items():
            if i == 0:
                mean_grads[name] = g * scale
            else:
                mean_grads[name] += g * scale
    return mean_loss, mean_grads


def parallel_grad(model, shard_x, shard_y):
    """Backward on one replica per shard; fixed-order mean of the gradients.

    Returns (mean_loss, mean_grads). The caller's model is untouched
    (replicas are clones); running batchnorm statistics are merged only by
    fit(), which owns the canonical model.
    """
    if len(shard_x) != len(shard_y) or not shard_x:
        raise ValueError("need one label shard per sample shard")
    replicas = [model.clone() for _ in shard_x]
    results = [_replica_backward(r, x, y) for r, x, y in zip(replicas, shard_x, shard_y)]
    return _reduce(results, [len(x) for x in shard_x])


class _Lanes:
    """Persistent worker lanes for fit(): replicas plus an optional thread pool."""

    def __init__(self, model, workers):
        self.workers = workers
        self.replicas = [model.clone() for _ in range(workers)]
        self.pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def step(self, model, x, y):
        w = min(self.workers, len(x))
        if w == 1:
            loss, grads = nn.backward(model, x, y)
            return loss, grads
        bounds = np.linspace(0, len(x), w + 1).astype(int)
        shards = [(x[a:b], y[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]
        params = model.parameters()
        state = model.state_tensors()
        for r in self.replicas[:w]:
            r.set_parameters(params)
            r.set_state_tensors(state)
            r.set_mode(model.mode)
        jobs = [(self.replicas[i], *shards[i]) for i in range(w)]
        if self.pool is not None:
            futures = [self.pool.submit(_replica_backward, *job) for job in jobs]
            results = [f.result() for f in futures]
        else:
            results = [_replica_backward(*job) for job in jobs]
        loss, grads = _reduce(results, [len(s[0]) for s in shards])
        if model.state_tensors():
            merged = {}
            for name in state:
                merged[name] = sum(r.state_tensors()[name] for r in self.replicas[:w]) / w
            model.set_state_tensors(merged)
        return loss, grads

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _tensor_table(model, opt_state):
    table = {}
    for name, arr in model.parameters().items():
        table[f"param/{name}"] = arr
    for name, arr in model.state_tensors().items():
        table[f"state/{name}"] = arr
    for name, arr in opt_state.m.items():
        table[f"opt.m/{name}"] = arr
    for name, arr in opt_state.v.items():
        table[f"opt.v/{name}"] = arr
    return table


def checkpoint_save(model, opt_state, path_prefix, step: int = 0) -> None:
    """Write `<prefix>.json` (manifest) and `<prefix>.bin` (tensor blob).

    Tensors are laid out in lexicographic name order, little-endian, in the
    model's dtype; save -> load -> save reproduces both files byte-exactly.
    """
    table = _tensor_table(model, opt_state)
    names = sorted(table)
    dtype = model.dtype.newbyteorder("<")
    entries, offset = [], 0
    blob = bytearray()
    for name in names:
        arr = np.ascontiguousarray(table[name], dtype=dtype)
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob.extend(raw)
        offset += len(raw)
    manifest = {
        "format": CKPT_FORMAT,
        "version": CKPT_VERSION,
        "config": model.config.to_dict(),
        "config_hash": model.config.hash(),
        "dtype": model.dtype.name,
        "step": int(step),
        "opt_t": int(opt_state.t),
        "tensors": entries,
    }
    with open(str(path_prefix) + ".json", "w") as f:
        f.write(json.dumps(manifest, sort_keys=True, separators=(",", ":")))
    with open(str(path_prefix) + ".bin", "wb") as f:
        f.write(bytes(blob))


def checkpoint_load(path_prefix, expect_config=None):
    """Restore (model, opt_state, step); ManifestMismatch on config conflicts."""
    with open(str(path_prefix) + ".json") as f:
        manifest = json.load(f)
    if manifest.get("format") != CKPT_FORMAT or manifest.get("version") != CKPT_VERSION:
        raise ManifestMismatch(f"{path_prefix}: not a {CKPT_FORMAT} v{CKPT_VERSION} checkpoint")
    config = nn.ModelConfig.from_dict(manifest["config"])
    if expect_config is not None and expect_config.hash() != manifest["config_hash"]:
        raise ManifestMismatch(
            f"{path_prefix}: checkpoint was built for config {manifest['config_hash']}, "
            f"expected {expect_config.hash()}")
    dtype = np.dtype(manifest["dtype"])
    with open(str(path_prefix) + ".bin", "rb") as f:
        blob = f.read()
    tensors = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype=dtype.newbyteorder("<"), count=count, offset=start)
        tensors[entry["name"]] = arr.astype(dtype).reshape(shape)

    model = nn.build_model(config, seed=0, dtype=dtype)
    model.set_parameters({k[len("param/"):]: v for k, v in tensors.items()
                          if k.startswith("param/")})
    model.set_state_tensors({k[len("state/"):]: v for k, v in tensors.items()
                             if k.startswith("state/")})
    opt_state = type(init_opt_state({}))(
        t=int(manifest["opt_t"]),
        m={k[len("opt.m/"):]: v for k, v in tensors.items() if k.startswith("opt.m/")},
        v={k[len("opt.v/"):]: v for k, v in tensors.items() if k.startswith("opt.v/")},
    )
    return model, opt_state, int(manifest["step"])


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def _val_loss(model, x, y, batch=1024):
    prior = model.mode
    model.set_mode("infer")
    try:
        total, n = 0.0, 0
        for start in range(0, len(x), batch):
            xb, yb = x[start:start + batch], y[start:start + batch]
            loss, _ = nn.loss_ce(model.forward(xb), yb)
            total += loss * len(xb)
            n += len(xb)
        return total / max(n, 1)
    finally:
        model.set_mode(prior)


def _ge_probe(model, ts_val: TraceSet, idx, seed):
    """Small guessing-entropy probe on the validation split.

    Returns the mean rank at the largest trace count, or None when the split
    cannot support a single-key attack.
    """
    from .attack import guessing_entropy
    from .errors import MixedKeys

    if ts_val.keys is None or ts_val.plaintexts is None or len(idx) < 10:
        return None
    sub = TraceSet(samples=ts_val.samples[idx], keys=ts_val.keys[idx],
                   plaintexts=ts_val.plaintexts[idx],
                   labels=None if ts_val.labels is None else ts_val.labels[idx])
    try:
        curve = guessing_entropy(model, sub, repetitions=10,
                                 max_traces=min(200, len(idx)), seed=seed)
    except MixedKeys:
        return None
    return float(curve.mean_rank[-1])


def fit(model, ts_profiling: TraceSet, cfg: TrainConfig, out_dir=None,
        opt_state=None, initial_epoch: int = 0,
        checkpoint_every: Optional[int] = None) -> FitResult:
    """Train `model` on a labeled profiling set; returns the final model,
    per-epoch history, and (if enabled) the SWA variant.

    Deterministic for a given (seed, workers): shuffling, augmentation and
    the schedule all derive from named sub-streams of cfg.seed, keyed by
    absolute epoch so a checkpoint-resumed run replays the interrupted one.
    Raises Diverged (carrying partial history) when the loss leaves the
    finite range.
    """
    cfg.validate()
    if ts_profiling.labels is None:
        raise MissingMetadata("fit needs a labeled trace set")
    if ts_profiling.n_samples != model.input_width:
        raise ConfigInvalid(f"model input width {model.input_width} != "
                            f"trace width {ts_profiling.n_samples}")

    target_dtype = np.float64 if cfg.precision == "f64" else np.float32
    if model.dtype != target_dtype:
        model = model.astype(target_dtype)
    model.set_mode("train")

    n = ts_profiling.n_traces
    split = substream(cfg.seed, "split").permutation(n)
    n_val = int(cfg.val_fraction * n)
    train_idx = split[:n - n_val]
    val_idx = split[n - n_val:]
    x_all = ts_profiling.samples.astype(target_dtype)
    y_all = ts_profiling.labels

    steps_per_epoch = -(-len(train_idx) // cfg.batch_size)
    sched = dataclasses.replace(cfg.schedule)
    if sched.kind == "constant" and sched.lr is None:
        sched.lr = cfg.optimizer.base_lr
    if sched.total_steps <= 0:
        sched.total_steps = cfg.epochs * steps_per_epoch

    params = model.parameters()
    if opt_state is None:
        opt_state = init_opt_state(params)
    swa = SwaState()
    lanes = _Lanes(model, cfg.workers)
    history = []
    checkpoints = {}
    history_file = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        history_file = open(os.path.join(out_dir, "history.jsonl"),
                            "a" if initial_epoch else "w")

    def record(rec):
        history.append(rec)
        if history_file is not None:
            history_file.write(rec.to_json() + "\n")
            history_file.flush()

    ema = 0.0
    global_step = initial_epoch * steps_per_epoch
    try:
        for epoch in range(initial_epoch, cfg.epochs):
            t0 = time.monotonic()
            order = train_idx[substream(cfg.seed, "shuffle", epoch).permutation(len(train_idx))]
            aug_rng = substream(cfg.seed, "augment", epoch)
            epoch_loss, lr = 0.0, 0.0
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                xb = x_all[idx]
                if cfg.max_shift:
                    shifts = aug_rng.integers(-cfg.max_shift, cfg.max_shift + 1, size=len(idx))
                    xb = np.stack([shift_edge(row, int(d)) for row, d in zip(xb, shifts)])
                yb = y_all[idx]
                lr = schedule_value(sched, global_step)
                try:
                    loss, grads = lanes.step(model, xb, yb)
                    if not np.isfinite(loss):
                        raise Diverged(f"non-finite loss at epoch {epoch}", history)
                    params, opt_state = opt_step(cfg.optimizer, opt_state, params, grads, lr)
                except NonFiniteGradient as e:
                    raise Diverged(f"non-finite gradient at epoch {epoch}: {e}", history)
                model.set_parameters(params)
                global_step += 1
                epoch_loss += loss * len(idx)
                ema = cfg.ema_beta * ema + (1 - cfg.ema_beta) * loss

            train_loss = epoch_loss / len(order)
            ema_hat = ema / (1 - cfg.ema_beta ** global_step)
            vloss = _val_loss(model, x_all[val_idx], y_all[val_idx]) if n_val else None
            ge = None
            if cfg.eval_ge_every and (epoch + 1) % cfg.eval_ge_every == 0 and n_val:
                ge = _ge_probe(model, ts_profiling, val_idx, cfg.seed)
            if cfg.swa_start_epoch is not None and epoch >= cfg.swa_start_epoch:
                swa = swa_update(swa, params)
            record(EpochRecord(epoch=epoch, train_loss=train_loss, ema_loss=ema_hat,
                               val_loss=vloss, lr_last=lr, ge_at_checkpoint=ge,
                               wall_time_s=time.monotonic() - t0))
            if out_dir is not None and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
                prefix = os.path.join(out_dir, f"ckpt_epoch{epoch:04d}")
                checkpoint_save(model, opt_state, prefix, step=global_step)
                checkpoints[f"epoch{epoch:04d}"] = prefix
    finally:
        lanes.close()
        if history_file is not None:
            history_file.close()

    swa_model = None
    if swa.n_models:
        swa_model = model.clone()
        swa_model.set_parameters(swa.averaged)
    if out_dir is not None:
        prefix = os.path.join(out_dir, "ckpt_final")
        checkpoint_save(model, opt_state, prefix, step=global_step)
        checkpoints["final"] = prefix
        if swa_model is not None:
            prefix = os.path.join(out_dir, "ckpt_swa")
            checkpoint_save(swa_model, opt_state, prefix, step=global_step)
            checkpoints["swa"] = prefix
    return FitResult(model=model, history=history, swa_model=swa_model,
                     checkpoints=checkpoints)
