"""Training loop: determinism, gradient averaging, checkpoints, divergence."""

import json

import numpy as np
import pytest

from scaforge.errors import ConfigInvalid, Diverged, ManifestMismatch
from scaforge.nn import LayerSpec, ModelConfig, backward, build_model
from scaforge.optim import OptimizerConfig, ScheduleConfig, init_opt_state
from scaforge.rng import substream
from scaforge.synth import SynthConfig, generate
from scaforge.train import (
    TrainConfig,
    checkpoint_load,
    checkpoint_save,
    fit,
    parallel_grad,
)
from scaforge.traces import TraceSet


def _mlp_config(width, hidden=(32,)):
    layers = []
    for h in hidden:
        layers += [LayerSpec(kind="dense", units=h), LayerSpec(kind="relu")]
    layers.append(LayerSpec(kind="softmax_ce_head"))
    return ModelConfig(input_width=width, layers=layers)


def _toy_data(n=256, s=12, seed=0, sigma=0.5):
    return generate(SynthConfig(n_traces=n, n_samples=s, sigma=sigma,
                                leak_pos_masked=3, leak_pos_mask=8,
                                unprotected=True, seed=seed))


# ---------------------------------------------------------------------------
# fit basics
# ---------------------------------------------------------------------------

def test_lr_zero_leaves_params_and_loss_at_initial():
    ts = _toy_data(n=128)
    model = build_model(_mlp_config(12), seed=1)
    before = {k: v.copy() for k, v in model.parameters().items()}
    cfg = TrainConfig(epochs=1, batch_size=32, seed=5,
                      schedule=ScheduleConfig(kind="constant", lr=0.0))
    result = fit(model, ts, cfg)
    for k, v in result.model.parameters().items():
        np.testing.assert_array_equal(v, before[k])
    initial_loss = result.model.loss_on(ts.samples.astype(np.float32), ts.labels)
    assert result.history[0].train_loss == pytest.approx(initial_loss, rel=1e-5)


def test_training_reduces_loss_from_ln256():
    # The HW leak only narrows the label to a C(8,hw) candidate set, so a
    # train CE below E[ln C(8,HW)] ~ 3.78 means the net is additionally
    # memorizing traces through their noise samples; a two-hidden-layer MLP
    # has enough capacity to do that within 10 epochs.
    from scaforge.traces import standardize

    ts = generate(SynthConfig(n_traces=5000, n_samples=12, sigma=0.5,
                              leak_pos_masked=3, leak_pos_mask=8,
                              unprotected=True, seed=2))
    ts_std, _ = standardize(ts, "pointwise")
    model = build_model(_mlp_config(12, hidden=(512, 512)), seed=3)
    cfg = TrainConfig(epochs=10, batch_size=64, seed=7,
                      optimizer=OptimizerConfig(kind="adam", base_lr=3e-3),
                      schedule=ScheduleConfig(kind="one_cycle_linear", lr_max=3e-3))
    result = fit(model, ts_std, cfg)
    assert result.history[0].train_loss < 6.0   # starts near ln 256 = 5.545
    assert result.history[-1].train_loss < 1.0


def test_val_split_size_and_determinism():
    ts = _toy_data(n=200)
    model = build_model(_mlp_config(12), seed=0)
    cfg = TrainConfig(epochs=1, batch_size=32, val_fraction=0.1, seed=9)
    result = fit(model, ts, cfg)
    assert result.history[0].val_loss is not None
    # split derives from the named sub-stream: last floor(0.1*200) of the perm
    split = substream(9, "split").permutation(200)
    assert len(split[180:]) == 20
    assert len(set(split[:180]) & set(split[180:])) == 0


def test_history_and_ema_one_batch_epoch():
    ts = _toy_data(n=24)
    model = build_model(_mlp_config(12), seed=2)
    cfg = TrainConfig(epochs=1, batch_size=24, seed=1)
    result = fit(model, ts, cfg)
    rec = result.history[0]
    # bias-corrected EMA after exactly one step equals that step's raw loss
    assert rec.ema_loss == pytest.approx(rec.train_loss, abs=1e-12)


def test_fit_reproducible_same_seed_and_workers():
    ts = _toy_data(n=300, seed=3)
    cfg = TrainConfig(epochs=3, batch_size=50, seed=11,
                      optimizer=OptimizerConfig(kind="adam", base_lr=1e-3))
    r1 = fit(build_model(_mlp_config(12), seed=4), ts, cfg)
    r2 = fit(build_model(_mlp_config(12), seed=4), ts, cfg)
    for a, b in zip(r1.history, r2.history):
        assert a.train_loss == b.train_loss and a.ema_loss == b.ema_loss
    for k, v in r1.model.parameters().items():
        np.testing.assert_array_equal(v, r2.model.parameters()[k])


def test_fit_with_augmentation_and_workers_runs():
    ts = _toy_data(n=120, s=16)
    model = build_model(_mlp_config(16), seed=5)
    cfg = TrainConfig(epochs=2, batch_size=40, workers=2, max_shift=2, seed=3)
    result = fit(model, ts, cfg)
    assert len(result.history) == 2


def test_swa_model_returned():
    ts = _toy_data(n=100)
    model = build_model(_mlp_config(12), seed=6)
    cfg = TrainConfig(epochs=4, batch_size=50, swa_start_epoch=2, seed=2)
    result = fit(model, ts, cfg)
    assert result.swa_model is not None
    # SWA params differ from final params but share shapes
    same = all(np.array_equal(v, result.model.parameters()[k])
               for k, v in result.swa_model.parameters().items())
    assert not same


def test_config_invalid_combinations():
    with pytest.raises(ConfigInvalid):
        TrainConfig(batch_size=10, workers=3).validate()
    with pytest.raises(ConfigInvalid):
        TrainConfig(val_fraction=0.7).validate()
    with pytest.raises(ConfigInvalid):
        TrainConfig(precision="f16").validate()


def test_diverged_keeps_partial_history(tmp_path):
    # one batch per epoch: the epoch-0 loss is measured before the first
    # (weight-destroying) update, epoch 1 then hits non-finite values
    ts = _toy_data(n=200)
    model = build_model(_mlp_config(12), seed=7)
    cfg = TrainConfig(epochs=50, batch_size=200, seed=1,
                      optimizer=OptimizerConfig(kind="adam", base_lr=1e-3),
                      schedule=ScheduleConfig(kind="constant", lr=1e35))
    out = tmp_path / "run"
    with np.errstate(all="ignore"):
        with pytest.raises(Diverged) as exc:
            fit(model, ts, cfg, out_dir=out)
    assert len(exc.value.history) >= 1
    lines = (out / "history.jsonl").read_text().splitlines()
    assert len(lines) == len(exc.value.history)  # completed epochs only


# ---------------------------------------------------------------------------
# parallel gradient averaging
# ---------------------------------------------------------------------------

def test_parallel_identical_shards_equal_single():
    model = build_model(_mlp_config(10), seed=8, dtype=np.float64)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(16, 10))
    y = rng.integers(0, 256, size=16)
    loss1, g1 = parallel_grad(model, [x], [y])
    loss4, g4 = parallel_grad(model, [x, x, x, x], [y, y, y, y])
    assert loss1 == pytest.approx(loss4)
    for k in g1:
        np.testing.assert_allclose(g1[k], g4[k], atol=1e-14)


@pytest.mark.parametrize("workers", [1, 2, 4, 8])
def test_parallel_equals_full_batch_without_batchnorm(workers):
    model = build_model(_mlp_config(10, hidden=(16, 16)), seed=9, dtype=np.float64)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(64, 10))
    y = rng.integers(0, 256, size=64)
    _, g_full = backward(model.clone(), x, y)
    bounds = np.linspace(0, 64, workers + 1).astype(int)
    shard_x = [x[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    shard_y = [y[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    _, g_par = parallel_grad(model, shard_x, shard_y)
    for k in g_full:
        denom = max(np.abs(g_full[k]).max(), 1e-12)
        assert np.abs(g_par[k] - g_full[k]).max() / denom < 1e-10


def test_parallel_single_worker_is_plain_backward():
    model = build_model(_mlp_config(10), seed=10, dtype=np.float64)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(8, 10))
    y = rng.integers(0, 256, size=8)
    loss_a, g_a = backward(model.clone(), x, y)
    loss_b, g_b = parallel_grad(model, [x], [y])
    assert loss_a == loss_b
    for k in g_a:
        np.testing.assert_array_equal(g_a[k], g_b[k])


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    ts = _toy_data(n=64)
    model = build_model(_mlp_config(12), seed=11)
    cfg = TrainConfig(epochs=1, batch_size=32, seed=4)
    result = fit(model, ts, cfg)
    params = result.model.parameters()
    state = init_opt_state(params)
    state.t = 17
    state.m = {k: np.full_like(v, 0.25) for k, v in params.items()}
    prefix = tmp_path / "ck"
    checkpoint_save(result.model, state, prefix, step=42)
    loaded, lstate, step = checkpoint_load(prefix)
    assert step == 42 and lstate.t == 17
    for k, v in params.items():
        np.testing.assert_array_equal(loaded.parameters()[k], v)
        np.testing.assert_array_equal(lstate.m[k], state.m[k])
    prefix2 = tmp_path / "ck2"
    checkpoint_save(loaded, lstate, prefix2, step=42)
    assert (tmp_path / "ck.json").read_bytes() == (tmp_path / "ck2.json").read_bytes()
    assert (tmp_path / "ck.bin").read_bytes() == (tmp_path / "ck2.bin").read_bytes()


def test_checkpoint_restores_bn_running_stats(tmp_path):
    cfg = ModelConfig(input_width=16, layers=[
        LayerSpec(kind="conv1d", filters=2, kernel=3, padding="same"),
        LayerSpec(kind="batchnorm"), LayerSpec(kind="flatten"),
        LayerSpec(kind="softmax_ce_head")])
    model = build_model(cfg, seed=12)
    rng = np.random.default_rng(3)
    model.forward(rng.normal(size=(8, 16)).astype(np.float32))  # move running stats
    state = init_opt_state(model.parameters())
    checkpoint_save(model, state, tmp_path / "bn")
    loaded, _, _ = checkpoint_load(tmp_path / "bn")
    for k, v in model.state_tensors().items():
        np.testing.assert_array_equal(loaded.state_tensors()[k], v)


def test_checkpoint_manifest_mismatch(tmp_path):
    model = build_model(_mlp_config(12), seed=13)
    checkpoint_save(model, init_opt_state(model.parameters()), tmp_path / "a")
    with pytest.raises(ManifestMismatch):
        checkpoint_load(tmp_path / "a", expect_config=_mlp_config(14))


def test_resume_matches_uninterrupted_run(tmp_path):
    ts = _toy_data(n=200, seed=5)
    cfg = TrainConfig(epochs=3, batch_size=50, seed=21,
                      optimizer=OptimizerConfig(kind="adam", base_lr=1e-3),
                      schedule=ScheduleConfig(kind="exp_cosine", lr_max=1e-3,
                                              total_steps=12))
    straight = fit(build_model(_mlp_config(12), seed=14), ts, cfg)

    cfg2 = TrainConfig(**{**cfg.__dict__, "epochs": 2})
    cfg2.schedule = ScheduleConfig(kind="exp_cosine", lr_max=1e-3, total_steps=12)
    part1 = fit(build_model(_mlp_config(12), seed=14), ts, cfg2, out_dir=tmp_path)
    model2, opt_state, _ = checkpoint_load(tmp_path / "ckpt_final")
    resumed = fit(model2, ts, cfg, opt_state=opt_state, initial_epoch=2)

    for k, v in straight.model.parameters().items():
        np.testing.assert_array_equal(v, resumed.model.parameters()[k])


def test_history_jsonl_format(tmp_path):
    ts = _toy_data(n=64)
    model = build_model(_mlp_config(12), seed=15)
    cfg = TrainConfig(epochs=2, batch_size=32, val_fraction=0.25, seed=6)
    fit(model, ts, cfg, out_dir=tmp_path)
    lines = (tmp_path / "history.jsonl").read_text().splitlines()
    assert len(lines) == 2
    rec = json.loads(lines[0])
    assert {"epoch", "train_loss", "ema_loss", "val_loss", "lr_last",
            "ge_at_checkpoint", "wall_time_s"} <= set(rec)
