"""SNR analytics, saliency, and CSV export."""

import numpy as np
import pytest

from scaforge.analysis import (
    export_csv,
    partition_by_label,
    partition_by_mask,
    partition_by_masked_sbox,
    saliency,
    snr,
)
from scaforge.errors import InsufficientClasses, ShapeMismatch
from scaforge.nn import LayerSpec, ModelConfig, build_model
from scaforge.synth import SynthConfig, generate
from scaforge.traces import TraceSet


def test_snr_pure_noise_is_small():
    rng = np.random.default_rng(0)
    samples = rng.normal(0, 1, size=(20000, 8)).astype(np.float32)
    classes = rng.integers(0, 256, size=20000)
    report = snr(TraceSet(samples=samples), classes)
    assert np.all(report.values < 0.05)
    assert not report.degenerate


def test_snr_unprotected_leak_matches_analytic_ratio():
    # between-class Var of means = Var(HW over uniform bytes) = 2, within = sigma^2 = 1
    cfg = SynthConfig(n_traces=50000, n_samples=10, sigma=1.0, leak_pos_masked=4,
                      leak_pos_mask=8, unprotected=True, seed=1)
    ts = generate(cfg)
    report = snr(ts, partition_by_label(ts))
    assert abs(report.values[4] - 2.0) < 0.4
    assert report.argmax == 4
    others = np.delete(report.values, 4)
    assert np.all(others < 0.05)


def test_snr_mask_partition_finds_mask_leak():
    cfg = SynthConfig(n_traces=30000, n_samples=10, sigma=1.0, leak_pos_masked=2,
                      leak_pos_mask=7, seed=2)
    ts = generate(cfg)
    report = snr(ts, partition_by_mask(ts))
    assert report.argmax == 7
    report2 = snr(ts, partition_by_masked_sbox(ts, target_byte=2))
    assert report2.argmax == 2
    # with masking on, the label partition sees neither sample clearly
    report3 = snr(ts, partition_by_label(ts))
    assert np.all(report3.values < 0.05)


def test_snr_identical_traces_degenerate_guard():
    samples = np.tile(np.arange(6, dtype=np.float32), (40, 1))
    classes = np.arange(40) % 4
    report = snr(TraceSet(samples=samples), classes)
    assert report.degenerate
    assert np.all(report.values == 0.0)


def test_snr_insufficient_classes():
    samples = np.random.default_rng(0).normal(size=(10, 4)).astype(np.float32)
    with pytest.raises(InsufficientClasses):
        snr(TraceSet(samples=samples), np.zeros(10, dtype=int))


def test_snr_singleton_classes_are_excluded():
    rng = np.random.default_rng(3)
    samples = rng.normal(size=(101, 4)).astype(np.float32)
    classes = np.concatenate([np.repeat([1, 2], 50), [3]])  # class 3 has one member
    report = snr(TraceSet(samples=samples), classes)
    assert report.class_counts[3] == 1
    trimmed = snr(TraceSet(samples=samples[:100]), classes[:100])
    np.testing.assert_allclose(report.values, trimmed.values, rtol=1e-12)


def test_snr_affine_invariance():
    rng = np.random.default_rng(4)
    samples = rng.normal(size=(2000, 6)).astype(np.float32)
    samples += rng.integers(0, 4, size=(2000, 1)).astype(np.float32)  # some signal
    classes = rng.integers(0, 16, size=2000)
    base = snr(TraceSet(samples=samples), classes)
    a = np.array([2.0, -3.0, 0.5, 10.0, 1.0, -0.25], dtype=np.float32)
    b = np.array([1.0, 0.0, -5.0, 2.0, 7.0, 3.0], dtype=np.float32)
    scaled = snr(TraceSet(samples=(samples * a + b).astype(np.float32)), classes)
    ok = base.values > 1e-12
    rel = np.abs(scaled.values[ok] - base.values[ok]) / base.values[ok]
    assert rel.max() < 1e-6


def test_snr_order_invariance():
    rng = np.random.default_rng(5)
    samples = rng.normal(size=(500, 5)).astype(np.float32)
    classes = rng.integers(0, 8, size=500)
    perm = rng.permutation(500)
    a = snr(TraceSet(samples=samples), classes)
    b = snr(TraceSet(samples=samples[perm]), classes[perm])
    np.testing.assert_allclose(a.values, b.values, rtol=1e-12)


def test_snr_accepts_callable_partition():
    rng = np.random.default_rng(6)
    samples = rng.normal(size=(64, 3)).astype(np.float32)
    report = snr(TraceSet(samples=samples), lambda i: i % 4)
    assert report.values.shape == (3,)


# ---------------------------------------------------------------------------
# saliency
# ---------------------------------------------------------------------------

def _labeled_ts(samples, labels):
    return TraceSet(samples=samples.astype(np.float32),
                    labels=np.asarray(labels, dtype=np.uint8))


def test_saliency_zero_weights_zero_saliency():
    model = build_model(ModelConfig(input_width=6, layers=[
        LayerSpec(kind="dense", units=4), LayerSpec(kind="relu"),
        LayerSpec(kind="softmax_ce_head")]), seed=0)
    model.layers[0].w[:] = 0.0
    rng = np.random.default_rng(0)
    ts = _labeled_ts(rng.normal(size=(10, 6)), rng.integers(0, 256, size=10))
    values = saliency(model, ts)
    np.testing.assert_array_equal(values, 0.0)


def test_saliency_single_weight_model_supported_at_one_sample():
    model = build_model(ModelConfig(input_width=5, layers=[
        LayerSpec(kind="softmax_ce_head")]), seed=1)
    w = np.zeros_like(model.layers[0].w)
    w[2, :] = np.random.default_rng(2).normal(size=256)  # only sample 2 matters
    model.layers[0].w = w
    rng = np.random.default_rng(3)
    ts = _labeled_ts(rng.normal(size=(20, 5)), rng.integers(0, 256, size=20))
    values = saliency(model, ts)
    assert values[2] > 0
    np.testing.assert_array_equal(np.delete(values, 2), 0.0)


def test_saliency_width_mismatch():
    model = build_model(ModelConfig(input_width=5, layers=[
        LayerSpec(kind="softmax_ce_head")]), seed=0)
    rng = np.random.default_rng(1)
    ts = _labeled_ts(rng.normal(size=(4, 7)), rng.integers(0, 256, size=4))
    with pytest.raises(ShapeMismatch):
        saliency(model, ts)


def test_saliency_restores_model_mode():
    model = build_model(ModelConfig(input_width=4, layers=[
        LayerSpec(kind="softmax_ce_head")]), seed=0)
    model.set_mode("train")
    rng = np.random.default_rng(2)
    ts = _labeled_ts(rng.normal(size=(6, 4)), rng.integers(0, 256, size=6))
    saliency(model, ts)
    assert model.mode == "train"


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def test_export_csv_exact_fixture(tmp_path):
    path = tmp_path / "one.csv"
    export_csv({"snr": [1.5]}, path)
    assert path.read_text() == "index,snr\n0,1.5\n"


def test_export_csv_line_count(tmp_path):
    path = tmp_path / "two.csv"
    export_csv({"a": [1.0, 2.0], "b": [3.0, 4.0]}, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 3
    assert lines[0] == "index,a,b"


def test_export_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(7)
    values = rng.normal(size=37)
    path = tmp_path / "rt.csv"
    export_csv({"v": values}, path)
    parsed = np.loadtxt(path, delimiter=",", skiprows=1, usecols=1)
    np.testing.assert_allclose(parsed, values, atol=1e-9, rtol=0)


def test_export_csv_no_index(tmp_path):
    path = tmp_path / "ge.csv"
    export_csv({"n_traces": [1.0, 2.0], "mean_rank": [10.0, 5.0]}, path,
               include_index=False)
    assert path.read_text().splitlines()[0] == "n_traces,mean_rank"


def test_export_csv_length_mismatch(tmp_path):
    with pytest.raises(ValueError):
        export_csv({"a": [1.0], "b": [1.0, 2.0]}, tmp_path / "x.csv")
