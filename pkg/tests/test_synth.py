"""Synthetic masked-leakage generator: construction identities and statistics."""

import numpy as np
import pytest

from scaforge.errors import InvalidConfig
from scaforge.synth import SynthConfig, generate, hamming_weight
from scaforge.traces import AES_SBOX


def test_hamming_weight_values():
    assert hamming_weight(0x00) == 0
    assert hamming_weight(0xFF) == 8
    assert hamming_weight(0x63) == 4  # 0110_0011


def test_hamming_weight_complement_identity():
    for x in range(256):
        assert hamming_weight(x) + hamming_weight(x ^ 0xFF) == 8


def test_noiseless_mask_leak_exact():
    cfg = SynthConfig(n_traces=200, n_samples=32, sigma=0.0, leak_pos_masked=5,
                      leak_pos_mask=20, max_desync=0, seed=1)
    ts = generate(cfg)
    expect = hamming_weight(ts.masks[:, 0])
    np.testing.assert_array_equal(ts.samples[:, 20], expect.astype(np.float32))


def test_noiseless_masked_leak_construction_identity():
    cfg = SynthConfig(n_traces=300, n_samples=16, sigma=0.0, leak_pos_masked=3,
                      leak_pos_mask=10, seed=2)
    ts = generate(cfg)
    for i in range(ts.n_traces):
        hw = hamming_weight(int(ts.labels[i]) ^ int(ts.masks[i, 0]))
        assert ts.samples[i, 3] == hw


def test_labels_match_sbox_of_pt_xor_key():
    cfg = SynthConfig(n_traces=50, n_samples=8, sigma=0.5, leak_pos_masked=1,
                      leak_pos_mask=6, key_mode="random", seed=3, target_byte=4)
    ts = generate(cfg)
    expect = AES_SBOX[ts.plaintexts[:, 4] ^ ts.keys[:, 4]]
    np.testing.assert_array_equal(ts.labels, expect)


def test_variance_at_leak_and_nonleak():
    # Var(HW of a uniform byte) = 8 * 1/4 = 2 (binomial(8, 1/2)), verified
    # by brute force over all byte values below.
    hw = np.array([hamming_weight(v) for v in range(256)], dtype=np.float64)
    assert abs(hw.var() - 2.0) < 1e-12

    cfg = SynthConfig(n_traces=50000, n_samples=12, sigma=1.0, leak_pos_masked=2,
                      leak_pos_mask=9, seed=4)
    ts = generate(cfg)
    var_nonleak = ts.samples[:, 5].astype(np.float64).var()
    var_mask = ts.samples[:, 9].astype(np.float64).var()
    assert abs(var_nonleak - 1.0) < 0.05
    assert abs(var_mask - 3.0) < 0.1


def test_deterministic_per_seed():
    cfg = SynthConfig(n_traces=64, n_samples=24, sigma=1.0, leak_pos_masked=4,
                      leak_pos_mask=16, max_desync=3, key_mode="random", seed=7)
    a, b = generate(cfg), generate(cfg)
    assert a == b
    c = generate(SynthConfig(**{**cfg.__dict__, "seed": 8}))
    assert not (a == c)


def test_first_order_security_of_masked_leak():
    cfg = SynthConfig(n_traces=50000, n_samples=8, sigma=0.5, leak_pos_masked=2,
                      leak_pos_mask=6, seed=5)
    ts = generate(cfg)
    leak = ts.samples[:, 2].astype(np.float64)
    labels = ts.labels.astype(np.float64)
    rho = np.corrcoef(labels, leak)[0, 1]
    assert abs(rho) < 0.02


def test_unprotected_leaks_label_directly():
    cfg = SynthConfig(n_traces=100, n_samples=10, sigma=0.0, leak_pos_masked=3,
                      leak_pos_mask=7, unprotected=True, seed=6)
    ts = generate(cfg)
    assert np.all(ts.masks == 0)
    np.testing.assert_array_equal(ts.samples[:, 3],
                                  hamming_weight(ts.labels).astype(np.float32))
    assert np.all(ts.samples[:, 7] == 0.0)  # HW(0) adds nothing


def test_fixed_key_is_constant():
    key = bytes(range(16))
    ts = generate(SynthConfig(n_traces=20, n_samples=8, leak_pos_masked=1,
                              leak_pos_mask=5, key_mode="fixed", key=key, seed=9))
    assert np.all(ts.keys == np.frombuffer(key, dtype=np.uint8))


def test_desync_shifts_whole_trace():
    from scaforge.traces import shift_edge

    base = SynthConfig(n_traces=30, n_samples=40, sigma=1.0, leak_pos_masked=10,
                       leak_pos_mask=25, max_desync=0, seed=11)
    ts0 = generate(base)
    ts1 = generate(SynthConfig(**{**base.__dict__, "max_desync": 5}))
    # shifts are drawn after keys/plaintexts/masks/noise, so the desynced set
    # must be an edge-shifted copy of the synchronized one, trace by trace
    seen_shifts = set()
    for i in range(ts0.n_traces):
        matches = [d for d in range(-5, 6)
                   if np.array_equal(ts1.samples[i], shift_edge(ts0.samples[i], d))]
        assert matches, f"trace {i} is not a shift of its synchronized twin"
        seen_shifts.add(matches[0])
    assert len(seen_shifts) > 3  # the jitter actually varies


@pytest.mark.parametrize("bad", [
    dict(leak_pos_masked=5, leak_pos_mask=5),
    dict(sigma=-1.0),
    dict(max_desync=100),
    dict(key_mode="nope"),
    dict(leak_pos_masked=99),
    dict(target_byte=16),
])
def test_invalid_configs(bad):
    cfg = SynthConfig(n_traces=10, n_samples=20, leak_pos_masked=2, leak_pos_mask=10)
    for k, v in bad.items():
        setattr(cfg, k, v)
    with pytest.raises(InvalidConfig):
        generate(cfg)
