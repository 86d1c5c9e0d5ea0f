"""Synthetic first-order boolean-masked AES S-box leakage.

Generates trace sets that exercise the whole pipeline without real captures.
Each trace leaks the Hamming weight of the masked S-box output at one sample
and the Hamming weight of the mask at another, on top of i.i.d. Gaussian
noise. With masking active neither leak sample alone depends on the label,
which makes the recovery problem genuinely second-order; the `unprotected`
flag collapses it to first-order for fast tests.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig
from .rng import substream
from .traces import AES_SBOX, DEFAULT_TARGET_BYTE, TraceSet, shift_edge

__all__ = ["SynthConfig", "generate", "hamming_weight"]

_HW_TABLE = np.array([bin(v).count("1") for v in range(256)], dtype=np.uint8)
_HW_TABLE.flags.writeable = False


def hamming_weight(x):
    """Number of set bits of a byte (or elementwise over a uint8 array)."""
    return _HW_TABLE[np.asarray(x, dtype=np.uint8)] if np.ndim(x) else int(_HW_TABLE[int(x)])


@dataclass
class SynthConfig:
    n_traces: int = 10000
    n_samples: int = 100
    sigma: float = 1.0                  # noise std, trace units
    leak_pos_masked: int = 30           # sample carrying HW(SBox(p^k) ^ m)
    leak_pos_mask: int = 70             # sample carrying HW(m)
    max_desync: int = 0                 # uniform shift in [-max_desync, +max_desync]
    key_mode: str = "fixed"             # "fixed" | "random"
    key: bytes = bytes(range(16))       # used when key_mode == "fixed"
    unprotected: bool = False           # force mask 0: HW(label) leaks directly
    target_byte: int = DEFAULT_TARGET_BYTE
    seed: int = 0

    def validate(self):
        if self.n_traces < 0 or self.n_samples <= 0:
            raise InvalidConfig("n_traces must be >= 0, n_samples > 0")
        if not (0 <= self.leak_pos_masked < self.n_samples
                and 0 <= self.leak_pos_mask < self.n_samples):
            raise InvalidConfig("leak positions must lie inside the trace")
        if self.leak_pos_masked == self.leak_pos_mask:
            raise InvalidConfig("leak positions must be distinct")
        if self.sigma < 0:
            raise InvalidConfig("sigma must be >= 0")
        if not 0 <= self.max_desync < self.n_samples / 4:
            raise InvalidConfig("max_desync must satisfy 0 <= max_desync < n_samples/4")
        if self.key_mode not in ("fixed", "random"):
            raise InvalidConfig(f"key_mode {self.key_mode!r} not in (fixed, random)")
        if self.key_mode == "fixed" and len(self.key) != 16:
            raise InvalidConfig("fixed key must be 16 bytes")
        if not 0 <= self.target_byte <= 15:
            raise InvalidConfig("target_byte must be in 0..15")


def generate(cfg: SynthConfig) -> TraceSet:
    """Generate a masked-S-box leakage trace set; bit-deterministic per seed.

    Draw order is fixed (keys, plaintexts, masks, noise, shifts) from the
    'data' sub-stream of cfg.seed, so downstream parallelism cannot change
    the output.
    """
    cfg.validate()
    rng = substream(cfg.seed, "data")
    n, s = cfg.n_traces, cfg.n_samples

    if cfg.key_mode == "fixed":
        keys = np.tile(np.frombuffer(bytes(cfg.key), dtype=np.uint8), (n, 1))
    else:
        keys = rng.integers(0, 256, size=(n, 16), dtype=np.uint8)
    plaintexts = rng.integers(0, 256, size=(n, 16), dtype=np.uint8)
    if cfg.unprotected:
        masks = np.zeros((n, 1), dtype=np.uint8)
    else:
        masks = rng.integers(0, 256, size=(n, 1), dtype=np.uint8)

    labels = AES_SBOX[plaintexts[:, cfg.target_byte] ^ keys[:, cfg.target_byte]]
    samples = rng.normal(0.0, cfg.sigma, size=(n, s)).astype(np.float32)
    samples[:, cfg.leak_pos_masked] += hamming_weight(labels ^ masks[:, 0])
    samples[:, cfg.leak_pos_mask] += hamming_weight(masks[:, 0])

    if cfg.max_desync > 0:
        shifts = rng.integers(-cfg.max_desync, cfg.max_desync + 1, size=n)
        for i in range(n):
            samples[i] = shift_edge(samples[i], int(shifts[i]))

    return TraceSet(samples=samples, keys=keys, plaintexts=plaintexts,
                    masks=masks, labels=labels)
