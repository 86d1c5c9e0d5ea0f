#!/usr/bin/env python3
"""Regenerate the checked-in SCAT fixtures under tests/data/.

The ascad_toy fixture uses a fully deterministic content rule so that any
other producer (e.g. the HDF5 ingest converter) can recreate the identical
file byte for byte:

    samples[i, t]    = ((i*7 + t*3) % 256) - 128      (i8, 5 x 700)
    key[i, j]        = j                              (fixed key 00..0f)
    plaintext[i, j]  = (i*13 + j) % 256
    mask[i, j]       = (i + j*5) % 256                (mask_len 16)
    label[i]         = SBox(plaintext[i, 2] ^ key[i, 2])
"""

import pathlib
import struct
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from scaforge.synth import SynthConfig, generate  # noqa: E402
from scaforge.traces import AES_SBOX, TraceSet, save_traceset  # noqa: E402

OUT = pathlib.Path(__file__).resolve().parents[1] / "tests" / "data"


def ascad_toy() -> TraceSet:
    i = np.arange(5)[:, None]
    t = np.arange(700)[None, :]
    samples = (((i * 7 + t * 3) % 256) - 128).astype(np.int8)
    j = np.arange(16)[None, :]
    keys = np.tile(np.arange(16, dtype=np.uint8), (5, 1))
    plaintexts = ((i * 13 + j) % 256).astype(np.uint8)
    masks = ((i + j * 5) % 256).astype(np.uint8)
    labels = AES_SBOX[plaintexts[:, 2] ^ keys[:, 2]]
    return TraceSet(samples=samples, keys=keys, plaintexts=plaintexts,
                    masks=masks, labels=labels)


def main():
    OUT.mkdir(parents=True, exist_ok=True)

    save_traceset(ascad_toy(), OUT / "ascad_toy.scat")

    rng = np.random.default_rng(2024)
    noise = TraceSet(samples=rng.integers(-3000, 3000, size=(12, 64), dtype=np.int16))
    save_traceset(noise, OUT / "noise_i16.scat")

    synth = generate(SynthConfig(n_traces=16, n_samples=40, sigma=1.0,
                                 leak_pos_masked=10, leak_pos_mask=30,
                                 unprotected=True, seed=99))
    labeled = TraceSet(samples=synth.samples, labels=synth.labels)
    save_traceset(labeled, OUT / "synth_f32_labels.scat")

    good = (OUT / "synth_f32_labels.scat").read_bytes()
    (OUT / "bad_magic.scat").write_bytes(b"XXXX" + good[4:])
    (OUT / "bad_version.scat").write_bytes(good[:4] + struct.pack("<H", 9) + good[6:])
    (OUT / "truncated.scat").write_bytes(good[:len(good) - 7])

    for f in sorted(OUT.iterdir()):
        print(f"{f.name}: {f.stat().st_size} bytes")


if __name__ == "__main__":
    main()
