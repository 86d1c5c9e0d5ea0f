#!/usr/bin/env python3
"""Build the tiny committed HDF5 fixtures under tests/data/.

toy_ascad.h5 follows the real ASCAD layout (Profiling_traces/Attack_traces
groups, int8 traces, uint8 labels, compound metadata) and its profiling
group carries the deterministic content rule shared with the SCAT golden
file of the main workbench:

    samples[i, t]   = ((i*7 + t*3) % 256) - 128      (5 x 700, i8)
    key[i, j]       = j
    plaintext[i, j] = (i*13 + j) % 256
    mask[i, j]      = (i + j*5) % 256
    label[i]        = SBox(plaintext[i, 2] ^ key[i, 2])

toy_raw.h5 mimics a raw-layout capture (longer traces, no labels) for
window extraction tests.
"""

import pathlib
import sys

import h5py
import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))
from ascad2scat.convert import AES_SBOX  # noqa: E402

OUT = pathlib.Path(__file__).resolve().parents[1] / "tests" / "data"

META_DTYPE = np.dtype([("plaintext", np.uint8, (16,)),
                       ("key", np.uint8, (16,)),
                       ("masks", np.uint8, (16,))])


def profiling_content():
    i = np.arange(5)[:, None]
    t = np.arange(700)[None, :]
    samples = (((i * 7 + t * 3) % 256) - 128).astype(np.int8)
    j = np.arange(16)[None, :]
    keys = np.tile(np.arange(16, dtype=np.uint8), (5, 1))
    plaintexts = ((i * 13 + j) % 256).astype(np.uint8)
    masks = ((i + j * 5) % 256).astype(np.uint8)
    labels = AES_SBOX[plaintexts[:, 2] ^ keys[:, 2]]
    return samples, keys, plaintexts, masks, labels


def fill_group(group, samples, keys, plaintexts, masks, labels):
    group.create_dataset("traces", data=samples)
    group.create_dataset("labels", data=labels)
    meta = np.zeros(len(samples), dtype=META_DTYPE)
    meta["plaintext"], meta["key"], meta["masks"] = plaintexts, keys, masks
    group.create_dataset("metadata", data=meta)


def main():
    OUT.mkdir(parents=True, exist_ok=True)

    with h5py.File(OUT / "toy_ascad.h5", "w") as f:
        fill_group(f.create_group("Profiling_traces"), *profiling_content())
        rng = np.random.default_rng(7)
        n = 3
        samples = rng.integers(-128, 128, size=(n, 700), dtype=np.int8)
        keys = np.tile(rng.integers(0, 256, size=16, dtype=np.uint8), (n, 1))
        plaintexts = rng.integers(0, 256, size=(n, 16), dtype=np.uint8)
        masks = rng.integers(0, 256, size=(n, 16), dtype=np.uint8)
        labels = AES_SBOX[plaintexts[:, 2] ^ keys[:, 2]]
        fill_group(f.create_group("Attack_traces"), samples, keys, plaintexts,
                   masks, labels)

    with h5py.File(OUT / "toy_raw.h5", "w") as f:
        rng = np.random.default_rng(13)
        n = 8
        samples = rng.integers(-128, 128, size=(n, 2000), dtype=np.int8)
        g = f.create_group("Profiling_traces")
        g.create_dataset("traces", data=samples)
        meta = np.zeros(n, dtype=META_DTYPE)
        meta["plaintext"] = rng.integers(0, 256, size=(n, 16), dtype=np.uint8)
        meta["key"] = rng.integers(0, 256, size=(n, 16), dtype=np.uint8)
        meta["masks"] = rng.integers(0, 256, size=(n, 16), dtype=np.uint8)
        g.create_dataset("metadata", data=meta)

    for f in sorted(OUT.iterdir()):
        print(f"{f.name}: {f.stat().st_size} bytes")


if __name__ == "__main__":
    main()
