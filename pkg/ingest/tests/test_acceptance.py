"""Acceptance: ingest losslessness on the committed toy fixture (< 10 s)."""

import pathlib
import time

import numpy as np

from ascad2scat.convert import AES_SBOX, IngestJob, convert, verify
from ascad2scat.scat import read_scat

DATA = pathlib.Path(__file__).parent / "data"


def test_criterion_10_ingest_losslessness(tmp_path):
    t0 = time.time()
    toy = DATA / "toy_ascad.h5"
    a, b = tmp_path / "a.scat", tmp_path / "b.scat"

    job = IngestJob(input_path=str(toy), group="profiling", output_path=str(a))
    summary = convert(job)
    assert summary == {"n_traces": 5, "n_samples": 700, "dtype": "int8"}

    report = verify(a, toy, job)
    assert report["ok"]

    scat = read_scat(a)
    recomputed = AES_SBOX[scat["plaintexts"][:, 2] ^ scat["keys"][:, 2]]
    np.testing.assert_array_equal(scat["labels"], recomputed)

    convert(IngestJob(input_path=str(toy), group="profiling", output_path=str(b)))
    assert a.read_bytes() == b.read_bytes()

    elapsed = time.time() - t0
    assert elapsed < 10
    print(f"\nPASS: criterion 10 — convert+verify lossless, labels match "
          f"recomputation, double conversion byte-identical ({elapsed:.2f}s)")
