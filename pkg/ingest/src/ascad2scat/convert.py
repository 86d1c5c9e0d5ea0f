"""ASCAD-style HDF5 to SCAT conversion and lossless-ness verification.

ASCAD databases hold one HDF5 group per split (Profiling_traces /
Attack_traces), each with a `traces` matrix, a `labels` vector, and a
compound `metadata` table carrying per-trace plaintext/key/masks. Group,
dataset, and field names drifted between the fixed-key and variable-key
campaigns, so the name mapping is data, not code: pass a JSON mapping to
override any of the defaults below.

Conversion streams the trace matrix in row chunks (bounded memory regardless
of input size) and preserves the sample dtype exactly; labels are copied
verbatim when the file has them and derived as SBox(plaintext ^ key) on the
target byte otherwise.
"""

import json
from dataclasses import dataclass, field
from typing import Optional

import h5py
import numpy as np

from .scat import ScatWriter, read_scat

__all__ = ["DEFAULT_MAPPING", "IngestJob", "MissingDataset", "Mismatch",
           "ShapeMismatch", "convert", "verify"]

CHUNK_ROWS = 4096
TARGET_BYTE = 2  # conventional ASCAD target key byte

DEFAULT_MAPPING = {
    "groups": {"profiling": "Profiling_traces", "attack": "Attack_traces"},
    "traces": "traces",
    "labels": "labels",
    "metadata": "metadata",
    "fields": {"plaintext": "plaintext", "key": "key", "masks": "masks"},
}

# FIPS-197 forward S-box (labels are SBox(plaintext ^ key)).
AES_SBOX = np.array([
    0x63, 0x7C, 0x77, 0x7B, 0xF2, 0x6B, 0x6F, 0xC5, 0x30, 0x01, 0x67, 0x2B, 0xFE, 0xD7, 0xAB, 0x76,
    0xCA, 0x82, 0xC9, 0x7D, 0xFA, 0x59, 0x47, 0xF0, 0xAD, 0xD4, 0xA2, 0xAF, 0x9C, 0xA4, 0x72, 0xC0,
    0xB7, 0xFD, 0x93, 0x26, 0x36, 0x3F, 0xF7, 0xCC, 0x34, 0xA5, 0xE5, 0xF1, 0x71, 0xD8, 0x31, 0x15,
    0x04, 0xC7, 0x23, 0xC3, 0x18, 0x96, 0x05, 0x9A, 0x07, 0x12, 0x80, 0xE2, 0xEB, 0x27, 0xB2, 0x75,
    0x09, 0x83, 0x2C, 0x1A, 0x1B, 0x6E, 0x5A, 0xA0, 0x52, 0x3B, 0xD6, 0xB3, 0x29, 0xE3, 0x2F, 0x84,
    0x53, 0xD1, 0x00, 0xED, 0x20, 0xFC, 0xB1, 0x5B, 0x6A, 0xCB, 0xBE, 0x39, 0x4A, 0x4C, 0x58, 0xCF,
    0xD0, 0xEF, 0xAA, 0xFB, 0x43, 0x4D, 0x33, 0x85, 0x45, 0xF9, 0x02, 0x7F, 0x50, 0x3C, 0x9F, 0xA8,
    0x51, 0xA3, 0x40, 0x8F, 0x92, 0x9D, 0x38, 0xF5, 0xBC, 0xB6, 0xDA, 0x21, 0x10, 0xFF, 0xF3, 0xD2,
    0xCD, 0x0C, 0x13, 0xEC, 0x5F, 0x97, 0x44, 0x17, 0xC4, 0xA7, 0x7E, 0x3D, 0x64, 0x5D, 0x19, 0x73,
    0x60, 0x81, 0x4F, 0xDC, 0x22, 0x2A, 0x90, 0x88, 0x46, 0xEE, 0xB8, 0x14, 0xDE, 0x5E, 0x0B, 0xDB,
    0xE0, 0x32, 0x3A, 0x0A, 0x49, 0x06, 0x24, 0x5C, 0xC2, 0xD3, 0xAC, 0x62, 0x91, 0x95, 0xE4, 0x79,
    0xE7, 0xC8, 0x37, 0x6D, 0x8D, 0xD5, 0x4E, 0xA9, 0x6C, 0x56, 0xF4, 0xEA, 0x65, 0x7A, 0xAE, 0x08,
    0xBA, 0x78, 0x25, 0x2E, 0x1C, 0xA6, 0xB4, 0xC6, 0xE8, 0xDD, 0x74, 0x1F, 0x4B, 0xBD, 0x8B, 0x8A,
    0x70, 0x3E, 0xB5, 0x66, 0x48, 0x03, 0xF6, 0x0E, 0x61, 0x35, 0x57, 0xB9, 0x86, 0xC1, 0x1D, 0x9E,
    0xE1, 0xF8, 0x98, 0x11, 0x69, 0xD9, 0x8E, 0x94, 0x9B, 0x1E, 0x87, 0xE9, 0xCE, 0x55, 0x28, 0xDF,
    0x8C, 0xA1, 0x89, 0x0D, 0xBF, 0xE6, 0x42, 0x68, 0x41, 0x99, 0x2D, 0x0F, 0xB0, 0x54, 0xBB, 0x16,
], dtype=np.uint8)


class MissingDataset(Exception):
    """Expected HDF5 group/dataset/field names are absent (names listed)."""


class ShapeMismatch(Exception):
    """Dataset shapes are inconsistent with each other or the window."""


class Mismatch(Exception):
    """Verification found a difference; carries the first differing index."""


@dataclass
class IngestJob:
    input_path: str
    group: str = "profiling"            # "profiling" | "attack"
    output_path: str = ""
    window: Optional[tuple] = None      # (start, stop) sample range
    limit: Optional[int] = None         # max traces
    target_byte: int = TARGET_BYTE
    mapping: dict = field(default_factory=lambda: DEFAULT_MAPPING)


def _load_mapping(path) -> dict:
    with open(path) as f:
        user = json.load(f)
    merged = json.loads(json.dumps(DEFAULT_MAPPING))
    for key, value in user.items():
        if isinstance(value, dict):
            merged.setdefault(key, {}).update(value)
        else:
            merged[key] = value
    return merged


def _open_group(h5: h5py.File, job: IngestJob) -> h5py.Group:
    name = job.mapping["groups"].get(job.group, job.group)
    if name not in h5:
        raise MissingDataset(f"group {name!r} not in {job.input_path} "
                             f"(has: {sorted(h5.keys())})")
    return h5[name]


def _resolve(group: h5py.Group, job: IngestJob):
    m = job.mapping
    if m["traces"] not in group:
        raise MissingDataset(f"dataset {m['traces']!r} not in group "
                             f"(has: {sorted(group.keys())})")
    traces = group[m["traces"]]
    labels = group.get(m["labels"])
    metadata = group.get(m["metadata"])
    fields = {}
    if metadata is not None:
        names = metadata.dtype.names or ()
        for logical, actual in m["fields"].items():
            if actual in names:
                fields[logical] = actual
    return traces, labels, metadata, fields


def convert(job: IngestJob) -> dict:
    """Convert one HDF5 group to a SCAT file; returns a summary dict.

    The SCAT flags reflect exactly the metadata present in the source; masks
    keep their source width. Output is deterministic: converting twice
    yields byte-identical files.
    """
    with h5py.File(job.input_path, "r") as h5:
        group = _open_group(h5, job)
        traces, labels, metadata, fields = _resolve(group, job)

        n_total, n_samples_raw = traces.shape
        n = n_total if job.limit is None else min(job.limit, n_total)
        start, stop = (0, n_samples_raw) if job.window is None else job.window
        if not 0 <= start < stop <= n_samples_raw:
            raise ShapeMismatch(f"window [{start}, {stop}) outside the "
                                f"{n_samples_raw}-sample traces")
        n_samples = stop - start

        dtype = np.dtype(traces.dtype)
        if dtype == np.uint8:      # some captures store unsigned bytes
            dtype = np.dtype(np.int8)
        if dtype not in (np.dtype(np.int8), np.dtype(np.int16), np.dtype(np.float32)):
            raise ShapeMismatch(f"sample dtype {traces.dtype} has no SCAT encoding")

        have_key = "key" in fields
        have_pt = "plaintext" in fields
        have_masks = "masks" in fields
        mask_len = 0
        if have_masks:
            mask_len = int(np.asarray(metadata[0][fields["masks"]]).size)
        have_labels = labels is not None or (have_key and have_pt)
        if labels is not None and labels.shape[0] < n:
            raise ShapeMismatch(f"labels has {labels.shape[0]} rows, need {n}")
        if metadata is not None and metadata.shape[0] < n:
            raise ShapeMismatch(f"metadata has {metadata.shape[0]} rows, need {n}")

        with ScatWriter(job.output_path, n, n_samples, dtype, mask_len=mask_len,
                        with_keys=have_key, with_plaintexts=have_pt,
                        with_masks=have_masks, with_labels=have_labels) as out:
            for lo in range(0, n, CHUNK_ROWS):
                hi = min(lo + CHUNK_ROWS, n)
                chunk = traces[lo:hi, start:stop]
                out.write_samples(chunk.astype(dtype, copy=False))

            meta = metadata[:n] if metadata is not None else None
            keys = plaintexts = None
            if have_key:
                keys = np.ascontiguousarray(meta[fields["key"]], dtype=np.uint8)
                out.write_block(keys)
            if have_pt:
                plaintexts = np.ascontiguousarray(meta[fields["plaintext"]], dtype=np.uint8)
                out.write_block(plaintexts)
            if have_masks:
                out.write_block(np.ascontiguousarray(meta[fields["masks"]], dtype=np.uint8))
            if have_labels:
                if labels is not None:
                    out.write_block(np.asarray(labels[:n], dtype=np.uint8))
                else:
                    derived = AES_SBOX[plaintexts[:, job.target_byte]
                                       ^ keys[:, job.target_byte]]
                    out.write_block(derived)

    return {"n_traces": n, "n_samples": n_samples, "dtype": dtype.name}


def verify(scat_path, h5_path, job: IngestJob, sample_checks: int = 100,
           seed: int = 0) -> dict:
    """Cross-check a SCAT file against its HDF5 source.

    Compares `sample_checks` random traces sample-exactly (dtype included;
    a widened copy is a mismatch) and every metadata row. Raises Mismatch
    with the first differing index.
    """
    scat = read_scat(scat_path)
    with h5py.File(h5_path, "r") as h5:
        group = _open_group(h5, job)
        traces, labels, metadata, fields = _resolve(group, job)
        n = scat["n_traces"]
        start, stop = (0, traces.shape[1]) if job.window is None else job.window

        expect_dtype = np.dtype(traces.dtype)
        if expect_dtype == np.uint8:
            expect_dtype = np.dtype(np.int8)
        if scat["dtype"] != expect_dtype:
            raise Mismatch(f"dtype {scat['dtype'].name} != source {expect_dtype.name}")
        if scat["n_samples"] != stop - start:
            raise Mismatch(f"n_samples {scat['n_samples']} != window width {stop - start}")

        rng = np.random.default_rng(seed)
        picks = rng.choice(n, size=min(sample_checks, n), replace=False)
        for i in sorted(int(p) for p in picks):
            src = traces[i, start:stop].astype(expect_dtype, copy=False)
            if not np.array_equal(scat["samples"][i], src):
                delta = np.nonzero(scat["samples"][i] != src)[0][0]
                raise Mismatch(f"trace {i} differs first at sample {int(delta)}")

        meta = metadata[:n] if metadata is not None else None
        for logical, scat_name in (("key", "keys"), ("plaintext", "plaintexts"),
                                   ("masks", "masks")):
            have = logical in fields
            got = scat[scat_name]
            if have != (got is not None):
                raise Mismatch(f"{scat_name}: present in only one side")
            if have:
                src = np.ascontiguousarray(meta[fields[logical]], dtype=np.uint8)
                if not np.array_equal(got, src):
                    i = int(np.nonzero(~(got == src).all(axis=1))[0][0])
                    raise Mismatch(f"{scat_name} differ first at trace {i}")
        if labels is not None:
            if scat["labels"] is None:
                raise Mismatch("labels present in source but absent in SCAT")
            src = np.asarray(labels[:n], dtype=np.uint8)
            if not np.array_equal(scat["labels"], src):
                i = int(np.nonzero(scat["labels"] != src)[0][0])
                raise Mismatch(f"labels differ first at trace {i}")

    return {"n_traces": n, "samples_checked": len(picks), "ok": True}
