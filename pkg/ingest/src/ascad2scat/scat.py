"""SCAT v1 wire format: streaming writer and a whole-file reader.

Layout (little-endian): magic "SCAT" | version u16 = 1 | flags u16
(bit0 keys, bit1 plaintexts, bit2 masks, bit3 labels) | n_traces u64 |
n_samples u32 | dtype u8 (0=i8, 1=i16, 2=f32) | mask_len u8 | 10 reserved
zero bytes | row-major samples | keys 16*N | plaintexts 16*N |
masks mask_len*N | labels 1*N (each block present iff its flag is set).

The writer streams the sample matrix chunk by chunk so converting a
multi-gigabyte capture never materializes it in memory.
"""

import struct

import numpy as np

MAGIC = b"SCAT"
VERSION = 1
HEADER = struct.Struct("<4sHHQIBB10s")

FLAG_KEYS = 1 << 0
FLAG_PLAINTEXTS = 1 << 1
FLAG_MASKS = 1 << 2
FLAG_LABELS = 1 << 3

DTYPE_CODES = {np.dtype(np.int8): 0, np.dtype(np.int16): 1, np.dtype(np.float32): 2}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


class ScatWriter:
    """Writes one SCAT file: header, streamed samples, then metadata blocks."""

    def __init__(self, path, n_traces, n_samples, dtype, mask_len=0,
                 with_keys=False, with_plaintexts=False, with_masks=False,
                 with_labels=False):
        dtype = np.dtype(dtype)
        if dtype not in DTYPE_CODES:
            raise ValueError(f"unsupported sample dtype {dtype} (need i8/i16/f32)")
        flags = ((FLAG_KEYS if with_keys else 0)
                 | (FLAG_PLAINTEXTS if with_plaintexts else 0)
                 | (FLAG_MASKS if with_masks else 0)
                 | (FLAG_LABELS if with_labels else 0))
        self.n_traces, self.n_samples, self.dtype = n_traces, n_samples, dtype
        self._rows_written = 0
        self._f = open(path, "wb")
        self._f.write(HEADER.pack(MAGIC, VERSION, flags, n_traces, n_samples,
                                  DTYPE_CODES[dtype], mask_len, b"\x00" * 10))

    def write_samples(self, chunk: np.ndarray):
        if chunk.ndim != 2 or chunk.shape[1] != self.n_samples:
            raise ValueError(f"chunk shape {chunk.shape} != (*, {self.n_samples})")
        self._rows_written += chunk.shape[0]
        if self._rows_written > self.n_traces:
            raise ValueError("more sample rows than declared in the header")
        out = np.ascontiguousarray(chunk, dtype=self.dtype.newbyteorder("<"))
        self._f.write(out.tobytes())

    def write_block(self, arr: np.ndarray):
        self._f.write(np.ascontiguousarray(arr, dtype=np.uint8).tobytes())

    def close(self):
        if self._rows_written != self.n_traces:
            raise ValueError(f"wrote {self._rows_written} of {self.n_traces} rows")
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        else:
            self._f.close()


def read_scat(path):
    """Read a whole SCAT file into a dict (fixtures here are small)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < HEADER.size or raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a SCAT file")
    magic, version, flags, n_traces, n_samples, dtype_code, mask_len, _ = \
        HEADER.unpack_from(raw)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported SCAT version {version}")
    dtype = CODE_DTYPES[dtype_code]
    out = {"n_traces": n_traces, "n_samples": n_samples, "dtype": dtype,
           "mask_len": mask_len}
    offset = HEADER.size

    def take(nbytes, what):
        nonlocal offset
        if offset + nbytes > len(raw):
            raise ValueError(f"{path}: truncated in {what}")
        blob = raw[offset:offset + nbytes]
        offset += nbytes
        return blob

    out["samples"] = np.frombuffer(
        take(n_traces * n_samples * dtype.itemsize, "samples"),
        dtype=dtype.newbyteorder("<")).astype(dtype).reshape(n_traces, n_samples)
    for flag, name, width in ((FLAG_KEYS, "keys", 16),
                              (FLAG_PLAINTEXTS, "plaintexts", 16),
                              (FLAG_MASKS, "masks", mask_len),
                              (FLAG_LABELS, "labels", 1)):
        if flags & flag:
            block = np.frombuffer(take(width * n_traces, name), dtype=np.uint8)
            out[name] = block.reshape(n_traces, width) if width > 1 else block
        else:
            out[name] = None
    return out
