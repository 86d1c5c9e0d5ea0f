"""Trace sets, the SCAT binary format, and trace-level preprocessing.

A trace set is an n_traces x n_samples matrix of sensor samples plus optional
per-trace metadata (16-byte AES key, 16-byte plaintext, mask bytes, and a
classification label). Trace sets are immutable after construction: every
operation returns a new set, so sharing across threads is safe.

SCAT v1 on-disk layout (little-endian):

    magic "SCAT" (4) | version u16 = 1 | flags u16 | n_traces u64
    | n_samples u32 | dtype u8 (0=i8, 1=i16, 2=f32) | mask_len u8
    | reserved (10, zero)
    | samples, row-major
    | keys 16*N      (iff flags bit 0)
    | plaintexts 16*N (iff flags bit 1)
    | masks mask_len*N (iff flags bit 2)
    | labels 1*N      (iff flags bit 3)
"""

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    BadMagic,
    EmptyTraceSet,
    MissingMetadata,
    OutOfBounds,
    ShiftTooLarge,
    TruncatedFile,
    UnsupportedDtype,
    UnsupportedVersion,
)

__all__ = [
    "AES_SBOX",
    "AES_SBOX_INV",
    "PreprocessStats",
    "TraceSet",
    "aes_sbox",
    "aes_sbox_inv",
    "derive_labels",
    "load_traceset",
    "random_shift",
    "save_traceset",
    "shift_edge",
    "standardize",
    "window",
]

DEFAULT_TARGET_BYTE = 2  # conventional ASCAD target key byte

SCAT_MAGIC = b"SCAT"
SCAT_VERSION = 1
_HEADER = struct.Struct("<4sHHQIBB10s")  # 32 bytes

_FLAG_KEY = 1 << 0
_FLAG_PLAINTEXT = 1 << 1
_FLAG_MASKS = 1 << 2
_FLAG_LABELS = 1 << 3

_DTYPE_CODES = {np.dtype(np.int8): 0, np.dtype(np.int16): 1, np.dtype(np.float32): 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}

# FIPS-197 forward S-box.
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
AES_SBOX.flags.writeable = False

# Inverse derived by inverting the forward table, not transcribed separately.
AES_SBOX_INV = np.argsort(AES_SBOX).astype(np.uint8)
AES_SBOX_INV.flags.writeable = False


def aes_sbox(x):
    """Forward AES S-box; accepts a byte or a uint8 array."""
    return AES_SBOX[np.asarray(x, dtype=np.uint8)] if np.ndim(x) else int(AES_SBOX[int(x)])


def aes_sbox_inv(x):
    """Inverse AES S-box (derived from the forward table)."""
    return AES_SBOX_INV[np.asarray(x, dtype=np.uint8)] if np.ndim(x) else int(AES_SBOX_INV[int(x)])


@dataclass
class PreprocessStats:
    """Standardization statistics, reusable across trace sets.

    mode 'pointwise' holds one mean/std per sample index; 'global' holds
    scalars. epsilon is added to std before dividing.
    """

    mode: str
    mean: np.ndarray
    std: np.ndarray
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.mode not in ("pointwise", "global"):
            raise ValueError(f"unknown standardization mode {self.mode!r}")
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if np.any(self.std < 0):
            raise ValueError("std entries must be >= 0")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")


@dataclass(eq=False)
class TraceSet:
    """Immutable matrix of traces plus optional per-trace metadata."""

    samples: np.ndarray
    keys: Optional[np.ndarray] = None        # (N, 16) uint8
    plaintexts: Optional[np.ndarray] = None  # (N, 16) uint8
    masks: Optional[np.ndarray] = None       # (N, mask_len) uint8
    labels: Optional[np.ndarray] = None      # (N,) uint8
    stats: Optional[PreprocessStats] = field(default=None, compare=False)

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples)
        if self.samples.ndim != 2:
            raise ValueError("samples must be a 2-D n_traces x n_samples matrix")
        if self.samples.dtype not in _DTYPE_CODES:
            raise UnsupportedDtype(f"samples dtype {self.samples.dtype} not in (i8, i16, f32)")
        n = self.samples.shape[0]
        for name, width in (("keys", 16), ("plaintexts", 16)):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.ascontiguousarray(arr, dtype=np.uint8)
                if arr.shape != (n, width):
                    raise ValueError(f"{name} must have shape ({n}, {width}), got {arr.shape}")
                setattr(self, name, arr)
        if self.masks is not None:
            self.masks = np.ascontiguousarray(self.masks, dtype=np.uint8)
            if self.masks.ndim != 2 or self.masks.shape[0] != n or not 1 <= self.masks.shape[1] <= 255:
                raise ValueError(f"masks must have shape ({n}, 1..255), got {self.masks.shape}")
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
            if self.labels.shape != (n,):
                raise ValueError(f"labels must have shape ({n},), got {self.labels.shape}")
        for arr in (self.samples, self.keys, self.plaintexts, self.masks, self.labels):
            if arr is not None:
                arr.flags.writeable = False

    @property
    def n_traces(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def mask_len(self) -> int:
        return 0 if self.masks is None else self.masks.shape[1]

    def replace(self, **changes) -> "TraceSet":
        """Copy with the given fields replaced (metadata carried over)."""
        fields = dict(samples=self.samples, keys=self.keys, plaintexts=self.plaintexts,
                      masks=self.masks, labels=self.labels, stats=self.stats)
        fields.update(changes)
        return TraceSet(**fields)

    def __eq__(self, other):
        if not isinstance(other, TraceSet):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.dtype == b.dtype and a.shape == b.shape and np.array_equal(a, b)

        return (same(self.samples, other.samples) and same(self.keys, other.keys)
                and same(self.plaintexts, other.plaintexts) and same(self.masks, other.masks)
                and same(self.labels, other.labels))

    def __repr__(self):
        meta = [name for name in ("keys", "plaintexts", "masks", "labels")
                if getattr(self, name) is not None]
        return (f"TraceSet({self.n_traces}x{self.n_samples} {self.samples.dtype.name}"
                f", meta={meta})")


def save_traceset(ts: TraceSet, path) -> None:
    """Write `ts` to `path` in SCAT v1 format (byte-exact, little-endian)."""
    dtype_code = _DTYPE_CODES[ts.samples.dtype]
    flags = 0
    if ts.keys is not None:
        flags |= _FLAG_KEY
    if ts.plaintexts is not None:
        flags |= _FLAG_PLAINTEXT
    if ts.masks is not None:
        flags |= _FLAG_MASKS
    if ts.labels is not None:
        flags |= _FLAG_LABELS
    header = _HEADER.pack(SCAT_MAGIC, SCAT_VERSION, flags, ts.n_traces, ts.n_samples,
                          dtype_code, ts.mask_len, b"\x00" * 10)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(ts.samples, dtype=ts.samples.dtype.newbyteorder("<")).tobytes())
        for arr in (ts.keys, ts.plaintexts, ts.masks, ts.labels):
            if arr is not None:
                f.write(arr.tobytes())


def load_traceset(path) -> TraceSet:
    """Read a SCAT v1 file; raises BadMagic / UnsupportedVersion / TruncatedFile."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        if raw[:4] != SCAT_MAGIC:
            raise BadMagic(f"{path}: not a SCAT file")
        raise TruncatedFile(f"{path}: header incomplete ({len(raw)} bytes)")
    magic, version, flags, n_traces, n_samples, dtype_code, mask_len, _ = _HEADER.unpack_from(raw)
    if magic != SCAT_MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != SCAT_VERSION:
        raise UnsupportedVersion(f"{path}: version {version} (expected {SCAT_VERSION})")
    if dtype_code not in _CODE_DTYPES:
        raise UnsupportedDtype(f"{path}: dtype code {dtype_code}")
    dtype = _CODE_DTYPES[dtype_code]

    offset = _HEADER.size

    def take(nbytes, what):
        nonlocal offset
        if offset + nbytes > len(raw):
            raise TruncatedFile(f"{path}: truncated in {what} "
                                f"(need {nbytes} bytes at offset {offset}, have {len(raw) - offset})")
        chunk = raw[offset:offset + nbytes]
        offset += nbytes
        return chunk

    samples = np.frombuffer(take(n_traces * n_samples * dtype.itemsize, "samples"),
                            dtype=dtype.newbyteorder("<")).astype(dtype).reshape(n_traces, n_samples)
    keys = plaintexts = masks = labels = None
    if flags & _FLAG_KEY:
        keys = np.frombuffer(take(16 * n_traces, "keys"), dtype=np.uint8).reshape(n_traces, 16)
    if flags & _FLAG_PLAINTEXT:
        plaintexts = np.frombuffer(take(16 * n_traces, "plaintexts"),
                                   dtype=np.uint8).reshape(n_traces, 16)
    if flags & _FLAG_MASKS:
        masks = np.frombuffer(take(mask_len * n_traces, "masks"),
                              dtype=np.uint8).reshape(n_traces, mask_len)
    if flags & _FLAG_LABELS:
        labels = np.frombuffer(take(n_traces, "labels"), dtype=np.uint8)
    return TraceSet(samples=samples, keys=keys, plaintexts=plaintexts, masks=masks, labels=labels)


def derive_labels(ts: TraceSet, target_byte: int = DEFAULT_TARGET_BYTE) -> TraceSet:
    """Attach labels SBox(plaintext[target_byte] XOR key[target_byte])."""
    if ts.keys is None or ts.plaintexts is None:
        raise MissingMetadata("derive_labels needs key and plaintext metadata")
    if not 0 <= target_byte <= 15:
        raise ValueError(f"target_byte must be in 0..15, got {target_byte}")
    labels = AES_SBOX[ts.plaintexts[:, target_byte] ^ ts.keys[:, target_byte]]
    return ts.replace(labels=labels)


def standardize(ts: TraceSet, mode: str = "pointwise",
                stats: Optional[PreprocessStats] = None,
                epsilon: float = 1e-8):
    """Standardize samples to (x - mean) / (std + epsilon); returns (TraceSet, stats).

    'pointwise' uses one mean/std per sample index, computed over traces;
    'global' uses a single scalar pair over all values. Population variance
    (divide by N). Pass `stats` from a profiling set to apply its statistics
    to an attack set.
    """
    if ts.n_traces == 0 or ts.n_samples == 0:
        raise EmptyTraceSet("cannot standardize an empty trace set")
    if stats is not None:
        if stats.mode != mode:
            raise ValueError(f"stats mode {stats.mode!r} does not match requested {mode!r}")
        if mode == "pointwise" and stats.mean.shape != (ts.n_samples,):
            raise ValueError(f"stats sized for {stats.mean.shape} samples, set has {ts.n_samples}")
        mean, std, epsilon = stats.mean, stats.std, stats.epsilon
    else:
        x = ts.samples.astype(np.float64)
        if mode == "pointwise":
            mean, std = x.mean(axis=0), x.std(axis=0)
        elif mode == "global":
            mean, std = np.float64(x.mean()), np.float64(x.std())
        else:
            raise ValueError(f"unknown standardization mode {mode!r}")
        stats = PreprocessStats(mode=mode, mean=mean, std=std,
                                epsilon=epsilon if epsilon > 0 else 1e-300)
        mean, std, epsilon = stats.mean, stats.std, epsilon
    out = (ts.samples.astype(np.float64) - mean) / (std + epsilon)
    return ts.replace(samples=out.astype(np.float32), stats=stats), stats


def shift_edge(trace: np.ndarray, d: int) -> np.ndarray:
    """Shift a 1-D trace by `d` positions (d>0 moves content right), edge fill."""
    n = trace.shape[-1]
    idx = np.clip(np.arange(n) - d, 0, n - 1)
    return trace[..., idx]


def random_shift(trace: np.ndarray, max_shift: int, rng: np.random.Generator) -> np.ndarray:
    """Shift by d drawn uniformly from [-max_shift, +max_shift], edge fill."""
    trace = np.asarray(trace)
    if max_shift >= trace.shape[-1]:
        raise ShiftTooLarge(f"max_shift {max_shift} >= trace length {trace.shape[-1]}")
    if max_shift == 0:
        return trace.copy()
    d = int(rng.integers(-max_shift, max_shift + 1))
    return shift_edge(trace, d)


def window(ts: TraceSet, start: int, length: int) -> TraceSet:
    """Restrict samples to [start, start+length); metadata preserved."""
    if start < 0 or length < 0 or start + length > ts.n_samples:
        raise OutOfBounds(f"window [{start}, {start + length}) outside 0..{ts.n_samples}")
    return ts.replace(samples=ts.samples[:, start:start + length], stats=None)
