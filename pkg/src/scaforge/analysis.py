"""Leakage analysis: per-sample signal-to-noise ratio and input-gradient saliency.

SNR here is the classical first-order ratio used for points-of-interest
selection: the variance across classes of the per-class means divided by the
mean across classes of the per-class variances, computed per sample index.
Which intermediate variable partitions the traces (label, mask, masked S-box
output) is the caller's choice.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientClasses, MissingMetadata, ShapeMismatch
from .traces import AES_SBOX, TraceSet

__all__ = [
    "SnrReport",
    "export_csv",
    "partition_by_label",
    "partition_by_mask",
    "partition_by_masked_sbox",
    "saliency",
    "snr",
]


@dataclass
class SnrReport:
    values: np.ndarray        # per-sample SNR, >= 0
    partition: str            # description of the class variable
    class_counts: np.ndarray  # 256 entries
    degenerate: bool = False  # some within-class variance was zero (guarded to 0)

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.values))


def partition_by_label(ts: TraceSet) -> np.ndarray:
    if ts.labels is None:
        raise MissingMetadata("trace set has no labels")
    return ts.labels


def partition_by_mask(ts: TraceSet, mask_byte: int = 0) -> np.ndarray:
    if ts.masks is None:
        raise MissingMetadata("trace set has no masks")
    return ts.masks[:, mask_byte]


def partition_by_masked_sbox(ts: TraceSet, target_byte: int, mask_byte: int = 0) -> np.ndarray:
    """SBox(p XOR k) XOR m, the masked intermediate actually present on the trace."""
    if ts.masks is None or ts.keys is None or ts.plaintexts is None:
        raise MissingMetadata("need keys, plaintexts and masks")
    sbox_out = AES_SBOX[ts.plaintexts[:, target_byte] ^ ts.keys[:, target_byte]]
    return sbox_out ^ ts.masks[:, mask_byte]


def snr(ts: TraceSet, class_of) -> SnrReport:
    """First-order SNR per sample, partitioned by a 256-valued class variable.

    `class_of` is either a per-trace class array or a callable applied to
    trace indices. Classes with fewer than 2 members are excluded from both
    moments; fewer than 2 qualifying classes raises InsufficientClasses.
    """
    if callable(class_of):
        classes = np.asarray([class_of(i) for i in range(ts.n_traces)])
        description = getattr(class_of, "__name__", "callable")
    else:
        classes = np.asarray(class_of)
        description = "array"
    if classes.shape != (ts.n_traces,):
        raise ShapeMismatch(f"classes shape {classes.shape} != ({ts.n_traces},)")
    classes = classes.astype(np.int64)
    if classes.min(initial=0) < 0 or classes.max(initial=0) > 255:
        raise ValueError("classes must lie in 0..255")

    x = ts.samples.astype(np.float64)
    counts = np.bincount(classes, minlength=256)
    sums = np.zeros((256, ts.n_samples))
    sumsq = np.zeros((256, ts.n_samples))
    np.add.at(sums, classes, x)
    np.add.at(sumsq, classes, x * x)

    ok = counts >= 2
    if ok.sum() < 2:
        raise InsufficientClasses(f"only {int(ok.sum())} classes have >= 2 traces")
    n = counts[ok][:, None].astype(np.float64)
    means = sums[ok] / n
    variances = sumsq[ok] / n - means ** 2
    np.maximum(variances, 0.0, out=variances)  # clip fp negatives

    between = means.var(axis=0)
    within = variances.mean(axis=0)
    degenerate = bool(np.any(within == 0.0))
    values = np.divide(between, within, out=np.zeros_like(between), where=within > 0)
    return SnrReport(values=values, partition=description,
                     class_counts=counts, degenerate=degenerate)


def saliency(model, ts: TraceSet, batch: int = 256) -> np.ndarray:
    """Mean absolute input gradient of the true-label cross-entropy.

    Runs the model in infer mode; returns a non-negative vector of length
    n_samples whose peaks mark the sample points the model relies on.
    """
    from . import nn

    if model.input_width != ts.n_samples:
        raise ShapeMismatch(f"model input width {model.input_width} != "
                            f"n_samples {ts.n_samples}")
    if ts.labels is None:
        raise MissingMetadata("saliency needs labels")
    prior_mode = model.mode
    model.set_mode("infer")
    try:
        total = np.zeros(ts.n_samples, dtype=np.float64)
        for start in range(0, ts.n_traces, batch):
            x = ts.samples[start:start + batch].astype(model.dtype)
            y = ts.labels[start:start + batch]
            _, dx = nn.input_gradient(model, x, y)
            total += np.abs(dx).sum(axis=0)
        return total / ts.n_traces
    finally:
        model.set_mode(prior_mode)


def export_csv(series: dict, path, include_index: bool = True) -> None:
    """Write named vectors as CSV: header row, one row per index, '\\n' newlines.

    Float values are rendered with repr() so a round-trip parse is exact;
    integer columns stay integers.
    """
    names = list(series)
    columns = [np.asarray(series[k]).ravel() for k in names]
    if not columns:
        raise ValueError("need at least one series")
    length = len(columns[0])
    for name, col in zip(names, columns):
        if len(col) != length:
            raise ValueError(f"series {name!r} has length {len(col)}, expected {length}")

    def render(col, i):
        return str(int(col[i])) if np.issubdtype(col.dtype, np.integer) else repr(float(col[i]))

    with open(path, "w", newline="") as f:
        header = (["index"] if include_index else []) + names
        f.write(",".join(header) + "\n")
        for i in range(length):
            row = ([str(i)] if include_index else []) + [render(c, i) for c in columns]
            f.write(",".join(row) + "\n")
