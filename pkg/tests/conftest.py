import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_traceset(n=8, s=16, dtype=np.float32, with_meta=True, seed=0, mask_len=2):
    from scaforge.traces import TraceSet

    r = np.random.default_rng(seed)
    if np.dtype(dtype) == np.float32:
        samples = r.normal(0, 1, size=(n, s)).astype(np.float32)
    else:
        info = np.iinfo(dtype)
        samples = r.integers(info.min, info.max + 1, size=(n, s), dtype=dtype)
    kwargs = {}
    if with_meta:
        kwargs = dict(
            keys=r.integers(0, 256, size=(n, 16), dtype=np.uint8),
            plaintexts=r.integers(0, 256, size=(n, 16), dtype=np.uint8),
            masks=r.integers(0, 256, size=(n, mask_len), dtype=np.uint8),
            labels=r.integers(0, 256, size=n, dtype=np.uint8),
        )
    return TraceSet(samples=samples, **kwargs)
