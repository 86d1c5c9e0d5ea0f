"""Deterministic random-stream derivation.

All randomness in an experiment flows from one u64 seed. Components draw from
named sub-streams (``data``, ``init``, ``shuffle``, ``attack``, ...) so that
re-running a single stage in isolation reproduces exactly the draws it made
inside the full pipeline. Streams are backed by Philox, a counter-based
generator, so derivation is cheap and order-independent.
"""

import hashlib

import numpy as np

__all__ = ["substream"]


def _label_key(label: str) -> int:
    # Stable across processes (unlike hash()).
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, label: str, index: int = 0) -> np.random.Generator:
    """Return the generator for sub-stream `label` of `seed`.

    `index` distinguishes repeated uses of the same label (e.g. one stream
    per epoch or per repetition).
    """
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
                                spawn_key=(_label_key(label), int(index)))
    return np.random.Generator(np.random.Philox(ss))
