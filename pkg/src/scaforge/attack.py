"""Key-recovery evaluation: per-trace hypothesis scores, log-likelihood
accumulation, key rank, and the guessing-entropy curve.

A classifier output over the 256 S-box values is turned into 256 key-byte
hypotheses by inverting the label map: hypothesis k explains the trace with
probability probs[SBox(p XOR k)]. Log-likelihoods add across traces. Rank 0
means the true key byte leads the hypothesis list; ties are broken
pessimistically (an equal-scored competitor with a smaller byte value counts
as ahead) so reported ranks never flatter the attack.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import MissingMetadata, MixedKeys
from .rng import substream
from .traces import AES_SBOX, DEFAULT_TARGET_BYTE, TraceSet

__all__ = [
    "GECurve",
    "PROB_CLAMP",
    "ScoreAccumulator",
    "accumulate",
    "guessing_entropy",
    "hypothesis_scores",
    "key_rank",
    "predict_probs",
]

PROB_CLAMP = 1e-40  # floor before log so one confident-wrong softmax cannot nuke the sum


@dataclass
class ScoreAccumulator:
    cum_loglik: np.ndarray = field(default_factory=lambda: np.zeros(256))
    n_traces_seen: int = 0
    target_byte: int = DEFAULT_TARGET_BYTE


def hypothesis_scores(probs: np.ndarray, plaintext_byte: int) -> np.ndarray:
    """score[k] = log probs[SBox(plaintext_byte XOR k)] for all 256 k."""
    probs = np.maximum(np.asarray(probs, dtype=np.float64), PROB_CLAMP)
    k = np.arange(256, dtype=np.uint8)
    return np.log(probs[AES_SBOX[np.uint8(plaintext_byte) ^ k]])


def accumulate(acc: ScoreAccumulator, scores: np.ndarray) -> ScoreAccumulator:
    """Add one trace's scores; returns a new accumulator."""
    return ScoreAccumulator(cum_loglik=acc.cum_loglik + scores,
                            n_traces_seen=acc.n_traces_seen + 1,
                            target_byte=acc.target_byte)


def key_rank(acc, true_key_byte: int) -> int:
    """Pessimistic rank of the true key byte (0 = recovered).

    Counts every strictly-better hypothesis plus every equal-scored one with
    a smaller byte value.
    """
    scores = acc.cum_loglik if isinstance(acc, ScoreAccumulator) else np.asarray(acc)
    true_score = scores[true_key_byte]
    better = int(np.sum(scores > true_score))
    ties_ahead = int(np.sum((scores == true_score) & (np.arange(256) < true_key_byte)))
    return better + ties_ahead


@dataclass
class GECurve:
    n_traces: np.ndarray    # strictly increasing axis
    mean_rank: np.ndarray   # in [0, 255]
    repetitions: int
    seed: int

    @property
    def traces_to_zero(self) -> Optional[int]:
        """Smallest axis point with mean rank < 0.5, or None."""
        hits = np.nonzero(self.mean_rank < 0.5)[0]
        return int(self.n_traces[hits[0]]) if hits.size else None


def predict_probs(model, samples: np.ndarray, batch: int = 1024) -> np.ndarray:
    """Softmax class probabilities in infer mode, float64."""
    prior = model.mode
    model.set_mode("infer")
    try:
        chunks = []
        for start in range(0, len(samples), batch):
            logits = model.forward(samples[start:start + batch]).astype(np.float64)
            z = logits - logits.max(axis=1, keepdims=True)
            e = np.exp(z)
            chunks.append(e / e.sum(axis=1, keepdims=True))
        return np.concatenate(chunks, axis=0)
    finally:
        model.set_mode(prior)


def guessing_entropy(model, ts_attack: TraceSet, repetitions: int = 100,
                     max_traces: Optional[int] = None, step: int = 1,
                     seed: int = 0,
                     target_byte: int = DEFAULT_TARGET_BYTE) -> GECurve:
    """Mean key rank as a function of the number of attack traces.

    Each repetition shuffles the attack set (seeded), accumulates per-trace
    hypothesis scores, and records the rank at every axis point; the curve
    averages over repetitions in ascending order. The attack set must carry
    plaintexts and one fixed key.
    """
    if ts_attack.plaintexts is None or ts_attack.keys is None:
        raise MissingMetadata("attack set needs plaintexts and the true key")
    if np.any(ts_attack.keys != ts_attack.keys[0]):
        raise MixedKeys("attack set must use a single fixed key")
    n = ts_attack.n_traces
    if max_traces is None or max_traces > n:
        max_traces = n
    if max_traces < 1 or step < 1:
        raise ValueError("need max_traces >= 1 and step >= 1")
    true_byte = int(ts_attack.keys[0, target_byte])

    probs = np.maximum(predict_probs(model, ts_attack.samples), PROB_CLAMP)
    logp = np.log(probs)
    # per-trace hypothesis matrix: H[i, k] = logp[i, SBox(p_i ^ k)]
    p_bytes = ts_attack.plaintexts[:, target_byte]
    hyp_classes = AES_SBOX[p_bytes[:, None] ^ np.arange(256, dtype=np.uint8)[None, :]]
    hyp = np.take_along_axis(logp, hyp_classes.astype(np.int64), axis=1)

    axis = np.arange(1, max_traces + 1, step)
    if axis[-1] != max_traces:
        axis = np.append(axis, max_traces)
    ks = np.arange(256)
    rank_sum = np.zeros(len(axis))
    for r in range(repetitions):
        order = substream(seed, "attack", r).permutation(n)[:max_traces]
        cums = np.cumsum(hyp[order], axis=0)[axis - 1]
        true_col = cums[:, true_byte][:, None]
        better = (cums > true_col).sum(axis=1)
        ties_ahead = ((cums == true_col) & (ks < true_byte)).sum(axis=1)
        rank_sum += better + ties_ahead
    return GECurve(n_traces=axis, mean_rank=rank_sum / repetitions,
                   repetitions=repetitions, seed=seed)
