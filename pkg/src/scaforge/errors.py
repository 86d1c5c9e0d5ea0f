"""Exception types shared across the toolkit.

Every failure mode named by a public operation gets its own class so callers
can catch precisely; all inherit from ScaforgeError.
"""


class ScaforgeError(Exception):
    """Base class for all scaforge errors."""


# --- trace file format ---

class BadMagic(ScaforgeError):
    """File does not start with the SCAT magic bytes."""


class UnsupportedVersion(ScaforgeError):
    """SCAT version field is not one this reader understands."""


class TruncatedFile(ScaforgeError):
    """File ends before the payload declared in the header."""


class UnsupportedDtype(ScaforgeError):
    """Dtype code not in {i8, i16, f32}."""


# --- trace operations ---

class MissingMetadata(ScaforgeError):
    """Operation needs per-trace metadata (key/plaintext/...) that is absent."""


class EmptyTraceSet(ScaforgeError):
    """Operation undefined on a trace set with no traces or no samples."""


class ShiftTooLarge(ScaforgeError):
    """max_shift must be smaller than the trace length."""


class OutOfBounds(ScaforgeError):
    """Window exceeds the sample range."""


# --- synth / analysis ---

class InvalidConfig(ScaforgeError):
    """Generator or experiment config violates its invariants."""


class InsufficientClasses(ScaforgeError):
    """SNR needs at least two classes with two or more members."""


# --- nn / optim / train ---

class OutOfRange(ScaforgeError):
    """Schedule queried outside [0, total_steps]."""


class ShapeMismatch(ScaforgeError):
    """Tensor shapes incompatible with the layer graph or operation."""


class NonFiniteGradient(ScaforgeError):
    """A gradient contained NaN/Inf; signals divergence to the caller."""


class DivergedImmediately(ScaforgeError):
    """LR finder: the very first steps already produced non-finite losses."""


class Diverged(ScaforgeError):
    """Training loss became non-finite; run aborted.

    Carries the partial per-epoch history collected before the abort.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class ConfigInvalid(ScaforgeError):
    """TrainConfig violates its invariants (shard divisibility, fractions...)."""


class ManifestMismatch(ScaforgeError):
    """Checkpoint was produced for an incompatible model configuration."""


# --- attack ---

class MixedKeys(ScaforgeError):
    """Attack set must carry a single fixed key."""
