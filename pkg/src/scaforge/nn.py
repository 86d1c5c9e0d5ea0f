"""Minimal neural-network core: layer graph, forward/backward, grad checking.

Tensors are plain numpy arrays (f32 for training, f64 for verification; the
finite-difference suite is unreliable in f32). The layer set covers the
classifier families used for trace attacks: dense stacks and shallow 1-D CNNs
with batch normalization. The softmax head emits logits; the softmax itself
is fused into the cross-entropy loss for stability.

Internal activation layout is channels-last: (batch, length, channels) for
convolutional stages, (batch, features) for dense stages. A model's input is
always (batch, n_samples); conv/pool/batchnorm layers promote a rank-2 input
to a single channel.

The load-bearing correctness property of the whole package is that every
backward pass matches central finite differences; see `grad_check`.
"""

import copy
import hashlib
import importlib.resources
import json
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ShapeMismatch
from .rng import substream

__all__ = [
    "LayerSpec",
    "Model",
    "ModelConfig",
    "backward",
    "build_model",
    "forward",
    "grad_check",
    "input_gradient",
    "load_preset",
    "loss_ce",
    "param_count",
]

LAYER_KINDS = ("dense", "conv1d", "batchnorm", "relu", "avgpool", "maxpool",
               "flatten", "softmax_ce_head")


@dataclass
class LayerSpec:
    kind: str
    units: Optional[int] = None       # dense
    filters: Optional[int] = None     # conv1d
    kernel: Optional[int] = None      # conv1d
    stride: int = 1                   # conv1d
    padding: str = "same"             # conv1d: "same" | "valid"
    momentum: float = 0.99            # batchnorm
    eps: float = 1e-5                 # batchnorm
    width: Optional[int] = None       # avgpool / maxpool
    classes: int = 256                # softmax_ce_head

    _RELEVANT = {
        "dense": ("units",),
        "conv1d": ("filters", "kernel", "stride", "padding"),
        "batchnorm": ("momentum", "eps"),
        "relu": (),
        "avgpool": ("width",),
        "maxpool": ("width",),
        "flatten": (),
        "softmax_ce_head": ("classes",),
    }

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        for f in self._RELEVANT[self.kind]:
            d[f] = getattr(self, f)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        kind = d.get("kind")
        if kind not in LAYER_KINDS:
            raise ShapeMismatch(f"unknown layer kind {kind!r}")
        extra = set(d) - {"kind"} - set(cls._RELEVANT[kind])
        if extra:
            raise ShapeMismatch(f"layer {kind!r} does not take {sorted(extra)}")
        return cls(**d)


@dataclass
class ModelConfig:
    input_width: int
    layers: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"input_width": self.input_width,
                "layers": [l.to_dict() for l in self.layers]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(input_width=int(d["input_width"]),
                   layers=[LayerSpec.from_dict(l) for l in d["layers"]])

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls.from_dict(json.loads(text))

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def _he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class _Layer:
    kind = "?"

    def build(self, in_shape, rng, dtype):
        raise NotImplementedError

    def forward(self, x, train, update_stats=True):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    def grads(self) -> dict:
        return {}

    def state(self) -> dict:
        return {}


class _Dense(_Layer):
    kind = "dense"

    def __init__(self, spec, init="he"):
        self.units = spec.units
        self.init = init

    def build(self, in_shape, rng, dtype):
        if len(in_shape) != 1:
            raise ShapeMismatch(f"dense expects flat input, got shape {in_shape} (flatten first)")
        fan_in = in_shape[0]
        if self.init == "glorot":
            self.w = _glorot_uniform(rng, (fan_in, self.units), fan_in, self.units, dtype)
        else:
            self.w = _he_uniform(rng, (fan_in, self.units), fan_in, dtype)
        self.b = np.zeros(self.units, dtype=dtype)
        return (self.units,)

    def forward(self, x, train, update_stats=True):
        self._x = x
        return x @ self.w + self.b

    def backward(self, dy):
        self.dw = self._x.T @ dy
        self.db = dy.sum(axis=0)
        return dy @ self.w.T

    def params(self):
        return {"w": self.w, "b": self.b}

    def grads(self):
        return {"w": self.dw, "b": self.db}


class _SoftmaxCeHead(_Dense):
    """Final 256-way dense layer; softmax lives inside loss_ce."""

    kind = "softmax_ce_head"

    def __init__(self, spec):
        if spec.classes != 256:
            raise ShapeMismatch(f"softmax_ce_head must have 256 classes, got {spec.classes}")
        super().__init__(LayerSpec(kind="dense", units=spec.classes), init="glorot")


class _Relu(_Layer):
    kind = "relu"

    def __init__(self, spec):
        pass

    def build(self, in_shape, rng, dtype):
        return in_shape

    def forward(self, x, train, update_stats=True):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class _Flatten(_Layer):
    kind = "flatten"

    def __init__(self, spec):
        pass

    def build(self, in_shape, rng, dtype):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train, update_stats=True):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


def _promote(x):
    # (B, L) -> (B, L, 1) for layers that want a channel axis
    return x[:, :, None] if x.ndim == 2 else x


class _Conv1d(_Layer):
    kind = "conv1d"

    def __init__(self, spec):
        self.filters, self.kernel = spec.filters, spec.kernel
        self.stride, self.padding = spec.stride, spec.padding
        if self.padding not in ("same", "valid"):
            raise ShapeMismatch(f"conv1d padding {self.padding!r} not in (same, valid)")
        if not (self.filters and self.kernel and self.stride >= 1):
            raise ShapeMismatch("conv1d needs filters >= 1, kernel >= 1, stride >= 1")

    def _geometry(self, length):
        if self.padding == "same":
            l_out = -(-length // self.stride)  # ceil
            pad = max((l_out - 1) * self.stride + self.kernel - length, 0)
            # symmetric, extra zero on the left for odd deficits
            return l_out, pad - pad // 2, pad // 2
        if length < self.kernel:
            raise ShapeMismatch(f"conv1d(valid) kernel {self.kernel} wider than input {length}")
        return (length - self.kernel) // self.stride + 1, 0, 0

    def build(self, in_shape, rng, dtype):
        if len(in_shape) == 1:
            in_shape = (in_shape[0], 1)
        length, c_in = in_shape
        self.c_in = c_in
        l_out, _, _ = self._geometry(length)
        fan_in = self.kernel * c_in
        self.w = _he_uniform(rng, (self.kernel, c_in, self.filters), fan_in, dtype)
        self.b = np.zeros(self.filters, dtype=dtype)
        return (l_out, self.filters)

    def forward(self, x, train, update_stats=True):
        x = _promote(x)
        _, pad_l, pad_r = self._geometry(x.shape[1])
        xp = np.pad(x, ((0, 0), (pad_l, pad_r), (0, 0))) if pad_l or pad_r else x
        win = np.lib.stride_tricks.sliding_window_view(xp, self.kernel, axis=1)
        win = win[:, ::self.stride]           # (B, L_out, C, K), view
        self._xp_shape, self._pad_l, self._win = xp.shape, pad_l, win
        self._in_len = x.shape[1]
        return np.einsum("blck,kcf->blf", win, self.w, optimize=True) + self.b

    def backward(self, dy):
        self.dw = np.einsum("blck,blf->kcf", self._win, dy, optimize=True)
        self.db = dy.sum(axis=(0, 1))
        dxp = np.zeros(self._xp_shape, dtype=dy.dtype)
        l_out = dy.shape[1]
        pos = self.stride * np.arange(l_out)
        for k in range(self.kernel):
            # indices pos+k are unique for fixed k, so fancy += is safe
            dxp[:, pos + k, :] += dy @ self.w[k].T
        return dxp[:, self._pad_l:self._pad_l + self._in_len, :]

    def params(self):
        return {"w": self.w, "b": self.b}

    def grads(self):
        return {"w": self.dw, "b": self.db}


class _BatchNorm(_Layer):
    kind = "batchnorm"

    def __init__(self, spec):
        self.momentum, self.eps = spec.momentum, spec.eps

    def build(self, in_shape, rng, dtype):
        c = in_shape[-1]
        self.gamma = np.ones(c, dtype=dtype)
        self.beta = np.zeros(c, dtype=dtype)
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)
        return in_shape

    def forward(self, x, train, update_stats=True):
        axes = tuple(range(x.ndim - 1))
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            if update_stats:
                m = self.momentum
                self.running_mean = (m * self.running_mean + (1 - m) * mean).astype(x.dtype)
                self.running_var = (m * self.running_var + (1 - m) * var).astype(x.dtype)
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        self._train, self._inv, self._xhat = train, inv, xhat
        self._m = x.size // x.shape[-1]
        return self.gamma * xhat + self.beta

    def backward(self, dy):
        axes = tuple(range(dy.ndim - 1))
        self.dgamma = (dy * self._xhat).sum(axis=axes)
        self.dbeta = dy.sum(axis=axes)
        if not self._train:
            return dy * self.gamma * self._inv
        # backprop through the batch statistics
        m = self._m
        dxhat = dy * self.gamma
        return (self._inv / m) * (m * dxhat
                                  - dxhat.sum(axis=axes)
                                  - self._xhat * (dxhat * self._xhat).sum(axis=axes))

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self.dgamma, "beta": self.dbeta}

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class _Pool(_Layer):
    def __init__(self, spec):
        self.width = spec.width
        if not self.width or self.width < 1:
            raise ShapeMismatch("pool width must be >= 1")

    def build(self, in_shape, rng, dtype):
        if len(in_shape) == 1:
            in_shape = (in_shape[0], 1)
        length, c = in_shape
        if length < self.width:
            raise ShapeMismatch(f"pool width {self.width} wider than input {length}")
        return (length // self.width, c)


class _AvgPool(_Pool):
    kind = "avgpool"

    def forward(self, x, train, update_stats=True):
        x = _promote(x)
        b, length, c = x.shape
        l_out = length // self.width
        self._in_shape = x.shape
        xt = x[:, :l_out * self.width].reshape(b, l_out, self.width, c)
        return xt.mean(axis=2)

    def backward(self, dy):
        b, length, c = self._in_shape
        l_out = dy.shape[1]
        dx = np.zeros(self._in_shape, dtype=dy.dtype)
        dx[:, :l_out * self.width] = np.repeat(dy / self.width, self.width, axis=1)
        return dx


class _MaxPool(_Pool):
    kind = "maxpool"

    def forward(self, x, train, update_stats=True):
        x = _promote(x)
        b, length, c = x.shape
        l_out = length // self.width
        self._in_shape = x.shape
        xt = x[:, :l_out * self.width].reshape(b, l_out, self.width, c)
        self._arg = xt.argmax(axis=2)
        return xt.max(axis=2)

    def backward(self, dy):
        b, length, c = self._in_shape
        l_out = dy.shape[1]
        dxt = np.zeros((b, l_out, self.width, c), dtype=dy.dtype)
        np.put_along_axis(dxt, self._arg[:, :, None, :], dy[:, :, None, :], axis=2)
        dx = np.zeros(self._in_shape, dtype=dy.dtype)
        dx[:, :l_out * self.width] = dxt.reshape(b, l_out * self.width, c)
        return dx


_LAYER_CLASSES = {
    "dense": _Dense,
    "conv1d": _Conv1d,
    "batchnorm": _BatchNorm,
    "relu": _Relu,
    "avgpool": _AvgPool,
    "maxpool": _MaxPool,
    "flatten": _Flatten,
    "softmax_ce_head": _SoftmaxCeHead,
}


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

class Model:
    """A built layer graph with parameters; mode is 'train' or 'infer'."""

    def __init__(self, config: ModelConfig, layers, dtype):
        self.config = config
        self.layers = layers
        self.dtype = np.dtype(dtype)
        self.mode = "train"

    @property
    def input_width(self) -> int:
        return self.config.input_width

    def set_mode(self, mode: str) -> "Model":
        if mode not in ("train", "infer"):
            raise ValueError(f"mode {mode!r} not in (train, infer)")
        self.mode = mode
        return self

    def forward(self, x, update_stats=True):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.input_width:
            raise ShapeMismatch(f"expected batch of shape (B, {self.input_width}), got {x.shape}")
        train = self.mode == "train"
        for layer in self.layers:
            x = layer.forward(x, train, update_stats)
        return x

    def backprop(self, dlogits):
        dy = dlogits
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        if dy.ndim == 3:  # undo single-channel promotion of the first conv stage
            dy = dy[:, :, 0]
        return dy

    def _named(self, getter):
        out = OrderedDict()
        for i, layer in enumerate(self.layers):
            for name, arr in getter(layer).items():
                out[f"L{i:02d}.{layer.kind}.{name}"] = arr
        return out

    def parameters(self) -> "OrderedDict[str, np.ndarray]":
        """Live (mutable) parameter arrays, keyed by stable names."""
        return self._named(lambda l: l.params())

    def gradients(self) -> "OrderedDict[str, np.ndarray]":
        return self._named(lambda l: l.grads())

    def state_tensors(self) -> "OrderedDict[str, np.ndarray]":
        return self._named(lambda l: l.state())

    def set_parameters(self, values) -> None:
        for i, layer in enumerate(self.layers):
            for name in layer.params():
                key = f"L{i:02d}.{layer.kind}.{name}"
                arr = np.asarray(values[key], dtype=self.dtype)
                if arr.shape != getattr(layer, name).shape:
                    raise ShapeMismatch(f"{key}: shape {arr.shape} != {getattr(layer, name).shape}")
                setattr(layer, name, arr.copy())

    def set_state_tensors(self, values) -> None:
        for i, layer in enumerate(self.layers):
            for name in layer.state():
                key = f"L{i:02d}.{layer.kind}.{name}"
                setattr(layer, name, np.asarray(values[key], dtype=self.dtype).copy())

    def clone(self) -> "Model":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "Model":
        """Deep copy with parameters and state cast (f64 for verification)."""
        other = self.clone()
        other.dtype = np.dtype(dtype)
        for layer in other.layers:
            for name in list(layer.params()) + list(layer.state()):
                setattr(layer, name, getattr(layer, name).astype(dtype))
        return other

    def loss_on(self, x, labels, update_stats=True) -> float:
        loss, _ = loss_ce(self.forward(x, update_stats=update_stats), labels)
        return loss


def build_model(config: ModelConfig, seed: int, dtype=np.float32) -> Model:
    """Shape-check the layer graph and initialize parameters (He/Glorot uniform)."""
    if config.input_width < 1:
        raise ShapeMismatch("input_width must be >= 1")
    if not config.layers or config.layers[-1].kind != "softmax_ce_head":
        raise ShapeMismatch("model must end with a softmax_ce_head layer")
    rng = substream(seed, "init")
    layers = []
    shape = (config.input_width,)
    for i, spec in enumerate(config.layers):
        if spec.kind not in _LAYER_CLASSES:
            raise ShapeMismatch(f"layer {i}: unknown kind {spec.kind!r}")
        layer = _LAYER_CLASSES[spec.kind](spec)
        try:
            shape = layer.build(shape, rng, dtype)
        except ShapeMismatch as e:
            raise ShapeMismatch(f"layer {i} ({spec.kind}): {e}") from None
        layers.append(layer)
    return Model(config, layers, dtype)


def param_count(model: Model) -> int:
    return sum(int(p.size) for p in model.parameters().values())


def forward(model: Model, batch) -> np.ndarray:
    """Logits for a (B, n_samples) batch, honoring model.mode."""
    return model.forward(batch)


def loss_ce(logits: np.ndarray, labels) -> tuple:
    """Mean cross-entropy over the batch and its gradient w.r.t. logits.

    Stabilized by max-subtraction; gradient rows sum to zero.
    """
    labels = np.asarray(labels)
    b = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    loss = float(-logp[np.arange(b), labels].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(b), labels] -= 1.0
    return loss, dlogits / b


def backward(model: Model, batch, labels, update_stats=True):
    """Forward + loss + reverse pass; returns (loss, gradients by name)."""
    logits = model.forward(batch, update_stats=update_stats)
    loss, dlogits = loss_ce(logits, labels)
    model.backprop(dlogits)
    return loss, model.gradients()


def input_gradient(model: Model, batch, labels):
    """Gradient of the per-trace cross-entropy w.r.t. the input samples.

    Returns (loss, dx) with dx scaled to per-trace losses (batch-mean factor
    removed), shape equal to batch.
    """
    logits = model.forward(batch, update_stats=False)
    loss, dlogits = loss_ce(logits, labels)
    dx = model.backprop(dlogits)
    return loss, dx * batch.shape[0]


def grad_check(model: Model, batch, labels, eps=1e-5, coords_per_layer=20, seed=0,
               scale_floor=1e-6) -> float:
    """Max relative error of backward() against central finite differences.

    Samples `coords_per_layer` coordinates per parameter tensor. Errors are
    scaled by the largest analytic-gradient magnitude within the same tensor
    so that near-zero coordinates do not dominate; `scale_floor` keeps the
    comparison meaningful for tensors whose gradient vanishes identically
    (e.g. a conv bias cancelled by the following batchnorm), where central
    differences measure nothing but roundoff. Requires a float64 model.
    """
    if model.dtype != np.float64:
        raise ValueError("grad_check requires a float64 model (build or cast with astype)")
    batch = np.asarray(batch, dtype=np.float64)
    _, grads = backward(model, batch, labels, update_stats=False)
    params = model.parameters()
    rng = substream(seed, "gradcheck")
    worst = 0.0
    for name, g in grads.items():
        p = params[name]
        scale = max(float(np.abs(g).max()), scale_floor)
        n = min(coords_per_layer, p.size)
        flat_idx = rng.choice(p.size, size=n, replace=False)
        for fi in flat_idx:
            idx = np.unravel_index(fi, p.shape)
            orig = p[idx]
            p[idx] = orig + eps
            lp = model.loss_on(batch, labels, update_stats=False)
            p[idx] = orig - eps
            lm = model.loss_on(batch, labels, update_stats=False)
            p[idx] = orig
            fd = (lp - lm) / (2 * eps)
            worst = max(worst, abs(fd - float(g[idx])) / scale)
    return worst


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def load_preset(name: str, input_width: Optional[int] = None) -> ModelConfig:
    """Load a shipped architecture preset; optionally override the input width.

    Presets approximate the published attack networks (exact layer tables are
    not restated here); see each JSON file for the documented parameter count
    at the default width.
    """
    try:
        text = (importlib.resources.files("scaforge") / "presets" / f"{name}.json").read_text()
    except FileNotFoundError:
        raise FileNotFoundError(f"no preset named {name!r}") from None
    cfg = ModelConfig.from_json(text)
    if input_width is not None:
        cfg.input_width = int(input_width)
    return cfg
