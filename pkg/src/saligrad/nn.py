"""Chain CNN with exact reverse-mode gradients and full per-layer records.

Models are plain chains of layers (no branching). A forward pass returns a
Tape holding every layer's input and output activation; a backward pass fills
in the gradients at the same interfaces plus one parameter-gradient tensor
per parameterized layer. Keeping all four per-layer arrays around is the
point: saliency extraction reads them directly instead of re-deriving
anything.

Conventions: activations are float64, spatial tensors are channel-first
(K, H, W), vectors are 1-D. Each layer owns at most one parameter tensor.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .tensor import check_finite, fold_patches, unfold_patches


# --------------------------------------------------------------------------
# objectives

@dataclass(frozen=True)
class ClassLogit:
    """Differentiate the raw logit of one class."""
    class_index: int


@dataclass(frozen=True)
class CrossEntropy:
    """Softmax cross-entropy against one target class."""
    target: int


Objective = ClassLogit | CrossEntropy


def _objective_at_logits(logits: np.ndarray, objective: Objective):
    """Return (scalar value, gradient at the logits)."""
    n = logits.shape[0]
    if isinstance(objective, ClassLogit):
        c = objective.class_index
        if not 0 <= c < n:
            raise ValueError(f"class index {c} out of range for {n} classes")
        seed = np.zeros_like(logits)
        seed[c] = 1.0
        return float(logits[c]), seed
    if isinstance(objective, CrossEntropy):
        t = objective.target
        if not 0 <= t < n:
            raise ValueError(f"target {t} out of range for {n} classes")
        z = logits - np.max(logits)
        logp = z - np.log(np.sum(np.exp(z)))
        probs = np.exp(logp)
        seed = probs.copy()
        seed[t] -= 1.0
        return float(-logp[t]), seed
    raise TypeError(f"unknown objective {objective!r}")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits)
    e = np.exp(z)
    return e / np.sum(e)


# --------------------------------------------------------------------------
# layers

class Layer:
    """Base layer: a named, stateless-in-forward transform with <= 1 parameter."""

    kind = "abstract"

    def __init__(self, name: str):
        self.name = name

    # parameter access; layers without parameters leave these as-is
    @property
    def param(self) -> np.ndarray | None:
        return None

    def with_param(self, values: np.ndarray) -> "Layer":
        raise ValueError(f"layer {self.name!r} ({self.kind}) has no parameter")

    def fan_in(self) -> int:
        raise ValueError(f"layer {self.name!r} ({self.kind}) has no parameter")

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, x_in: np.ndarray, g_out: np.ndarray):
        """Return (gradient at input, parameter gradient or None)."""
        raise NotImplementedError

    def config(self) -> dict:
        return {"kind": self.kind, "name": self.name}

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


def _require_spatial(layer: Layer, x: np.ndarray) -> None:
    if x.ndim != 3:
        raise ValueError(
            f"layer {layer.name!r} ({layer.kind}) expects (K, H, W) input, got shape {x.shape}")


class Conv(Layer):
    """Same-padded stride-1 convolution with an odd square kernel.

    The weight is stored flat as (out_channels, kernel_size^2 * in_channels),
    matching the column layout of unfold_patches, so the forward pass is one
    matrix product: out = weight @ unfold(x). No bias term; compose with a
    Bias layer for a shift.
    """

    kind = "conv"

    def __init__(self, name: str, kernel_size: int, in_channels: int,
                 out_channels: int, weight: np.ndarray | None = None):
        super().__init__(name)
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {kernel_size}")
        self.kernel_size = int(kernel_size)
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        shape = (self.out_channels, self.kernel_size ** 2 * self.in_channels)
        if weight is None:
            weight = np.zeros(shape)
        weight = np.ascontiguousarray(weight, dtype=np.float64)
        if weight.shape != shape:
            raise ValueError(f"conv weight must have shape {shape}, got {weight.shape}")
        self.weight = weight

    @property
    def param(self):
        return self.weight

    def with_param(self, values):
        return Conv(self.name, self.kernel_size, self.in_channels,
                    self.out_channels, values)

    def fan_in(self) -> int:
        return self.kernel_size ** 2 * self.in_channels

    def forward(self, x):
        _require_spatial(self, x)
        if x.shape[0] != self.in_channels:
            raise ValueError(
                f"layer {self.name!r} expects {self.in_channels} channels, got {x.shape[0]}")
        _, h, w = x.shape
        cols = unfold_patches(x, self.kernel_size)
        return np.ascontiguousarray((self.weight @ cols).reshape(self.out_channels, h, w))

    def backward(self, x_in, g_out):
        _, h, w = x_in.shape
        cols = unfold_patches(x_in, self.kernel_size)
        g_mat = g_out.reshape(self.out_channels, h * w)
        grad_w = g_mat @ cols.T
        g_cols = self.weight.T @ g_mat
        g_in = fold_patches(g_cols, self.kernel_size, self.in_channels, h, w)
        return g_in, grad_w

    def config(self):
        return {"kind": self.kind, "name": self.name,
                "kernel_size": self.kernel_size,
                "in_channels": self.in_channels,
                "out_channels": self.out_channels}


class Bias(Layer):
    """Per-channel additive shift, shared across all spatial locations."""

    kind = "bias"

    def __init__(self, name: str, channels: int, values: np.ndarray | None = None):
        super().__init__(name)
        self.channels = int(channels)
        if values is None:
            values = np.zeros(self.channels)
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.shape != (self.channels,):
            raise ValueError(f"bias must have shape ({self.channels},), got {values.shape}")
        self.values = values

    @property
    def param(self):
        return self.values

    def with_param(self, values):
        return Bias(self.name, self.channels, values)

    def fan_in(self) -> int:
        # no incoming weights; the channel count is the only natural scale
        return self.channels

    def forward(self, x):
        _require_spatial(self, x)
        if x.shape[0] != self.channels:
            raise ValueError(
                f"layer {self.name!r} expects {self.channels} channels, got {x.shape[0]}")
        return x + self.values[:, None, None]

    def backward(self, x_in, g_out):
        return g_out.copy(), g_out.sum(axis=(1, 2))

    def config(self):
        return {"kind": self.kind, "name": self.name, "channels": self.channels}


class Scaling(Layer):
    """Per-channel multiplicative gain, shared across all spatial locations."""

    kind = "scaling"

    def __init__(self, name: str, channels: int, values: np.ndarray | None = None):
        super().__init__(name)
        self.channels = int(channels)
        if values is None:
            values = np.ones(self.channels)
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.shape != (self.channels,):
            raise ValueError(f"scaling must have shape ({self.channels},), got {values.shape}")
        self.values = values

    @property
    def param(self):
        return self.values

    def with_param(self, values):
        return Scaling(self.name, self.channels, values)

    def fan_in(self) -> int:
        return self.channels

    def forward(self, x):
        _require_spatial(self, x)
        if x.shape[0] != self.channels:
            raise ValueError(
                f"layer {self.name!r} expects {self.channels} channels, got {x.shape[0]}")
        return x * self.values[:, None, None]

    def backward(self, x_in, g_out):
        g_in = g_out * self.values[:, None, None]
        grad = (g_out * x_in).sum(axis=(1, 2))
        return g_in, grad

    def config(self):
        return {"kind": self.kind, "name": self.name, "channels": self.channels}


class ReLU(Layer):
    """max(x, 0); the derivative at exactly zero is taken as zero."""

    kind = "relu"

    def forward(self, x):
        return np.maximum(x, 0.0)

    def backward(self, x_in, g_out):
        return g_out * (x_in > 0.0), None


class MaxPool(Layer):
    """2x2 max pooling with stride 2; ties route the gradient to the first
    maximal element in row-major window order. Odd trailing rows/columns are
    dropped and receive zero gradient."""

    kind = "maxpool"

    @staticmethod
    def _windows(x):
        k, h, w = x.shape
        h2, w2 = h // 2, w // 2
        cropped = x[:, :h2 * 2, :w2 * 2]
        return (cropped.reshape(k, h2, 2, w2, 2).transpose(0, 1, 3, 2, 4)
                .reshape(k, h2, w2, 4)), h2, w2

    def forward(self, x):
        _require_spatial(self, x)
        if x.shape[1] < 2 or x.shape[2] < 2:
            raise ValueError(f"layer {self.name!r} needs at least 2x2 spatial extent")
        win, _, _ = self._windows(x)
        return np.ascontiguousarray(win.max(axis=-1))

    def backward(self, x_in, g_out):
        k, h, w = x_in.shape
        win, h2, w2 = self._windows(x_in)
        idx = win.argmax(axis=-1)  # argmax picks the first maximum
        scattered = np.zeros_like(win)
        np.put_along_axis(scattered, idx[..., None], g_out[..., None], axis=-1)
        g_in = np.zeros_like(x_in)
        g_in[:, :h2 * 2, :w2 * 2] = (scattered.reshape(k, h2, w2, 2, 2)
                                     .transpose(0, 1, 3, 2, 4)
                                     .reshape(k, h2 * 2, w2 * 2))
        return g_in, None


class GlobalAvgPool(Layer):
    """Average over all spatial locations: (K, H, W) -> (K,)."""

    kind = "gap"

    def forward(self, x):
        _require_spatial(self, x)
        return x.mean(axis=(1, 2))

    def backward(self, x_in, g_out):
        _, h, w = x_in.shape
        g_in = np.broadcast_to((g_out / (h * w))[:, None, None], x_in.shape)
        return np.ascontiguousarray(g_in), None


class Flatten(Layer):
    """(K, H, W) -> (K*H*W,) in row-major order."""

    kind = "flatten"

    def forward(self, x):
        _require_spatial(self, x)
        return x.reshape(-1).copy()

    def backward(self, x_in, g_out):
        return g_out.reshape(x_in.shape).copy(), None


class FullyConnected(Layer):
    """Dense linear map on a vector: out = weight @ x. No bias term."""

    kind = "fc"

    def __init__(self, name: str, in_features: int, out_features: int,
                 weight: np.ndarray | None = None):
        super().__init__(name)
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        shape = (self.out_features, self.in_features)
        if weight is None:
            weight = np.zeros(shape)
        weight = np.ascontiguousarray(weight, dtype=np.float64)
        if weight.shape != shape:
            raise ValueError(f"fc weight must have shape {shape}, got {weight.shape}")
        self.weight = weight

    @property
    def param(self):
        return self.weight

    def with_param(self, values):
        return FullyConnected(self.name, self.in_features, self.out_features, values)

    def fan_in(self) -> int:
        return self.in_features

    def forward(self, x):
        if x.ndim != 1 or x.shape[0] != self.in_features:
            raise ValueError(
                f"layer {self.name!r} expects a vector of length {self.in_features}, "
                f"got shape {x.shape}")
        return self.weight @ x

    def backward(self, x_in, g_out):
        return self.weight.T @ g_out, np.outer(g_out, x_in)

    def config(self):
        return {"kind": self.kind, "name": self.name,
                "in_features": self.in_features,
                "out_features": self.out_features}


_LAYER_KINDS = {
    "conv": Conv, "bias": Bias, "scaling": Scaling, "relu": ReLU,
    "maxpool": MaxPool, "gap": GlobalAvgPool, "flatten": Flatten,
    "fc": FullyConnected,
}


def layer_from_config(cfg: dict, param: np.ndarray | None = None) -> Layer:
    """Rebuild a layer from its config() dict plus an optional parameter tensor."""
    kind = cfg.get("kind")
    if kind not in _LAYER_KINDS:
        raise ValueError(f"unknown layer kind {kind!r}")
    name = cfg["name"]
    if kind == "conv":
        return Conv(name, cfg["kernel_size"], cfg["in_channels"],
                    cfg["out_channels"], param)
    if kind == "bias":
        return Bias(name, cfg["channels"], param)
    if kind == "scaling":
        return Scaling(name, cfg["channels"], param)
    if kind == "fc":
        return FullyConnected(name, cfg["in_features"], cfg["out_features"], param)
    if param is not None:
        raise ValueError(f"layer kind {kind!r} takes no parameter")
    return _LAYER_KINDS[kind](name)


# --------------------------------------------------------------------------
# model and tape

@dataclass
class ModelGraph:
    """An ordered chain of layers. The last layer must emit num_classes logits."""

    layers: list[Layer]
    num_classes: int

    def __post_init__(self):
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate layer names: {dupes}")
        if not self.layers:
            raise ValueError("model needs at least one layer")

    def layer_names(self) -> list[str]:
        return [l.name for l in self.layers]

    def index_of(self, name: str) -> int:
        for i, l in enumerate(self.layers):
            if l.name == name:
                return i
        raise KeyError(f"no layer named {name!r}")

    def layer(self, name: str) -> Layer:
        return self.layers[self.index_of(name)]

    def copy(self) -> "ModelGraph":
        return ModelGraph([copy.deepcopy(l) for l in self.layers], self.num_classes)


def insert_layer(model: ModelGraph, index: int, layer: Layer) -> ModelGraph:
    """New model with `layer` spliced in before position `index`."""
    if not 0 <= index <= len(model.layers):
        raise ValueError(f"insert index {index} out of range")
    layers = [copy.deepcopy(l) for l in model.layers]
    layers.insert(index, copy.deepcopy(layer))
    return ModelGraph(layers, model.num_classes)


@dataclass
class LayerRecord:
    """Activations and gradients at one layer's input/output interfaces."""

    layer: Layer
    x_in: np.ndarray
    x_out: np.ndarray
    g_in: np.ndarray | None = None
    g_out: np.ndarray | None = None

    @property
    def name(self) -> str:
        return self.layer.name


@dataclass
class Tape:
    """Everything one forward (and optional backward) pass produced."""

    records: list[LayerRecord]
    logits: np.ndarray
    objective: Objective | None = None
    loss: float | None = None
    param_grads: dict[str, np.ndarray] = field(default_factory=dict)

    def record(self, name: str) -> LayerRecord:
        for rec in self.records:
            if rec.name == name:
                return rec
        raise KeyError(f"no layer named {name!r} on this tape")

    @property
    def has_gradients(self) -> bool:
        return self.objective is not None


def forward(model: ModelGraph, x: np.ndarray) -> Tape:
    """Run the chain on one input, recording every intermediate activation."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    records = []
    cur = x
    for layer in model.layers:
        out = layer.forward(cur)
        check_finite(f"layer {layer.name!r} forward", out)
        records.append(LayerRecord(layer=layer, x_in=cur, x_out=out))
        cur = out
    if cur.ndim != 1 or cur.shape[0] != model.num_classes:
        raise ValueError(
            f"model output has shape {cur.shape}, expected ({model.num_classes},) logits")
    return Tape(records=records, logits=cur)


def backward(model: ModelGraph, tape: Tape, objective: Objective) -> Tape:
    """Fill the tape with gradients of `objective` at every interface.

    After this call every record carries g_in and g_out, and param_grads maps
    each parameterized layer's name to the gradient of the objective with
    respect to its parameter tensor.
    """
    if len(tape.records) != len(model.layers):
        raise ValueError("tape does not match model")
    loss, g = _objective_at_logits(tape.logits, objective)
    tape.objective = objective
    tape.loss = loss
    tape.param_grads = {}
    for rec in reversed(tape.records):
        rec.g_out = g
        g, param_grad = rec.layer.backward(rec.x_in, g)
        check_finite(f"layer {rec.name!r} backward", g)
        rec.g_in = g
        if param_grad is not None:
            tape.param_grads[rec.name] = param_grad
    return tape


def sgd_step(model: ModelGraph, grads: dict[str, np.ndarray], lr: float) -> ModelGraph:
    """One plain gradient step; returns a new model, the input is untouched.

    lr == 0 returns a bit-identical copy (the arithmetic path could flip the
    sign of a parameter entry that is exactly -0.0).
    """
    if lr == 0.0:
        return model.copy()
    layers = []
    for layer in model.layers:
        g = grads.get(layer.name)
        if g is None:
            layers.append(copy.deepcopy(layer))
            continue
        p = layer.param
        if p is None:
            raise ValueError(f"gradient supplied for parameterless layer {layer.name!r}")
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter shape {p.shape} "
                f"for layer {layer.name!r}")
        layers.append(layer.with_param(p - lr * g))
    return ModelGraph(layers, model.num_classes)


# --------------------------------------------------------------------------
# flat parameter views (used by the meta step diagnostics and tests)

def flatten_params(model: ModelGraph) -> np.ndarray:
    """All parameter tensors concatenated in chain order."""
    parts = [l.param.ravel() for l in model.layers if l.param is not None]
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


def with_flat_params(model: ModelGraph, vec: np.ndarray) -> ModelGraph:
    """Rebuild the model from a flat parameter vector (inverse of flatten_params)."""
    vec = np.asarray(vec, dtype=np.float64)
    layers = []
    pos = 0
    for layer in model.layers:
        p = layer.param
        if p is None:
            layers.append(copy.deepcopy(layer))
            continue
        layers.append(layer.with_param(vec[pos:pos + p.size].reshape(p.shape)))
        pos += p.size
    if pos != vec.size:
        raise ValueError(f"parameter vector has {vec.size} entries, model needs {pos}")
    return ModelGraph(layers, model.num_classes)


def flatten_grads(model: ModelGraph, grads: dict[str, np.ndarray]) -> np.ndarray:
    """Parameter gradients concatenated in the same order as flatten_params."""
    parts = []
    for layer in model.layers:
        if layer.param is None:
            continue
        g = grads.get(layer.name)
        parts.append(np.zeros(layer.param.size) if g is None else np.asarray(g).ravel())
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)
