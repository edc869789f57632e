"""Weighting and fusion of saliency maps taken at several depths.

Maps from different layers live on different grids, so combination first
bilinearly upsamples every map to a common target (grid corners aligned to
pixel centers), then rescales each map to [0, 1] by min-max, and finally
mixes: a weighted sum, or a weighted geometric product. Weights come from
one of four schemes, always normalized to sum to one:

    uniform        equal weight per layer
    linear-interp  weight grows linearly with depth position
    spread         how much the layer's per-image spatial mean activation
                   varies across a sample of images
    accuracy       training accuracy of a linear probe on the layer's
                   globally pooled features
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .aggregate import SaliencyMap

EPS_FLOOR = 1e-12


# --------------------------------------------------------------------------
# upsampling

def upsample(smap: SaliencyMap, target_shape: tuple[int, int]) -> SaliencyMap:
    """Bilinear upsample to target_shape, corner pixels mapped to corner pixels.

    Source coordinates for target pixel r are r * (H_src - 1) / (H_tgt - 1),
    so the four corners reproduce source corner values exactly and a constant
    map stays constant. Target dims must be >= source dims; an equal-size
    call returns an identical copy.
    """
    th, tw = int(target_shape[0]), int(target_shape[1])
    values = smap.values
    sh, sw = values.shape
    if th < sh or tw < sw:
        raise ValueError(f"cannot downsample {values.shape} to {(th, tw)}")
    if (th, tw) == (sh, sw):
        return smap.with_values(values.copy())

    def axis_coords(src: int, tgt: int) -> np.ndarray:
        if tgt == 1 or src == 1:
            return np.zeros(tgt)
        return np.arange(tgt) * ((src - 1) / (tgt - 1))

    rows = axis_coords(sh, th)
    cols = axis_coords(sw, tw)
    r0 = np.minimum(np.floor(rows).astype(int), sh - 1)
    c0 = np.minimum(np.floor(cols).astype(int), sw - 1)
    r1 = np.minimum(r0 + 1, sh - 1)
    c1 = np.minimum(c0 + 1, sw - 1)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    v00 = values[np.ix_(r0, c0)]
    v01 = values[np.ix_(r0, c1)]
    v10 = values[np.ix_(r1, c0)]
    v11 = values[np.ix_(r1, c1)]
    out = ((1 - fr) * (1 - fc) * v00 + (1 - fr) * fc * v01
           + fr * (1 - fc) * v10 + fr * fc * v11)
    return smap.with_values(out)


# --------------------------------------------------------------------------
# weighting schemes

@dataclass
class LayerWeights:
    """Normalized per-layer weights (sum to 1) plus the scheme that made them."""

    gamma: dict[str, float]
    scheme: str

    def __post_init__(self):
        total = sum(self.gamma.values())
        if not np.isclose(total, 1.0, rtol=0, atol=1e-9):
            raise ValueError(f"weights must sum to 1, got {total}")

    @property
    def layers(self) -> list[str]:
        return list(self.gamma)


def _normalized(raw: dict[str, float], scheme: str) -> LayerWeights:
    total = sum(raw.values())
    if total <= 0:
        raise ValueError(f"{scheme} weights sum to {total}, cannot normalize")
    return LayerWeights({k: v / total for k, v in raw.items()}, scheme)


def uniform_weights(layers: list[str]) -> LayerWeights:
    if not layers:
        raise ValueError("need at least one layer")
    return LayerWeights({name: 1.0 / len(layers) for name in layers}, "uniform")


def linear_interp_weights(layers: list[str]) -> LayerWeights:
    """Weight proportional to 1-based position: deeper layers count more."""
    if not layers:
        raise ValueError("need at least one layer")
    return _normalized({name: float(j) for j, name in enumerate(layers, start=1)},
                       "linear-interp")


def feature_spread_weights(model: nn.ModelGraph, images: list[np.ndarray],
                           layers: list[str]) -> LayerWeights:
    """Spread of per-image mean activations at each layer's output.

    For each image the layer's output is reduced to its spatial mean vector
    (length K). The layer's raw weight is the mean absolute deviation of
    those vectors around their centroid, averaged over channels. Layers whose
    sample statistics never move score zero; if every layer scores zero the
    scheme degenerates and uniform weights are returned instead.
    """
    if len(images) < 2:
        raise ValueError("feature spread needs at least two images")
    if not layers:
        raise ValueError("need at least one layer")
    means: dict[str, list[np.ndarray]] = {name: [] for name in layers}
    for img in images:
        tape = nn.forward(model, img)
        for name in layers:
            out = tape.record(name).x_out
            if out.ndim != 3:
                raise ValueError(f"layer {name!r} output is not spatial")
            means[name].append(out.mean(axis=(1, 2)))
    raw = {}
    for name in layers:
        stack = np.stack(means[name])            # (M, K)
        centroid = stack.mean(axis=0)
        raw[name] = float(np.mean(np.abs(stack - centroid)))
    if all(v == 0.0 for v in raw.values()):
        return LayerWeights(dict(uniform_weights(layers).gamma), "spread")
    return _normalized(raw, "spread")


@dataclass(frozen=True)
class ProbeConfig:
    iterations: int = 200
    lr: float = 0.1


def train_linear_probe(features: np.ndarray, labels: np.ndarray,
                       num_classes: int, config: ProbeConfig = ProbeConfig()):
    """Multinomial logistic regression by full-batch gradient descent.

    Zero-initialized weights and bias, no regularization, trained and scored
    on the same sample. Returns (top-1 accuracy, (weight, bias)).
    """
    feats = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    m, k = feats.shape
    if m != labels.shape[0]:
        raise ValueError("features and labels disagree on sample count")
    if np.unique(labels).size < 2:
        raise ValueError("probe needs at least two classes present")
    w = np.zeros((num_classes, k))
    b = np.zeros(num_classes)
    onehot = np.zeros((m, num_classes))
    onehot[np.arange(m), labels] = 1.0
    for _ in range(config.iterations):
        z = feats @ w.T + b
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        delta = (p - onehot) / m
        w -= config.lr * (delta.T @ feats)
        b -= config.lr * delta.sum(axis=0)
    pred = np.argmax(feats @ w.T + b, axis=1)
    return float(np.mean(pred == labels)), (w, b)


def probe_accuracy_weights(model: nn.ModelGraph, images: list[np.ndarray],
                           labels: np.ndarray, layers: list[str],
                           config: ProbeConfig = ProbeConfig()) -> LayerWeights:
    """Linear-probe training accuracy on globally pooled activations per layer."""
    if not layers:
        raise ValueError("need at least one layer")
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) != labels.shape[0]:
        raise ValueError("images and labels disagree on sample count")
    pooled: dict[str, list[np.ndarray]] = {name: [] for name in layers}
    for img in images:
        tape = nn.forward(model, img)
        for name in layers:
            out = tape.record(name).x_out
            if out.ndim != 3:
                raise ValueError(f"layer {name!r} output is not spatial")
            pooled[name].append(out.mean(axis=(1, 2)))
    raw = {}
    for name in layers:
        acc, _ = train_linear_probe(np.stack(pooled[name]), labels,
                                    model.num_classes, config)
        raw[name] = acc
    return _normalized(raw, "accuracy")


WEIGHT_SCHEMES = ("uniform", "linear-interp", "spread", "accuracy")


# --------------------------------------------------------------------------
# combination

@dataclass
class CombinedMap:
    """Fusion of several per-layer maps at the target resolution."""

    values: np.ndarray
    weights: LayerWeights
    mode: str
    sources: list[str] = field(default_factory=list)


def _minmax(values: np.ndarray) -> np.ndarray:
    lo = values.min()
    hi = values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def combine(maps: list[SaliencyMap], weights: LayerWeights, mode: str,
            target_shape: tuple[int, int], normalize: bool = True) -> CombinedMap:
    """Fuse per-layer maps into one map at target_shape.

    Every weighted layer must appear exactly once among the maps. Each map is
    upsampled, then (by default) min-max rescaled to [0, 1], making positive
    rescaling of any source a no-op. mode="add" takes the weighted sum;
    mode="prod" takes prod (m + 1e-12)^gamma, clipped back into [0, 1] since
    the floor can push values a hair past one. Product mode on raw
    (normalize=False) maps rejects negative values outright.
    """
    if mode not in ("add", "prod"):
        raise ValueError(f"mode must be 'add' or 'prod', got {mode!r}")
    by_layer = {}
    for m in maps:
        key = m.layer.layer_name
        if key in by_layer:
            raise ValueError(f"duplicate map for layer {key!r}")
        by_layer[key] = m
    if set(by_layer) != set(weights.gamma):
        raise ValueError(
            f"maps cover layers {sorted(by_layer)}, weights cover {sorted(weights.gamma)}")

    th, tw = target_shape
    prepared = {}
    for name, m in by_layer.items():
        up = upsample(m, (th, tw)).values
        if normalize:
            up = _minmax(up)
        elif mode == "prod" and np.any(up < 0):
            raise ValueError(
                f"product mode needs nonnegative maps; layer {name!r} has negatives "
                "(enable normalization or use mode='add')")
        prepared[name] = up

    if mode == "add":
        out = np.zeros((th, tw))
        for name, gamma in weights.gamma.items():
            out += gamma * prepared[name]
    else:
        out = np.ones((th, tw))
        for name, gamma in weights.gamma.items():
            out *= np.power(prepared[name] + EPS_FLOOR, gamma)
        out = np.clip(out, 0.0, 1.0)
    return CombinedMap(values=out, weights=weights, mode=mode,
                       sources=[name for name in weights.gamma])
