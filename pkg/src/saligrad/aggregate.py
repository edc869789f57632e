"""Reduce per-location contribution fields to scalar saliency maps.

Each aggregator turns the contribution at one location into a single number.
For factored conv contributions the Frobenius norm of an outer product
splits into a product of vector norms, ||g x^T||_F = ||g|| ||x||, so norm
aggregators never expand the matrices. The positive-filtered norm also has a
closed factored form: the positive entries of g x^T are exactly the products
of same-signed factor entries, giving

    ||(g x^T)_+||_F^2 = ||g_+||^2 ||x_+||^2 + ||g_-||^2 ||x_-||^2.

Presets bundle an extraction kind with an aggregator into the familiar
named methods (plain gradient maps, linear approximation, normgrad and its
variants, grad-cam).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import nn
from .extract import (AttachPoint, BiasIdentity, ContribField, ConvIdentity,
                      RealConv, ScalingIdentity, spatial_contributions)


class Aggregator(str, enum.Enum):
    SUM = "sum"
    MAXABS = "maxabs"
    NORM = "norm"
    POS_FILTER_NORM = "pos-filter-norm"
    POS_FILTER_SUM = "pos-filter-sum"


@dataclass
class SaliencyMap:
    """A scalar per spatial location, plus where and how it was computed."""

    values: np.ndarray            # (H, W)
    layer: AttachPoint
    method: str = ""
    input_id: str = ""
    signed: bool = False

    def with_values(self, values: np.ndarray) -> "SaliencyMap":
        return SaliencyMap(values=np.asarray(values, dtype=np.float64),
                           layer=self.layer, method=self.method,
                           input_id=self.input_id, signed=self.signed)


def _possq(v: np.ndarray) -> np.ndarray:
    clipped = np.clip(v, 0.0, None)
    return np.sum(clipped * clipped, axis=0)


def aggregate(field: ContribField, aggregator: Aggregator) -> np.ndarray:
    """Reduce a contribution field to an (H, W) array of scalars."""
    aggregator = Aggregator(aggregator)
    if field.kind == "vector":
        v = field.vectors
        if aggregator == Aggregator.SUM:
            return v.sum(axis=0)
        if aggregator == Aggregator.MAXABS:
            return np.abs(v).max(axis=0)
        if aggregator == Aggregator.NORM:
            return np.sqrt(np.sum(v * v, axis=0))
        if aggregator == Aggregator.POS_FILTER_NORM:
            return np.sqrt(_possq(v))
        if aggregator == Aggregator.POS_FILTER_SUM:
            return np.clip(v, 0.0, None).sum(axis=0)
    else:
        g, x = field.gvec, field.xvec
        if aggregator == Aggregator.NORM:
            return np.sqrt(np.sum(g * g, axis=0) * np.sum(x * x, axis=0))
        if aggregator == Aggregator.POS_FILTER_NORM:
            return np.sqrt(_possq(g) * _possq(x) + _possq(-g) * _possq(-x))
        raise ValueError(
            f"aggregator {aggregator.value!r} requires materializing factored "
            "contributions; only norm aggregators apply")
    raise ValueError(f"unknown aggregator {aggregator!r}")


# --------------------------------------------------------------------------
# method presets

class MethodPreset(str, enum.Enum):
    GRADIENT = "gradient"
    GRADIENT_SUM = "gradient-sum"
    LINEAR_APPROX = "linear-approx"
    SELECTIVE_NORMGRAD = "selective-normgrad"
    NORMGRAD = "normgrad"
    NORMGRAD_REAL = "normgrad-real"
    GRADCAM = "gradcam"


# extraction kind and aggregator behind each preset; gradcam is special-cased
PRESET_COMPONENTS = {
    MethodPreset.GRADIENT: (BiasIdentity(), Aggregator.MAXABS),
    MethodPreset.GRADIENT_SUM: (BiasIdentity(), Aggregator.SUM),
    MethodPreset.LINEAR_APPROX: (ScalingIdentity(), Aggregator.SUM),
    MethodPreset.SELECTIVE_NORMGRAD: (ScalingIdentity(), Aggregator.POS_FILTER_NORM),
    MethodPreset.NORMGRAD: (ConvIdentity(1), Aggregator.NORM),
    MethodPreset.NORMGRAD_REAL: (RealConv(), Aggregator.NORM),
}


def method_saliency(model: nn.ModelGraph, x: np.ndarray, class_index: int,
                    preset: MethodPreset, attach: AttachPoint,
                    input_id: str = "") -> SaliencyMap:
    """One forward/backward pass on the class logit, then extract + aggregate.

    normgrad-real requires attach to name a conv layer (the side is ignored;
    the layer's own interfaces define the decomposition). gradcam is handled
    by gradcam(); routing it through here works too.
    """
    preset = MethodPreset(preset)
    if preset == MethodPreset.GRADCAM:
        return gradcam(model, x, class_index, attach, input_id=input_id)
    tape = nn.forward(model, x)
    nn.backward(model, tape, nn.ClassLogit(class_index))
    kind, aggregator = PRESET_COMPONENTS[preset]
    field = spatial_contributions(tape, attach, kind)
    values = aggregate(field, aggregator)
    return SaliencyMap(values=values, layer=attach, method=preset.value,
                       input_id=input_id, signed=(aggregator == Aggregator.SUM))


def gradcam(model: nn.ModelGraph, x: np.ndarray, class_index: int,
            attach: AttachPoint, input_id: str = "") -> SaliencyMap:
    """Channel-sum of activations weighted by spatially averaged gradients.

    The gradient at the attach point is averaged over locations to one
    weight per channel; the map is the positive part of the weighted channel
    sum. The positive filter comes after the channel sum, which is what
    separates this from a positive-filtered linear approximation when the
    gradient varies across locations.
    """
    tape = nn.forward(model, x)
    nn.backward(model, tape, nn.ClassLogit(class_index))
    rec = tape.record(attach.layer_name)
    xv, g = (rec.x_out, rec.g_out) if attach.side == "output" else (rec.x_in, rec.g_in)
    if xv.ndim != 3:
        raise ValueError(
            f"attach point {attach.layer_name!r}/{attach.side} is not spatial")
    gbar = g.mean(axis=(1, 2))
    values = np.clip(np.einsum("k,khw->hw", gbar, xv), 0.0, None)
    return SaliencyMap(values=values, layer=attach, method=MethodPreset.GRADCAM.value,
                       input_id=input_id, signed=False)
