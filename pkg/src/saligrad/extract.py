"""Per-location contributions to spatially shared parameter gradients.

A layer whose parameter is shared across spatial locations (conv, per-channel
bias, per-channel scaling) accumulates its parameter gradient as a sum over
locations. This module splits that sum back into its per-location terms:

    bias     contribution_u = g_u                     (vector, length K)
    scaling  contribution_u = g_u * x_u               (vector, length K)
    conv     contribution_u = g_u (x patch at u)^T    (K' x N^2 K matrix)

where x and g are the activation and objective gradient at one interface of
the chain. Summed over u these recover the layer's parameter gradient
exactly; kept separate they are the raw material for saliency maps.

The conv case is never materialized: a contribution field stores the g
vectors and unfolded x patches side by side, and downstream reductions work
on the factors. The three parameterized layer kinds also double as *virtual*
layers: an identity-acting bias (b = 0), scaling (alpha = 1), or conv
(Kronecker-delta filter) can be imagined at any interface without changing
the network's function, and its would-be parameter gradient read off from
the activations and gradients already on the tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .tensor import unfold_patches


# --------------------------------------------------------------------------
# attach points and extraction kinds

@dataclass(frozen=True)
class AttachPoint:
    """A location in the chain: one layer's input or output interface.

    side="output" reads the layer's output activation and the gradient
    arriving there (a virtual layer imagined just after it); side="input"
    reads the layer's input activation and the gradient at its input (a
    virtual layer imagined just before it).
    """

    layer_name: str
    side: str = "output"

    def __post_init__(self):
        if self.side not in ("input", "output"):
            raise ValueError(f"side must be 'input' or 'output', got {self.side!r}")


@dataclass(frozen=True)
class BiasIdentity:
    """Virtual zero bias: contributions are the gradient vectors themselves."""


@dataclass(frozen=True)
class ScalingIdentity:
    """Virtual unit scaling: contributions are gradient * activation."""


@dataclass(frozen=True)
class ConvIdentity:
    """Virtual conv with a Kronecker-delta filter: factored g x patch pairs."""

    kernel_size: int = 1

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")


@dataclass(frozen=True)
class RealConv:
    """The attached conv layer's own gradient decomposition (x_in with g_out)."""


@dataclass(frozen=True)
class RealBias:
    """The attached bias layer's own decomposition: its output gradient."""


@dataclass(frozen=True)
class RealScaling:
    """The attached scaling layer's own decomposition (x_in with g_out)."""


ExtractKind = (BiasIdentity | ScalingIdentity | ConvIdentity
               | RealConv | RealBias | RealScaling)


# --------------------------------------------------------------------------
# contribution fields

@dataclass
class ContribField:
    """Per-location contribution terms over an H x W grid.

    Either `vectors` is set (one K-vector per location) or the pair
    `gvec`/`xvec` is (one factored outer product per location, channel axes
    first). Factored fields are never expanded to full matrices.
    """

    vectors: np.ndarray | None = None   # (K, H, W)
    gvec: np.ndarray | None = None      # (K', H, W)
    xvec: np.ndarray | None = None      # (D, H, W)

    def __post_init__(self):
        vec = self.vectors is not None
        fac = self.gvec is not None and self.xvec is not None
        if vec == fac:
            raise ValueError("exactly one of vectors / (gvec, xvec) must be set")
        if fac and self.gvec.shape[1:] != self.xvec.shape[1:]:
            raise ValueError("factored parts must share spatial dims")

    @property
    def kind(self) -> str:
        return "vector" if self.vectors is not None else "factored"

    @property
    def spatial_shape(self) -> tuple[int, int]:
        arr = self.vectors if self.vectors is not None else self.gvec
        return arr.shape[1], arr.shape[2]


def _resolve(tape: nn.Tape, attach: AttachPoint):
    """Activation and gradient arrays at an attach point."""
    rec = tape.record(attach.layer_name)
    if not tape.has_gradients:
        raise RuntimeError("tape has no gradients; run backward() first")
    if attach.side == "output":
        x, g = rec.x_out, rec.g_out
    else:
        x, g = rec.x_in, rec.g_in
    if x.ndim != 3:
        raise ValueError(
            f"attach point {attach.layer_name!r}/{attach.side} is not spatial "
            f"(activation shape {x.shape})")
    return x, g


def spatial_contributions(tape: nn.Tape, attach: AttachPoint,
                          kind: ExtractKind) -> ContribField:
    """Extract the per-location contribution field at an attach point.

    Identity kinds pair the activation and gradient of the same interface
    (chosen by attach.side). Real* kinds ignore the side and use the attached
    layer's own input activation with its output gradient, which is the exact
    decomposition of that layer's parameter gradient; the layer must be of
    the matching kind.
    """
    if isinstance(kind, BiasIdentity):
        _, g = _resolve(tape, attach)
        return ContribField(vectors=g.copy())
    if isinstance(kind, ScalingIdentity):
        x, g = _resolve(tape, attach)
        return ContribField(vectors=g * x)
    if isinstance(kind, ConvIdentity):
        x, g = _resolve(tape, attach)
        _, h, w = x.shape
        cols = unfold_patches(x, kind.kernel_size)
        return ContribField(gvec=g.copy(), xvec=cols.reshape(-1, h, w))

    rec = tape.record(attach.layer_name)
    if not tape.has_gradients:
        raise RuntimeError("tape has no gradients; run backward() first")
    layer = rec.layer
    if isinstance(kind, RealConv):
        if not isinstance(layer, nn.Conv):
            raise ValueError(f"RealConv needs a conv layer, {attach.layer_name!r} is {layer.kind}")
        _, h, w = rec.x_in.shape
        cols = unfold_patches(rec.x_in, layer.kernel_size)
        return ContribField(gvec=rec.g_out.copy(), xvec=cols.reshape(-1, h, w))
    if isinstance(kind, RealBias):
        if not isinstance(layer, nn.Bias):
            raise ValueError(f"RealBias needs a bias layer, {attach.layer_name!r} is {layer.kind}")
        return ContribField(vectors=rec.g_out.copy())
    if isinstance(kind, RealScaling):
        if not isinstance(layer, nn.Scaling):
            raise ValueError(
                f"RealScaling needs a scaling layer, {attach.layer_name!r} is {layer.kind}")
        return ContribField(vectors=rec.g_out * rec.x_in)
    raise TypeError(f"unknown extraction kind {kind!r}")


def contribution_sum_check(field: ContribField, tape: nn.Tape,
                           layer_name: str) -> float:
    """Max relative error between summed contributions and the recorded grad.

    The field must have been extracted with the Real* kind matching the
    layer. Vector fields sum location-wise to the (K,) parameter gradient;
    factored conv fields sum their outer products, computed as one matrix
    product of the stacked factors. Returns
    ||sum - grad||_inf / max(||sum||_inf, ||grad||_inf), 0 when both vanish.
    """
    if layer_name not in tape.param_grads:
        raise RuntimeError(f"tape holds no parameter gradient for {layer_name!r}")
    expected = tape.param_grads[layer_name]
    h, w = field.spatial_shape
    if field.kind == "vector":
        got = field.vectors.sum(axis=(1, 2))
    else:
        kp = field.gvec.shape[0]
        d = field.xvec.shape[0]
        got = field.gvec.reshape(kp, h * w) @ field.xvec.reshape(d, h * w).T
    if got.shape != expected.shape:
        raise ValueError(
            f"summed contributions have shape {got.shape}, parameter gradient "
            f"has shape {expected.shape}: field kind does not match layer {layer_name!r}")
    diff = float(np.max(np.abs(got - expected)))
    scale = max(float(np.max(np.abs(got))), float(np.max(np.abs(expected))))
    return 0.0 if scale == 0.0 else diff / scale


# --------------------------------------------------------------------------
# explicit identity layers (the virtual layers made concrete, for testing
# that their insertion leaves the network function untouched)

def identity_layer(kind: ExtractKind, channels: int, name: str) -> nn.Layer:
    """Build a concrete layer that computes the identity map on (channels, H, W)."""
    if isinstance(kind, BiasIdentity):
        return nn.Bias(name, channels, np.zeros(channels))
    if isinstance(kind, ScalingIdentity):
        return nn.Scaling(name, channels, np.ones(channels))
    if isinstance(kind, ConvIdentity):
        n = kind.kernel_size
        center = (n - 1) // 2
        weight = np.zeros((channels, n * n * channels))
        for k in range(channels):
            weight[k, k * n * n + center * n + center] = 1.0
        return nn.Conv(name, n, channels, channels, weight)
    raise ValueError(f"no explicit identity for kind {kind!r}")
