"""Saliency of the model one gradient step away.

Instead of explaining the model as it stands, take a single SGD step on the
cross-entropy loss at the target class (step size 2 * epsilon, descending or
ascending) and run the base method on the stepped parameters. The map then
reflects what the training signal at this input is about to change. With
epsilon = 0 the stepped model is bit-identical to the original and every
method reduces exactly to its base form.

taylor_residual measures |loss(theta - eps * grad) - (loss - eps * ||grad||^2)|,
the gap to the first-order expansion along the gradient; it shrinks
quadratically in eps on a smooth objective and is the numerical sanity check
that the inner step is wired correctly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn
from .aggregate import MethodPreset, SaliencyMap, method_saliency
from .extract import AttachPoint

DIRECTIONS = ("descent", "ascent")


@dataclass(frozen=True)
class MetaConfig:
    """Inner-step settings: size epsilon >= 0 and step direction."""

    epsilon: float
    direction: str = "descent"

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")


def inner_step_model(model: nn.ModelGraph, x: np.ndarray, class_index: int,
                     cfg: MetaConfig) -> nn.ModelGraph:
    """Parameters after one cross-entropy step of size 2 * epsilon."""
    tape = nn.forward(model, x)
    nn.backward(model, tape, nn.CrossEntropy(class_index))
    lr = 2.0 * cfg.epsilon
    if cfg.direction == "ascent":
        lr = -lr
    return nn.sgd_step(model, tape.param_grads, lr)


def meta_saliency(model: nn.ModelGraph, x: np.ndarray, class_index: int,
                  preset: MethodPreset, attach: AttachPoint, cfg: MetaConfig,
                  input_id: str = "") -> SaliencyMap:
    """Run `preset` on the model after the inner step."""
    stepped = inner_step_model(model, x, class_index, cfg)
    smap = method_saliency(stepped, x, class_index, preset, attach, input_id=input_id)
    smap.method = f"meta({cfg.direction},{cfg.epsilon})+{MethodPreset(preset).value}"
    return smap


# --------------------------------------------------------------------------
# first-order expansion diagnostics

def taylor_residual_core(loss_fn: Callable[[np.ndarray], float],
                         grad_fn: Callable[[np.ndarray], np.ndarray],
                         theta: np.ndarray,
                         epsilons: list[float]) -> list[float]:
    """Residuals of the descent-direction first-order expansion.

    For each eps: |loss(theta - eps * g) - (loss(theta) - eps * ||g||^2)|
    with g = grad_fn(theta) computed once.
    """
    eps = [float(e) for e in epsilons]
    if not eps or any(e <= 0 for e in eps):
        raise ValueError("epsilons must be positive")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        # strictly decreasing keeps halving-ratio diagnostics readable
        raise ValueError("epsilons must be strictly decreasing")
    theta = np.asarray(theta, dtype=np.float64)
    g = grad_fn(theta)
    gnorm2 = float(g @ g)
    base = loss_fn(theta)
    return [abs(loss_fn(theta - e * g) - (base - e * gnorm2)) for e in eps]


def taylor_residual(model: nn.ModelGraph, x: np.ndarray, class_index: int,
                    epsilons: list[float]) -> list[float]:
    """taylor_residual_core on the model's cross-entropy loss at class_index."""
    theta0 = nn.flatten_params(model)

    def loss_fn(theta: np.ndarray) -> float:
        candidate = nn.with_flat_params(model, theta)
        tape = nn.forward(candidate, x)
        value, _ = nn._objective_at_logits(tape.logits, nn.CrossEntropy(class_index))
        return value

    def grad_fn(theta: np.ndarray) -> np.ndarray:
        candidate = nn.with_flat_params(model, theta)
        tape = nn.forward(candidate, x)
        nn.backward(candidate, tape, nn.CrossEntropy(class_index))
        return nn.flatten_grads(candidate, tape.param_grads)

    return taylor_residual_core(loss_fn, grad_fn, theta0, epsilons)
