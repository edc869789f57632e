"""Finite-difference verification of the engine's analytic gradients.

Central differences with step h on the scalar objective, compared against
the backward pass, tensor by tensor. The reported relative error is
||a - b||_inf / max(||a||_inf, ||b||_inf, floor): elementwise ratios on
entries near zero amplify finite-difference noise past any honest threshold,
so the comparison is made at the tensor level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    diff = float(np.max(np.abs(a - b)))
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), floor)
    return diff / scale


def _objective_value(model: nn.ModelGraph, x: np.ndarray, objective) -> float:
    tape = nn.forward(model, x)
    value, _ = nn._objective_at_logits(tape.logits, objective)
    return value


def finite_difference_param_grads(model: nn.ModelGraph, x: np.ndarray,
                                  objective, h: float = 1e-5) -> dict[str, np.ndarray]:
    """Central-difference gradient for every parameter tensor."""
    out = {}
    for layer in model.layers:
        p = layer.param
        if p is None:
            continue
        grad = np.zeros_like(p)
        flat = grad.ravel()
        base = p.ravel()
        for i in range(base.size):
            bumped = base.copy()
            bumped[i] = base[i] + h
            plus = _objective_value(
                nn.ModelGraph([l if l is not layer else layer.with_param(bumped.reshape(p.shape))
                               for l in model.layers], model.num_classes), x, objective)
            bumped[i] = base[i] - h
            minus = _objective_value(
                nn.ModelGraph([l if l is not layer else layer.with_param(bumped.reshape(p.shape))
                               for l in model.layers], model.num_classes), x, objective)
            flat[i] = (plus - minus) / (2.0 * h)
        out[layer.name] = grad
    return out


def finite_difference_input_grad(model: nn.ModelGraph, x: np.ndarray,
                                 objective, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient with respect to the input tensor."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_x = x.ravel()
    flat_g = grad.ravel()
    for i in range(flat_x.size):
        bumped = flat_x.copy()
        bumped[i] = flat_x[i] + h
        plus = _objective_value(model, bumped.reshape(x.shape), objective)
        bumped[i] = flat_x[i] - h
        minus = _objective_value(model, bumped.reshape(x.shape), objective)
        flat_g[i] = (plus - minus) / (2.0 * h)
    return grad


# --------------------------------------------------------------------------
# randomized whole-engine check

def _init_conv(rng, name, n, cin, cout):
    w = rng.normal(0.0, 1.0 / np.sqrt(n * n * cin), size=(cout, n * n * cin))
    return nn.Conv(name, n, cin, cout, w)


def _init_fc(rng, name, fin, fout):
    w = rng.normal(0.0, 1.0 / np.sqrt(fin), size=(fout, fin))
    return nn.FullyConnected(name, fin, fout, w)


def random_model(rng: np.random.Generator):
    """A small random chain covering every layer kind across draws.

    Returns (model, input_shape). Architecture choices (kernel sizes, channel
    counts, pooling, head style) vary with the generator state so a batch of
    these exercises every code path.
    """
    cin = int(rng.integers(1, 4))
    size = int(rng.choice([4, 6]))
    c1 = int(rng.integers(2, 5))
    c2 = int(rng.integers(2, 5))
    n1 = int(rng.choice([1, 3]))
    n2 = int(rng.choice([3, 5]))
    classes = int(rng.integers(2, 5))

    layers = [
        _init_conv(rng, "conv1", n1, cin, c1),
        nn.Scaling("scale1", c1, rng.normal(1.0, 0.3, size=c1)),
        nn.Bias("bias1", c1, rng.normal(0.0, 0.3, size=c1)),
        nn.ReLU("relu1"),
    ]
    spatial = size
    if rng.random() < 0.5:
        layers.append(nn.MaxPool("pool1"))
        spatial //= 2
    layers.append(_init_conv(rng, "conv2", n2, c1, c2))
    layers.append(nn.Bias("bias2", c2, rng.normal(0.0, 0.3, size=c2)))
    layers.append(nn.ReLU("relu2"))
    if rng.random() < 0.5:
        layers.append(nn.GlobalAvgPool("gap"))
        layers.append(_init_fc(rng, "fc", c2, classes))
    else:
        layers.append(nn.Flatten("flatten"))
        layers.append(_init_fc(rng, "fc", c2 * spatial * spatial, classes))
    return nn.ModelGraph(layers, classes), (cin, size, size)


@dataclass
class GradcheckReport:
    max_rel_err: float
    threshold: float
    num_models: int
    worst: str

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.threshold


def run_gradcheck(seed: int = 0, num_models: int = 20, h: float = 1e-5,
                  threshold: float = 1e-6) -> GradcheckReport:
    """Check analytic parameter and input gradients on `num_models` random nets.

    Each net is evaluated under both objectives (one class logit, softmax
    cross-entropy) at a random class.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_what = "none"
    for m in range(num_models):
        model, shape = random_model(rng)
        x = rng.normal(0.0, 1.0, size=shape)
        cls = int(rng.integers(0, model.num_classes))
        for objective in (nn.CrossEntropy(cls), nn.ClassLogit(cls)):
            tape = nn.forward(model, x)
            nn.backward(model, tape, objective)
            fd_params = finite_difference_param_grads(model, x, objective, h)
            for name, fd in fd_params.items():
                err = relative_error(tape.param_grads[name], fd)
                if err > worst:
                    worst, worst_what = err, f"net {m} {objective!r} param {name}"
            fd_input = finite_difference_input_grad(model, x, objective, h)
            err = relative_error(tape.records[0].g_in, fd_input)
            if err > worst:
                worst, worst_what = err, f"net {m} {objective!r} input"
    return GradcheckReport(max_rel_err=worst, threshold=threshold,
                           num_models=num_models, worst=worst_what)
