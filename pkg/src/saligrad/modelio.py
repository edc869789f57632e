"""Model serialization, the synthetic shapes dataset, and plain-SGD training.

Model file layout: an 8-byte little-endian length prefix, a JSON header of
exactly that many bytes (format version, class count, per-layer configs with
declared parameter shapes), then the raw little-endian float64 parameter
blocks concatenated in chain order. Saving a loaded model reproduces the
original file byte for byte.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .evaluation import Annotation
from .images import write_ppm

FORMAT_VERSION = 1


class ModelIOError(Exception):
    """Base class for model file problems."""


class ModelVersionError(ModelIOError):
    """The file declares a format version this code does not speak."""


class ModelShapeError(ModelIOError):
    """Declared parameter shapes disagree with the layer configuration."""


class TruncatedPayloadError(ModelIOError):
    """The parameter payload is shorter or longer than the header promises."""


def _expected_param_shape(cfg: dict) -> tuple | None:
    kind = cfg["kind"]
    if kind == "conv":
        return (cfg["out_channels"], cfg["kernel_size"] ** 2 * cfg["in_channels"])
    if kind in ("bias", "scaling"):
        return (cfg["channels"],)
    if kind == "fc":
        return (cfg["out_features"], cfg["in_features"])
    return None


def save_model(model: nn.ModelGraph, path) -> None:
    layer_entries = []
    blocks = []
    for layer in model.layers:
        entry = layer.config()
        if layer.param is not None:
            entry["param_shape"] = list(layer.param.shape)
            blocks.append(np.ascontiguousarray(layer.param, dtype="<f8").tobytes())
        layer_entries.append(entry)
    header = {"format_version": FORMAT_VERSION, "num_classes": model.num_classes,
              "layers": layer_entries}
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("ascii")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for b in blocks:
            f.write(b)


def load_model(path) -> nn.ModelGraph:
    with open(path, "rb") as f:
        prefix = f.read(8)
        if len(prefix) != 8:
            raise TruncatedPayloadError("file shorter than the length prefix")
        (header_len,) = struct.unpack("<Q", prefix)
        header_bytes = f.read(header_len)
        if len(header_bytes) != header_len:
            raise TruncatedPayloadError("header shorter than its declared length")
        try:
            header = json.loads(header_bytes)
        except json.JSONDecodeError as e:
            raise ModelIOError(f"header is not valid JSON: {e}") from e
        version = header.get("format_version")
        if version != FORMAT_VERSION:
            raise ModelVersionError(
                f"file format version {version!r}, this build reads {FORMAT_VERSION}")
        payload = f.read()

    layers = []
    offset = 0
    for cfg in header["layers"]:
        expected = _expected_param_shape(cfg)
        declared = cfg.get("param_shape")
        if expected is None:
            if declared is not None:
                raise ModelShapeError(
                    f"layer {cfg.get('name')!r} ({cfg['kind']}) must not declare parameters")
            layers.append(nn.layer_from_config(cfg))
            continue
        if declared is None or tuple(declared) != expected:
            raise ModelShapeError(
                f"layer {cfg.get('name')!r} ({cfg['kind']}) declares shape {declared}, "
                f"configuration requires {list(expected)}")
        nbytes = int(np.prod(expected)) * 8
        if offset + nbytes > len(payload):
            raise TruncatedPayloadError(
                f"payload ends inside the parameters of layer {cfg.get('name')!r}")
        param = np.frombuffer(payload[offset:offset + nbytes], dtype="<f8").reshape(expected)
        offset += nbytes
        layers.append(nn.layer_from_config(cfg, param.copy()))
    if offset != len(payload):
        raise TruncatedPayloadError(
            f"{len(payload) - offset} trailing payload bytes after the last parameter block")
    return nn.ModelGraph(layers, header["num_classes"])


# --------------------------------------------------------------------------
# synthetic shapes dataset

class GenerationError(Exception):
    """Placement could not satisfy the non-overlap constraint."""


SHAPE_NAMES = ("square", "circle", "triangle", "cross")
# two color families; quantized to the 1/255 grid like everything else
_COLORS = (np.array([0.90, 0.20, 0.15]), np.array([0.20, 0.40, 0.95]))


def class_appearance(class_index: int) -> tuple[str, int]:
    """Map a class index to (shape name, color family).

    Consecutive classes differ in both shape and color, so even a two-class
    dataset gives visually opposed categories.
    """
    shape = SHAPE_NAMES[class_index % 4]
    color = (class_index + class_index // 4) % 2
    return shape, color


def _quantize(arr: np.ndarray) -> np.ndarray:
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0) / 255.0


def _shape_mask(shape: str, size: int) -> np.ndarray:
    """Boolean (size, size) stencil for one shape, touching its box edges."""
    rr, cc = np.mgrid[0:size, 0:size]
    if shape == "square":
        return np.ones((size, size), dtype=bool)
    if shape == "circle":
        center = (size - 1) / 2.0
        radius = size / 2.0
        return (rr - center) ** 2 + (cc - center) ** 2 <= radius ** 2
    if shape == "triangle":
        # upward wedge: row r spans columns widening toward the base
        half = (size - 1) / 2.0
        return np.abs(cc - half) <= (rr + 1) * half / size
    if shape == "cross":
        arm = max(size // 3, 1)
        lo = (size - arm) // 2
        hi = lo + arm
        return ((rr >= lo) & (rr < hi)) | ((cc >= lo) & (cc < hi))
    raise ValueError(f"unknown shape {shape!r}")


def _tight_box(mask: np.ndarray, top: int, left: int):
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return (top + int(rows[0]), left + int(cols[0]),
            top + int(rows[-1]), left + int(cols[-1]))


@dataclass
class ShapesDataset:
    images: list[np.ndarray]
    labels: np.ndarray
    annotations: list[Annotation]
    num_classes: int
    seed: int
    image_size: int = 32

    def __len__(self):
        return len(self.images)


def generate_shapes(num_images: int, num_classes: int, seed: int = 0,
                    image_size: int = 32, shape_range: tuple[int, int] = (10, 14),
                    distractor_range: tuple[int, int] = (5, 7),
                    max_distractors: int = 2,
                    max_attempts: int = 100) -> ShapesDataset:
    """Deterministic colored-shape images with tight target boxes.

    Each image carries one target shape (round-robin class assignment, so
    class counts stay balanced within one) plus up to `max_distractors`
    shapes of other classes, placed with disjoint boxes. All pixel values sit
    on the 1/255 grid, so 8-bit export is lossless. Raises GenerationError
    when a shape cannot be placed in `max_attempts` tries.
    """
    if not 2 <= num_classes <= 8:
        raise ValueError(f"num_classes must be in [2, 8], got {num_classes}")
    if num_images < 1:
        raise ValueError("need at least one image")
    rng = np.random.default_rng(seed)
    images, labels, annotations = [], [], []
    for idx in range(num_images):
        label = idx % num_classes
        img = _quantize(rng.uniform(0.0, 0.18, size=(3, image_size, image_size)))
        taken: list[tuple[int, int, int, int]] = []

        def place(class_index: int, size_range: tuple[int, int]):
            size = int(rng.integers(size_range[0], size_range[1] + 1))
            shape, color_idx = class_appearance(class_index)
            mask = _shape_mask(shape, size)
            for _ in range(max_attempts):
                top = int(rng.integers(0, image_size - size + 1))
                left = int(rng.integers(0, image_size - size + 1))
                box = _tight_box(mask, top, left)
                clear = all(box[2] < b[0] - 1 or b[2] < box[0] - 1
                            or box[3] < b[1] - 1 or b[3] < box[1] - 1
                            for b in taken)
                if clear:
                    color = _quantize(_COLORS[color_idx]
                                      * float(rng.uniform(0.8, 1.0)))
                    region = img[:, top:top + size, left:left + size]
                    region[:, mask] = color[:, None]
                    taken.append(box)
                    return box
            raise GenerationError(
                f"could not place a {shape} of size {size} after {max_attempts} attempts")

        target_box = place(label, shape_range)
        others = [c for c in range(num_classes) if c != label]
        for _ in range(int(rng.integers(1, max_distractors + 1))):
            place(int(rng.choice(others)), distractor_range)
        images.append(img)
        labels.append(label)
        annotations.append(Annotation(image_id=f"img{idx:05d}", class_index=label,
                                      boxes=(target_box,)))
    return ShapesDataset(images=images, labels=np.array(labels, dtype=np.int64),
                         annotations=annotations, num_classes=num_classes,
                         seed=seed, image_size=image_size)


def export_dataset(dataset: ShapesDataset, out_dir) -> None:
    """Write PPM images plus a JSON annotation index into a directory."""
    import os
    os.makedirs(out_dir, exist_ok=True)
    items = []
    for img, ann in zip(dataset.images, dataset.annotations):
        filename = f"{ann.image_id}.ppm"
        write_ppm(os.path.join(out_dir, filename),
                  np.round(img * 255.0).astype(np.uint8))
        items.append({"id": ann.image_id, "file": filename,
                      "label": int(ann.class_index),
                      "boxes": [list(b) for b in ann.boxes]})
    index = {"format_version": FORMAT_VERSION, "num_classes": dataset.num_classes,
             "seed": dataset.seed, "image_size": dataset.image_size, "items": items}
    with open(os.path.join(out_dir, "annotations.json"), "w") as f:
        json.dump(index, f, sort_keys=True, indent=1)
        f.write("\n")


def load_dataset(data_dir) -> ShapesDataset:
    import os
    from .images import read_pixmap
    with open(os.path.join(data_dir, "annotations.json")) as f:
        index = json.load(f)
    images, labels, annotations = [], [], []
    for item in index["items"]:
        img = read_pixmap(os.path.join(data_dir, item["file"]))
        if img.ndim != 3:
            raise ValueError(f"{item['file']} is not a color image")
        images.append(img)
        labels.append(item["label"])
        annotations.append(Annotation(image_id=item["id"], class_index=item["label"],
                                      boxes=tuple(tuple(b) for b in item["boxes"])))
    return ShapesDataset(images=images, labels=np.array(labels, dtype=np.int64),
                         annotations=annotations, num_classes=index["num_classes"],
                         seed=index["seed"], image_size=index["image_size"])


# --------------------------------------------------------------------------
# toy model and training

class TrainingError(Exception):
    """Loss became non-finite during training."""


def default_toy_model(num_classes: int, in_channels: int = 3, seed: int = 0,
                      channels: tuple[int, int, int] = (8, 12, 16)) -> nn.ModelGraph:
    """Three conv stages (conv, scaling, bias, relu, pooling on the first two)
    into a global-average-pool linear head. Weights He-style Gaussian."""
    rng = np.random.default_rng(seed)
    c1, c2, c3 = channels

    def conv(name, n, cin, cout):
        w = rng.normal(0.0, 1.0 / np.sqrt(n * n * cin), size=(cout, n * n * cin))
        return nn.Conv(name, n, cin, cout, w)

    layers = [
        conv("conv1", 3, in_channels, c1),
        nn.Scaling("scale1", c1), nn.Bias("bias1", c1), nn.ReLU("relu1"),
        nn.MaxPool("pool1"),
        conv("conv2", 3, c1, c2),
        nn.Scaling("scale2", c2), nn.Bias("bias2", c2), nn.ReLU("relu2"),
        nn.MaxPool("pool2"),
        conv("conv3", 3, c2, c3),
        nn.Scaling("scale3", c3), nn.Bias("bias3", c3), nn.ReLU("relu3"),
        nn.GlobalAvgPool("gap"),
        nn.FullyConnected("fc", c3, num_classes,
                          rng.normal(0.0, 1.0 / np.sqrt(c3), size=(num_classes, c3))),
    ]
    return nn.ModelGraph(layers, num_classes)


@dataclass
class TrainResult:
    model: nn.ModelGraph
    losses: list[float] = field(default_factory=list)


def train_toy(model: nn.ModelGraph, dataset: ShapesDataset, epochs: int,
              lr: float, seed: int = 0, batch_size: int = 16) -> TrainResult:
    """Plain mini-batch SGD on softmax cross-entropy.

    Visit order is reshuffled every epoch from a generator seeded once, so a
    given (model, dataset, epochs, lr, seed) tuple always trains identically.
    Gradients are averaged within each batch. Records the mean loss per
    epoch; a non-finite loss aborts with TrainingError.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng(seed)
    current = model.copy()
    losses = []
    n = len(dataset.images)
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            batch = order[start:start + batch_size]
            summed: dict[str, np.ndarray] = {}
            for i in batch:
                try:
                    tape = nn.forward(current, dataset.images[i])
                    nn.backward(current, tape, nn.CrossEntropy(int(dataset.labels[i])))
                except FloatingPointError as e:
                    raise TrainingError(f"training diverged: {e}") from e
                if not np.isfinite(tape.loss):
                    raise TrainingError(f"loss became {tape.loss}")
                total += tape.loss
                for name, g in tape.param_grads.items():
                    if name in summed:
                        summed[name] += g
                    else:
                        summed[name] = g.copy()
            mean_grads = {name: g / len(batch) for name, g in summed.items()}
            current = nn.sgd_step(current, mean_grads, lr)
        losses.append(total / n)
    return TrainResult(model=current, losses=losses)


def model_accuracy(model: nn.ModelGraph, dataset: ShapesDataset) -> float:
    correct = 0
    for img, label in zip(dataset.images, dataset.labels):
        if int(np.argmax(nn.forward(model, img).logits)) == int(label):
            correct += 1
    return correct / len(dataset.images)
