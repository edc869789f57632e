"""Metrics and protocols for judging saliency maps.

Rank correlation between maps, class sensitivity (does the map change when
the explained class does), the pointing game against ground-truth boxes, a
cascading parameter-randomization sweep, and the study comparing factored
identity-attachment maps against a conv layer's own gradient decomposition.
Reports keep one row per record plus an aggregate recomputable from the rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .aggregate import (Aggregator, MethodPreset, SaliencyMap, aggregate,
                        method_saliency)
from .extract import AttachPoint, ConvIdentity, RealConv, spatial_contributions
from .metasal import MetaConfig, meta_saliency
from .multilayer import upsample


# --------------------------------------------------------------------------
# rank correlation

def average_ranks(v: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    v = np.asarray(v, dtype=np.float64).ravel()
    _, inverse, counts = np.unique(v, return_inverse=True, return_counts=True)
    starts = np.cumsum(counts) - counts
    group_rank = starts + (counts + 1) / 2.0
    return group_rank[inverse]


def spearman(a, b) -> float:
    """Rank correlation of two equal-shape maps, in [-1, 1].

    Ties get average ranks. If either input is constant the correlation is
    undefined; this returns 0.0 by convention in that case. Accepts
    SaliencyMap or raw arrays.
    """
    av = np.asarray(a.values if isinstance(a, SaliencyMap) else a, dtype=np.float64)
    bv = np.asarray(b.values if isinstance(b, SaliencyMap) else b, dtype=np.float64)
    if av.shape != bv.shape:
        raise ValueError(f"shape mismatch: {av.shape} vs {bv.shape}")
    if av.size < 2:
        raise ValueError("need at least two values")
    ra = average_ranks(av)
    rb = average_ranks(bv)
    da = ra - ra.mean()
    db = rb - rb.mean()
    denom = np.sqrt(np.sum(da * da) * np.sum(db * db))
    if denom == 0.0:
        return 0.0
    return float(np.sum(da * db) / denom)


# --------------------------------------------------------------------------
# reports

@dataclass
class EvalReport:
    """Tabular result: per-record rows plus one aggregate row."""

    kind: str
    columns: list[str]
    rows: list[dict] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Annotation:
    """Ground truth for one image: target class and its bounding box(es).

    Boxes are (row_min, col_min, row_max, col_max), inclusive pixel coords.
    """

    image_id: str
    class_index: int
    boxes: tuple[tuple[int, int, int, int], ...]


def chebyshev_box_distance(point: tuple[int, int],
                           box: tuple[int, int, int, int]) -> int:
    """Chebyshev distance from a pixel to the nearest pixel of a box (0 inside)."""
    r, c = point
    r0, c0, r1, c1 = box
    dr = max(r0 - r, 0, r - r1)
    dc = max(c0 - c, 0, c - c1)
    return max(dr, dc)


# --------------------------------------------------------------------------
# pointing game

def pointing_game(pairs: list[tuple[SaliencyMap, Annotation]],
                  tolerance: int = 15) -> EvalReport:
    """Hit when the map's peak lands within `tolerance` of a target box.

    The peak is the row-major-first argmax. A hit needs Chebyshev distance
    <= tolerance to at least one annotated box. The headline accuracy is the
    mean of per-class hit rates, so rare classes count as much as common ones.
    """
    if not pairs:
        raise ValueError("no maps to score")
    rows = []
    per_class: dict[int, list[bool]] = {}
    for smap, ann in pairs:
        values = smap.values
        h, w = values.shape
        for box in ann.boxes:
            r0, c0, r1, c1 = box
            if not (0 <= r0 <= r1 < h and 0 <= c0 <= c1 < w):
                raise ValueError(f"box {box} outside {h}x{w} map for {ann.image_id!r}")
        flat = int(np.argmax(values))
        peak = (flat // w, flat % w)
        hit = any(chebyshev_box_distance(peak, box) <= tolerance for box in ann.boxes)
        per_class.setdefault(ann.class_index, []).append(hit)
        rows.append({"row_type": "image", "image_id": ann.image_id,
                     "class": ann.class_index, "peak_row": peak[0],
                     "peak_col": peak[1], "hit": int(hit)})
    class_rates = {c: float(np.mean(hits)) for c, hits in sorted(per_class.items())}
    accuracy = float(np.mean(list(class_rates.values())))
    return EvalReport(
        kind="pointing-game",
        columns=["row_type", "image_id", "class", "peak_row", "peak_col",
                 "hit", "accuracy", "num_images"],
        rows=rows,
        aggregate={"row_type": "aggregate", "accuracy": accuracy,
                   "num_images": len(pairs)})


# --------------------------------------------------------------------------
# class sensitivity

def class_sensitivity(model: nn.ModelGraph, images: list[np.ndarray],
                      preset: MethodPreset, attach: AttachPoint,
                      meta: MetaConfig | None = None,
                      map_fn=None, image_ids: list[str] | None = None) -> EvalReport:
    """Correlate each image's map for its strongest vs weakest class.

    For every image the classes with the largest and smallest logit are
    explained separately and the two maps' rank correlation recorded; a
    class-aware method should score low or negative. `map_fn(model, image,
    class_index) -> SaliencyMap` overrides the preset (used for control
    methods that ignore the class entirely).
    """
    if not images:
        raise ValueError("no images")
    if image_ids is None:
        image_ids = [str(i) for i in range(len(images))]

    def compute(img, cls):
        if map_fn is not None:
            return map_fn(model, img, cls)
        if meta is not None:
            return meta_saliency(model, img, cls, preset, attach, meta)
        return method_saliency(model, img, cls, preset, attach)

    rows = []
    rhos = []
    for img, image_id in zip(images, image_ids):
        logits = nn.forward(model, img).logits
        cmax = int(np.argmax(logits))
        cmin = int(np.argmin(logits))
        rho = spearman(compute(img, cmax), compute(img, cmin))
        rhos.append(rho)
        rows.append({"row_type": "image", "image_id": image_id,
                     "max_class": cmax, "min_class": cmin, "spearman": rho})
    rhos = np.asarray(rhos)
    return EvalReport(
        kind="class-sensitivity",
        columns=["row_type", "image_id", "max_class", "min_class", "spearman",
                 "mean_spearman", "std_spearman", "num_images"],
        rows=rows,
        aggregate={"row_type": "aggregate",
                   "mean_spearman": float(rhos.mean()),
                   "std_spearman": float(rhos.std()),
                   "num_images": len(images)})


# --------------------------------------------------------------------------
# parameter randomization

def cascading_randomize(model: nn.ModelGraph, from_layer: str | None,
                        seed: int = 0) -> nn.ModelGraph:
    """Re-draw all parameters from `from_layer` to the output, inclusive.

    Parameters are sampled i.i.d. Gaussian with std 1 / sqrt(fan_in) in chain
    order, so the result is a pure function of (model architecture,
    from_layer, seed). from_layer=None randomizes nothing and returns a
    plain copy.
    """
    if from_layer is None:
        return model.copy()
    start = model.index_of(from_layer)
    rng = np.random.default_rng(seed)
    layers = []
    for i, layer in enumerate(model.layers):
        if i >= start and layer.param is not None:
            std = 1.0 / np.sqrt(layer.fan_in())
            layers.append(layer.with_param(rng.normal(0.0, std, size=layer.param.shape)))
        else:
            layers.append(layer.with_param(layer.param.copy())
                          if layer.param is not None else layer)
    return nn.ModelGraph(layers, model.num_classes)


def randomization_sweep(model: nn.ModelGraph, images: list[np.ndarray],
                        preset: MethodPreset, attach: AttachPoint,
                        class_indices: list[int], seed: int = 0) -> EvalReport:
    """Mean map correlation against the intact model as randomization deepens.

    Sweep points are the parameterized layers from the output backwards; at
    each point everything from that layer onward is re-drawn and each image's
    map compared (rank correlation) with the intact model's map.
    """
    if len(images) != len(class_indices):
        raise ValueError("images and class_indices disagree on length")
    reference = [method_saliency(model, img, cls, preset, attach)
                 for img, cls in zip(images, class_indices)]
    sweep = [l.name for l in reversed(model.layers) if l.param is not None]
    rows = []
    means = {}
    for depth, name in enumerate(sweep, start=1):
        randomized = cascading_randomize(model, name, seed)
        rhos = [spearman(method_saliency(randomized, img, cls, preset, attach), ref)
                for (img, cls), ref in zip(zip(images, class_indices), reference)]
        mean_rho = float(np.mean(rhos))
        means[name] = mean_rho
        rows.append({"row_type": "sweep", "randomized_from": name,
                     "depth": depth, "mean_spearman": mean_rho,
                     "num_images": len(images)})
    return EvalReport(
        kind="sanity-check",
        columns=["row_type", "randomized_from", "depth", "mean_spearman",
                 "final_mean_spearman", "num_images"],
        rows=rows,
        aggregate={"row_type": "aggregate",
                   "final_mean_spearman": means[sweep[-1]],
                   "num_images": len(images)})


# --------------------------------------------------------------------------
# identity-attachment vs real-conv study

def identity_trick_study(model: nn.ModelGraph, images: list[np.ndarray],
                         class_indices: list[int], conv_layers: list[str],
                         annotations: list[Annotation] | None = None,
                         tolerance: int = 15,
                         input_shape: tuple[int, int] | None = None) -> EvalReport:
    """Compare identity-attachment maps with each conv's own decomposition.

    For every named conv layer and image, compute the norm-aggregated map
    twice: from a virtual conv (same kernel size) attached at the layer's
    input, and from the layer's real gradient decomposition. Rows carry the
    per-image rank correlation. With annotations given, both map families
    are also scored on the pointing game (maps upsampled to input_shape)
    and the aggregate reports the accuracy gap in percentage points.
    """
    if not conv_layers:
        raise ValueError("no conv layers named")
    if len(images) != len(class_indices):
        raise ValueError("images and class_indices disagree on length")
    for name in conv_layers:
        if not isinstance(model.layer(name), nn.Conv):
            raise ValueError(f"layer {name!r} is not a conv layer")
    if annotations is not None and input_shape is None:
        raise ValueError("pointing comparison needs input_shape")

    rows = []
    layer_means = {}
    gaps = []
    for name in conv_layers:
        layer = model.layer(name)
        attach_virtual = AttachPoint(name, side="input")
        kind_virtual = ConvIdentity(layer.kernel_size)
        rhos = []
        with_maps, without_maps = [], []
        for i, (img, cls) in enumerate(zip(images, class_indices)):
            tape = nn.forward(model, img)
            nn.backward(model, tape, nn.ClassLogit(cls))
            virt = aggregate(spatial_contributions(tape, attach_virtual, kind_virtual),
                             Aggregator.NORM)
            real = aggregate(spatial_contributions(tape, attach_virtual, RealConv()),
                             Aggregator.NORM)
            rho = spearman(virt, real)
            rhos.append(rho)
            rows.append({"row_type": "image", "layer": name, "image_id": str(i),
                         "spearman": rho})
            if annotations is not None:
                base = SaliencyMap(values=virt, layer=attach_virtual, input_id=str(i))
                with_maps.append(upsample(base, input_shape))
                without_maps.append(upsample(base.with_values(real), input_shape))
        mean_rho = float(np.mean(rhos))
        layer_means[name] = mean_rho
        row = {"row_type": "layer", "layer": name, "mean_spearman": mean_rho}
        if annotations is not None:
            acc_with = pointing_game(list(zip(with_maps, annotations)),
                                     tolerance).aggregate["accuracy"]
            acc_without = pointing_game(list(zip(without_maps, annotations)),
                                        tolerance).aggregate["accuracy"]
            gap = 100.0 * abs(acc_with - acc_without)
            gaps.append(gap)
            row.update({"pointing_virtual": acc_with, "pointing_real": acc_without,
                        "pointing_gap_pp": gap})
        rows.append(row)
    aggregate_row = {"row_type": "aggregate",
                     "mean_spearman": float(np.mean(list(layer_means.values()))),
                     "min_layer_mean_spearman": float(min(layer_means.values()))}
    if gaps:
        aggregate_row["max_pointing_gap_pp"] = float(max(gaps))
    return EvalReport(
        kind="identity-study",
        columns=["row_type", "layer", "image_id", "spearman", "mean_spearman",
                 "pointing_virtual", "pointing_real", "pointing_gap_pp",
                 "min_layer_mean_spearman", "max_pointing_gap_pp"],
        rows=rows,
        aggregate=aggregate_row)
