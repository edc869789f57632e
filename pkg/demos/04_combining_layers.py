"""
Fusing saliency maps from several depths
========================================

Shallow layers localize sharply but pick up texture noise; deep layers are
clean but coarse. Fusion upsamples each per-layer map to input resolution,
rescales it to [0, 1], and blends: a weighted sum, or a weighted-geometric
product that acts like a soft AND. Four ways to choose the weights, scored
against ground-truth boxes.
"""

from pathlib import Path

import numpy as np

from saligrad.aggregate import MethodPreset, method_saliency
from saligrad.evaluation import pointing_game
from saligrad.extract import AttachPoint
from saligrad.images import render_heatmap
from saligrad.modelio import generate_shapes, load_model
from saligrad.multilayer import (combine, feature_spread_weights,
                                 linear_interp_weights, probe_accuracy_weights,
                                 uniform_weights, upsample)

OUT = Path(__file__).resolve().parent / "output"
MODEL_FILE = OUT / "toy.sgm"
if not MODEL_FILE.exists():
    raise SystemExit("run 01_train_and_inspect.py first to create the model")
model = load_model(MODEL_FILE)

LAYERS = ["relu1", "relu2", "relu3"]
data = generate_shapes(200, num_classes=2, seed=2)

# Per-image, per-layer maps. Linear-approx keeps sign, so "prod" mode below
# will shift each map to be nonnegative before multiplying.
maps = {name: [] for name in LAYERS}
for img, cls in zip(data.images, data.labels):
    for name in LAYERS:
        maps[name].append(method_saliency(model, img, int(cls),
                                          MethodPreset.LINEAR_APPROX,
                                          AttachPoint(name)))

def pointing(smaps):
    pairs = [(m, a) for m, a in zip(smaps, data.annotations)]
    return pointing_game(pairs, tolerance=8).aggregate["accuracy"]

# Fair warning: on this desk-scale task every configuration below saturates
# at 1.0, peaks land inside the boxes outright. The interesting output here
# is the learned weights; the accuracies show fusion never hurts.
print("single layers:")
for name in LAYERS:
    acc = pointing([upsample(m, (32, 32)) for m in maps[name]])
    print(f"  {name:>6}: pointing accuracy {acc:.3f}")

# Weight schemes. The first two ignore the data; the spread scheme favors
# layers whose mean activations vary most across a sample, and the probe
# scheme favors layers a linear classifier reads classes from best.
sample, sample_labels = data.images[:64], np.asarray(data.labels[:64])
schemes = {
    "uniform": uniform_weights(LAYERS),
    "linear-interp": linear_interp_weights(LAYERS),
    "spread": feature_spread_weights(model, sample, LAYERS),
    "accuracy": probe_accuracy_weights(model, sample, sample_labels, LAYERS),
}
for name, weights in schemes.items():
    gammas = ", ".join(f"{layer}={weights.gamma[layer]:.3f}" for layer in LAYERS)
    print(f"{name:>14} weights: {gammas}")

print("fused:")
for scheme_name, weights in schemes.items():
    for mode in ("add", "prod"):
        fused = [combine([maps[n][i] for n in LAYERS], weights, mode, (32, 32))
                 for i in range(len(data))]
        acc = pointing(fused)
        print(f"  {scheme_name:>14}/{mode}: pointing accuracy {acc:.3f}")

# Render one example of everything for image 0.
for name in LAYERS:
    render_heatmap(OUT / f"combo_single_{name}.ppm",
                   upsample(maps[name][0], (32, 32)).values, "fire")
best = combine([maps[n][0] for n in LAYERS], schemes["spread"], "prod", (32, 32))
render_heatmap(OUT / "combo_fused.ppm", best.values, "fire")
print(f"heatmaps written to {OUT}/combo_*.ppm")
