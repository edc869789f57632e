"""
A tour of the saliency methods
==============================

Runs every built-in method preset on the same image at the same attachment
point and renders the results side by side. All presets share one recipe:
pick an activation/gradient pairing at the attachment point, then collapse
the per-location contribution vectors to scalars with an aggregator. Only
the pairing and the aggregator differ.
"""

from pathlib import Path

import numpy as np

from saligrad.aggregate import MethodPreset, method_saliency
from saligrad.extract import AttachPoint
from saligrad.images import render_heatmap, write_ppm
from saligrad.modelio import generate_shapes, load_model
from saligrad.multilayer import upsample

OUT = Path(__file__).resolve().parent / "output"
MODEL_FILE = OUT / "toy.sgm"
if not MODEL_FILE.exists():
    raise SystemExit("run 01_train_and_inspect.py first to create the model")
model = load_model(MODEL_FILE)

data = generate_shapes(100, num_classes=2, seed=1)
img, cls = data.images[3], int(data.labels[3])
write_ppm(OUT / "tour_input.ppm", np.round(img * 255.0).astype(np.uint8))
print(f"image {data.annotations[3].image_id}, explaining class {cls}")

# One attachment point for everything: the input interface of the last conv.
# Virtual pairings read the activation and gradient meeting there; the
# real-decomposition preset reads conv3's own parameter-gradient split.
attach = AttachPoint("conv3", side="input")

print(f"{'method':>20} {'signed':>6} {'min':>9} {'max':>9}")
for preset in MethodPreset:
    smap = method_saliency(model, img, cls, preset, attach)
    big = upsample(smap, (32, 32))
    colormap = "gray" if smap.signed else "fire"
    suffix = "pgm" if colormap == "gray" else "ppm"
    render_heatmap(OUT / f"tour_{preset.value}.{suffix}", big.values, colormap)
    print(f"{preset.value:>20} {str(smap.signed):>6} "
          f"{smap.values.min():>9.4f} {smap.values.max():>9.4f}")

# Signed methods (gradient-sum, linear-approx) can speak against a region;
# norm-based ones cannot, which is the point of the positive-filtered
# variant: keep selectivity without materializing anything.
print(f"heatmaps written to {OUT}/tour_*.pgm|ppm")
