"""
Train the reference toy net on synthetic shapes
===============================================

Builds the colored-shapes dataset, trains the small chain CNN on it with
plain SGD, and saves the model plus a loss curve. Every later demo loads
the model file this one writes, so run this first (it takes ~30 seconds).
"""

import csv
from pathlib import Path

import numpy as np

from saligrad import nn
from saligrad.images import write_ppm
from saligrad.modelio import (default_toy_model, export_dataset,
                              generate_shapes, save_model, train_toy)

OUT = Path(__file__).resolve().parent / "output"
OUT.mkdir(exist_ok=True)

# The generator is fully deterministic: same (n, classes, seed) in, same
# pixels out. Class counts are balanced, one tightly-boxed target shape per
# image plus a couple of smaller distractors from other classes.
data = generate_shapes(512, num_classes=2, seed=0)
print(f"dataset: {len(data)} images, {data.num_classes} classes, "
      f"{data.image_size}x{data.image_size}")

ann = data.annotations[0]
print(f"first image: id={ann.image_id} class={ann.class_index} "
      f"target box={ann.boxes[0]} (row0, col0, row1, col1)")

# Export a handful so you can look at them with any image viewer.
sample_dir = OUT / "sample_images"
sample_dir.mkdir(exist_ok=True)
for img, a in zip(data.images[:6], data.annotations[:6]):
    write_ppm(sample_dir / f"{a.image_id}_class{a.class_index}.ppm",
              np.round(img * 255.0).astype(np.uint8))
print(f"wrote 6 sample images to {sample_dir}")

model = default_toy_model(num_classes=data.num_classes, seed=0)
print("layers:", " -> ".join(layer.name for layer in model.layers))

result = train_toy(model, data, epochs=30, lr=0.05, seed=0)
save_model(result.model, OUT / "toy.sgm")

with open(OUT / "loss_curve.csv", "w", newline="") as f:
    w = csv.writer(f)
    w.writerow(["epoch", "mean_loss"])
    for epoch, loss in enumerate(result.losses, start=1):
        w.writerow([epoch, f"{loss:.6f}"])

print(f"loss: {result.losses[0]:.4f} (epoch 1) -> {result.losses[-1]:.4f} "
      f"(epoch {len(result.losses)})")

# Quick accuracy check on fresh images the model never saw.
held_out = generate_shapes(100, num_classes=2, seed=1)
hits = 0
for img, label in zip(held_out.images, held_out.labels):
    tape = nn.forward(result.model, img)
    hits += int(np.argmax(tape.logits) == label)
print(f"held-out accuracy: {hits}/{len(held_out)}")
print(f"model saved to {OUT / 'toy.sgm'}")
