"""
Does the map actually depend on the model?
==========================================

A saliency method that keeps producing the same pretty picture after the
network's weights are destroyed is an edge detector, not an explanation.
This demo re-randomizes parameters layer by layer from the output backward
and tracks how fast the maps decorrelate from their originals.
"""

from pathlib import Path

from saligrad.aggregate import MethodPreset
from saligrad.evaluation import randomization_sweep
from saligrad.extract import AttachPoint
from saligrad.modelio import generate_shapes, load_model

OUT = Path(__file__).resolve().parent / "output"
MODEL_FILE = OUT / "toy.sgm"
if not MODEL_FILE.exists():
    raise SystemExit("run 01_train_and_inspect.py first to create the model")
model = load_model(MODEL_FILE)

data = generate_shapes(100, num_classes=2, seed=1)
images = data.images[:20]
labels = [int(c) for c in data.labels[:20]]

# Each sweep stage re-draws every parameter from the named layer to the
# output, then recomputes all 20 maps and correlates them with the intact
# model's maps. Rank correlation near 0 means the evidence is gone.
for preset in (MethodPreset.SELECTIVE_NORMGRAD, MethodPreset.GRADIENT):
    report = randomization_sweep(model, images, preset,
                                 AttachPoint("relu2"), labels, seed=0)
    print(f"{preset.value} at relu2:")
    print(f"  {'randomized from':>16} {'depth':>5} {'mean rho':>9}")
    for row in report.rows:
        if row["row_type"] != "sweep":
            continue
        print(f"  {row['randomized_from']:>16} {row['depth']:>5} "
              f"{row['mean_spearman']:>9.3f}")
    final = report.aggregate["final_mean_spearman"]
    print(f"  fully randomized: {final:.3f}\n")

# The clean degradation curve is the pass condition; a method whose curve
# stays high after full randomization fails this sanity check regardless of
# how convincing its heatmaps look.
