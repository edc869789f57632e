"""Command-line front end.

Subcommands: gen-data, train-toy, saliency, combine, class-sensitivity,
pointing-game, sanity-check, identity-study, gradcheck.

Exit codes: 0 success, 1 usage error (bad flags, missing files, invalid
combinations), 2 verification failure (gradcheck above threshold). Errors
print a machine-readable token as the first line on stderr:
"usage-error: ..." or "verification-failure: ...".

Every command is a pure function of its arguments: rerunning one writes
byte-identical outputs. Report CSVs start with a header row and carry a
schema_version column; floats are serialized with repr (shortest round-trip
form).
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from . import nn
from .aggregate import MethodPreset, SaliencyMap, method_saliency
from .evaluation import (Annotation, EvalReport, class_sensitivity,
                         identity_trick_study, pointing_game,
                         randomization_sweep)
from .extract import AttachPoint
from .gradcheck import run_gradcheck
from .images import read_pixmap, render_heatmap
from .metasal import MetaConfig, meta_saliency
from .modelio import (GenerationError, ModelIOError, default_toy_model,
                      export_dataset, generate_shapes, load_dataset,
                      load_model, save_model, train_toy)
from .multilayer import (WEIGHT_SCHEMES, combine, feature_spread_weights,
                         linear_interp_weights, probe_accuracy_weights,
                         uniform_weights, upsample)

SCHEMA_VERSION = 1
METHODS = [p.value for p in MethodPreset]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags by default; route through UsageError
    # so the documented exit-code mapping (usage errors -> 1) holds
    def error(self, message):
        raise UsageError(message)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


def write_report_csv(report: EvalReport, path) -> None:
    """One header row, one row per record, one aggregate row."""
    columns = ["schema_version"] + report.columns
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in report.rows + [report.aggregate]:
            writer.writerow([_fmt(SCHEMA_VERSION)]
                            + [_fmt(row.get(c)) for c in report.columns])


def write_map_csv(values: np.ndarray, path) -> None:
    """Raw map values as an H x W grid of repr floats."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        for row in np.asarray(values, dtype=np.float64):
            writer.writerow([repr(float(v)) for v in row])


def _load_model(path) -> nn.ModelGraph:
    try:
        return load_model(path)
    except FileNotFoundError:
        raise UsageError(f"model file not found: {path}")
    except ModelIOError as e:
        raise UsageError(f"cannot read model {path}: {e}")


def _load_data(path):
    try:
        return load_dataset(path)
    except FileNotFoundError as e:
        raise UsageError(f"cannot read dataset {path}: {e}")
    except (ValueError, KeyError) as e:
        raise UsageError(f"malformed dataset {path}: {e}")


def _attach(args) -> AttachPoint:
    return AttachPoint(args.layer, side={"in": "input", "out": "output"}[args.side])


def _single_map(model, image, class_index, args, attach) -> SaliencyMap:
    preset = MethodPreset(args.method)
    if args.meta_eps is not None:
        cfg = MetaConfig(epsilon=args.meta_eps,
                         direction={"d": "descent", "a": "ascent"}[args.meta_dir])
        return meta_saliency(model, image, class_index, preset, attach, cfg)
    return method_saliency(model, image, class_index, preset, attach)


def _default_layers(model) -> list[str]:
    names = [l.name for l in model.layers if l.kind == "relu"]
    if not names:
        raise UsageError("model has no relu layers; pass --layers explicitly")
    return names


def _weights_for(scheme, model, layers, dataset, sample_size):
    if scheme == "uniform":
        return uniform_weights(layers)
    if scheme == "linear-interp":
        return linear_interp_weights(layers)
    if dataset is None:
        raise UsageError(f"scheme {scheme!r} needs --data")
    images = dataset.images[:sample_size]
    labels = dataset.labels[:sample_size]
    if scheme == "spread":
        return feature_spread_weights(model, images, layers)
    if scheme == "accuracy":
        return probe_accuracy_weights(model, images, labels, layers)
    raise UsageError(f"unknown weighting scheme {scheme!r}")


# --------------------------------------------------------------------------
# subcommand handlers

def cmd_gen_data(args) -> int:
    try:
        ds = generate_shapes(args.n, args.classes, seed=args.seed)
    except (ValueError, GenerationError) as e:
        raise UsageError(str(e))
    export_dataset(ds, args.out)
    print(f"wrote {len(ds.images)} images, {ds.num_classes} classes to {args.out}")
    return 0


def cmd_train_toy(args) -> int:
    ds = generate_shapes(args.n, args.classes, seed=args.seed)
    model = default_toy_model(args.classes, seed=args.seed)
    result = train_toy(model, ds, epochs=args.epochs, lr=args.lr, seed=args.seed)
    save_model(result.model, args.out)
    loss_path = args.loss_out or f"{args.out}.loss.csv"
    with open(loss_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["schema_version", "epoch", "mean_loss"])
        for epoch, loss in enumerate(result.losses, start=1):
            writer.writerow([SCHEMA_VERSION, epoch, repr(loss)])
    final = result.losses[-1] if result.losses else float("nan")
    print(f"trained {args.epochs} epochs on {args.n} images; "
          f"final mean loss {final:.6f}; model at {args.out}")
    return 0


def cmd_saliency(args) -> int:
    model = _load_model(args.model)
    image = _read_image(args.image)
    attach = _attach(args)
    try:
        smap = _single_map(model, image, args.class_index, args, attach)
    except (ValueError, KeyError, RuntimeError) as e:
        raise UsageError(str(e))
    render_heatmap(args.out, smap.values, colormap=args.colormap)
    write_map_csv(smap.values, f"{args.out}.csv")
    print(f"{smap.method} map {smap.values.shape[0]}x{smap.values.shape[1]} "
          f"at {args.layer}/{args.side} -> {args.out} (+.csv)")
    return 0


def _read_image(path) -> np.ndarray:
    try:
        img = read_pixmap(path)
    except FileNotFoundError:
        raise UsageError(f"image file not found: {path}")
    except ValueError as e:
        raise UsageError(f"cannot read image {path}: {e}")
    if img.ndim != 3:
        raise UsageError(f"{path} is a graymap; commands expect color images")
    return img


def cmd_combine(args) -> int:
    model = _load_model(args.model)
    image = _read_image(args.image)
    layers = args.layers.split(",") if args.layers else _default_layers(model)
    dataset = _load_data(args.data) if args.data else None
    try:
        weights = _weights_for(args.scheme, model, layers, dataset, args.sample_size)
        maps = [method_saliency(model, image, args.class_index,
                                MethodPreset(args.method), AttachPoint(name))
                for name in layers]
        combined = combine(maps, weights, args.mode, image.shape[1:])
    except (ValueError, KeyError) as e:
        raise UsageError(str(e))
    render_heatmap(args.out, combined.values, colormap=args.colormap)
    write_map_csv(combined.values, f"{args.out}.csv")
    with open(f"{args.out}.weights.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["schema_version", "scheme", "layer", "weight"])
        for name, gamma in weights.gamma.items():
            writer.writerow([SCHEMA_VERSION, weights.scheme, name, repr(gamma)])
    print(f"combined {len(layers)} layers ({args.scheme}, {args.mode}) -> {args.out}")
    return 0


def cmd_class_sensitivity(args) -> int:
    model = _load_model(args.model)
    ds = _load_data(args.data)
    attach = _attach(args)
    meta = None
    if args.meta_eps is not None:
        meta = MetaConfig(epsilon=args.meta_eps,
                          direction={"d": "descent", "a": "ascent"}[args.meta_dir])
    try:
        report = class_sensitivity(model, ds.images[:args.sample_size],
                                   MethodPreset(args.method), attach, meta=meta,
                                   image_ids=[a.image_id for a in
                                              ds.annotations[:args.sample_size]])
    except (ValueError, KeyError, RuntimeError) as e:
        raise UsageError(str(e))
    write_report_csv(report, args.out)
    print(f"class sensitivity over {len(report.rows)} images: "
          f"mean spearman {report.aggregate['mean_spearman']:.4f} -> {args.out}")
    return 0


def _oracle_box_map(image_shape, ann: Annotation) -> SaliencyMap:
    values = np.zeros(image_shape)
    for r0, c0, r1, c1 in ann.boxes:
        values[r0:r1 + 1, c0:c1 + 1] = 1.0
    return SaliencyMap(values=values, layer=AttachPoint("input", side="input"),
                       method="oracle-box", input_id=ann.image_id)


def cmd_pointing_game(args) -> int:
    model = _load_model(args.model)
    ds = _load_data(args.data)
    images = ds.images[:args.sample_size]
    annotations = ds.annotations[:args.sample_size]
    target = images[0].shape[1:]
    try:
        if args.method == "oracle-box":
            # harness self-check: ground-truth indicator maps must score 1.0
            pairs = [(_oracle_box_map(target, ann), ann) for ann in annotations]
            report = pointing_game(pairs, tolerance=args.tol)
            write_report_csv(report, args.out)
            print(f"pointing game (oracle-box): accuracy "
                  f"{report.aggregate['accuracy']:.4f} -> {args.out}")
            return 0
        layers = args.layers.split(",") if args.layers else _default_layers(model)
        preset = MethodPreset(args.method)
        per_layer_maps = {name: [] for name in layers}
        for img, ann in zip(images, annotations):
            for name in layers:
                smap = method_saliency(model, img, ann.class_index, preset,
                                       AttachPoint(name), input_id=ann.image_id)
                per_layer_maps[name].append(upsample(smap, target))
        if args.combine:
            scheme, mode = _parse_combine(args.combine)
            dataset = ds if args.data else None
            weights = _weights_for(scheme, model, layers, dataset, args.sample_size)
            pairs = []
            for i, ann in enumerate(annotations):
                fused = combine([per_layer_maps[name][i] for name in layers],
                                weights, mode, target)
                pairs.append((SaliencyMap(values=fused.values,
                                          layer=AttachPoint(layers[-1]),
                                          method=f"combined-{scheme}-{mode}",
                                          input_id=ann.image_id), ann))
            report = pointing_game(pairs, tolerance=args.tol)
            write_report_csv(report, args.out)
            print(f"pointing game ({args.method}, {scheme}+{mode}): accuracy "
                  f"{report.aggregate['accuracy']:.4f} -> {args.out}")
            return 0
        # no combination: one report section per layer, stacked
        merged = None
        for name in layers:
            pairs = list(zip(per_layer_maps[name], annotations))
            report = pointing_game(pairs, tolerance=args.tol)
            for row in report.rows:
                row["layer"] = name
            report.aggregate["layer"] = name
            if merged is None:
                merged = EvalReport(kind=report.kind,
                                    columns=["row_type", "layer"] + report.columns[1:],
                                    rows=[], aggregate={})
            merged.rows.extend(report.rows)
            merged.rows.append(report.aggregate)
        best = max((r for r in merged.rows if r["row_type"] == "aggregate"),
                   key=lambda r: r["accuracy"])
        merged.aggregate = {"row_type": "best", "layer": best["layer"],
                            "accuracy": best["accuracy"],
                            "num_images": best["num_images"]}
        write_report_csv(merged, args.out)
        print(f"pointing game ({args.method}): best layer {best['layer']} "
              f"accuracy {best['accuracy']:.4f} -> {args.out}")
        return 0
    except (ValueError, KeyError, RuntimeError) as e:
        raise UsageError(str(e))


def _parse_combine(spec: str):
    parts = spec.split(",")
    if len(parts) != 2 or parts[0] not in WEIGHT_SCHEMES or parts[1] not in ("add", "prod"):
        raise UsageError(
            f"--combine takes scheme,mode with scheme in {WEIGHT_SCHEMES} "
            f"and mode add|prod, got {spec!r}")
    return parts[0], parts[1]


def cmd_sanity_check(args) -> int:
    model = _load_model(args.model)
    ds = _load_data(args.data)
    images = ds.images[:args.sample_size]
    classes = [int(c) for c in ds.labels[:args.sample_size]]
    try:
        report = randomization_sweep(model, images, MethodPreset(args.method),
                                     _attach(args), classes, seed=args.seed)
    except (ValueError, KeyError, RuntimeError) as e:
        raise UsageError(str(e))
    write_report_csv(report, args.out)
    print(f"randomization sweep ({args.method} at {args.layer}): final mean "
          f"spearman {report.aggregate['final_mean_spearman']:.4f} -> {args.out}")
    return 0


def cmd_identity_study(args) -> int:
    model = _load_model(args.model)
    ds = _load_data(args.data)
    images = ds.images[:args.sample_size]
    annotations = ds.annotations[:args.sample_size]
    classes = [a.class_index for a in annotations]
    layers = (args.layers.split(",") if args.layers
              else [l.name for l in model.layers if l.kind == "conv"])
    try:
        report = identity_trick_study(model, images, classes, layers,
                                      annotations=annotations, tolerance=args.tol,
                                      input_shape=images[0].shape[1:])
    except (ValueError, KeyError, RuntimeError) as e:
        raise UsageError(str(e))
    write_report_csv(report, args.out)
    print(f"identity study over {len(layers)} conv layers: mean spearman "
          f"{report.aggregate['mean_spearman']:.4f} -> {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    report = run_gradcheck(seed=args.seed, num_models=args.nets)
    status = "PASS" if report.passed else "FAIL"
    print(f"checked {report.num_models} random nets (parameter and input gradients, "
          f"central differences)")
    print(f"max_rel_err={report.max_rel_err:.3e} threshold={report.threshold:.0e} "
          f"worst={report.worst}: {status}")
    if not report.passed:
        raise VerificationFailure(
            f"gradient check failed: {report.max_rel_err:.3e} >= {report.threshold:.0e}")
    return 0


class VerificationFailure(Exception):
    pass


# --------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="saligrad",
                     description="saliency maps from gradient contributions")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common_map_flags(p, with_layer=True):
        p.add_argument("--model", required=True)
        if with_layer:
            p.add_argument("--layer", required=True)
            p.add_argument("--side", choices=["in", "out"], default="out")
        p.add_argument("--method", choices=METHODS, required=True)

    p = sub.add_parser("gen-data", help="write a synthetic shapes dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train-toy", help="train the reference toy net")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--loss-out", default=None)
    p.set_defaults(fn=cmd_train_toy)

    p = sub.add_parser("saliency", help="one saliency map for one image")
    add_common_map_flags(p)
    p.add_argument("--image", required=True)
    p.add_argument("--class", dest="class_index", type=int, required=True)
    p.add_argument("--meta-eps", type=float, default=None)
    p.add_argument("--meta-dir", choices=["d", "a"], default="d")
    p.add_argument("--colormap", choices=["gray", "fire"], default="gray")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_saliency)

    p = sub.add_parser("combine", help="fuse maps from several layers")
    add_common_map_flags(p, with_layer=False)
    p.add_argument("--image", required=True)
    p.add_argument("--class", dest="class_index", type=int, required=True)
    p.add_argument("--layers", default=None, help="comma-separated (default: relu layers)")
    p.add_argument("--scheme", choices=WEIGHT_SCHEMES, required=True)
    p.add_argument("--mode", choices=["add", "prod"], required=True)
    p.add_argument("--data", default=None, help="dataset dir for spread/accuracy schemes")
    p.add_argument("--sample-size", type=int, default=64)
    p.add_argument("--colormap", choices=["gray", "fire"], default="gray")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_combine)

    p = sub.add_parser("class-sensitivity", help="max- vs min-class map correlation")
    add_common_map_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--sample-size", type=int, default=50)
    p.add_argument("--meta-eps", type=float, default=None)
    p.add_argument("--meta-dir", choices=["d", "a"], default="d")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_class_sensitivity)

    p = sub.add_parser("pointing-game", help="peak-in-box accuracy against ground truth")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=METHODS + ["oracle-box"], required=True)
    p.add_argument("--layers", default=None, help="comma-separated (default: relu layers)")
    p.add_argument("--combine", default=None, metavar="SCHEME,MODE")
    p.add_argument("--tol", type=int, default=15)
    p.add_argument("--sample-size", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_pointing_game)

    p = sub.add_parser("sanity-check", help="cascading parameter randomization sweep")
    add_common_map_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--sample-size", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sanity_check)

    p = sub.add_parser("identity-study", help="virtual-conv vs real-conv map agreement")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--layers", default=None, help="comma-separated conv layers (default: all)")
    p.add_argument("--tol", type=int, default=15)
    p.add_argument("--sample-size", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_identity_study)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nets", type=int, default=20)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as e:
        print(f"usage-error: {e}", file=sys.stderr)
        return 1
    except VerificationFailure as e:
        print(f"verification-failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
