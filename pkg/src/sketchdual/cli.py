"""Command-line entry point: one verb per pipeline stage.

Exit status: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import cnn as cnn_mod
from . import harness
from .container import ContainerError
from .fusion import build_feature_sequence, fusion_forward, fusion_grad_check, texture_sequence, tiny_config
from .shape import ShapeFeatureError, load_codebook, save_codebook
from .sketch import SketchError, augment, load_sketch, normalize_sketch, save_sketch
from .synth import DEFAULT_FAMILIES, synth_generate

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class NumericError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _emit(args, rows, title=None):
    """Print ``rows`` (list of (key, value)) as aligned text or tab-separated lines."""
    if args.format == "tabular":
        for k, v in rows:
            print(f"{k}\t{v}")
        return
    if title:
        print(title)
    width = max((len(str(k)) for k, _ in rows), default=0)
    for k, v in rows:
        print(f"  {str(k):<{width}}  {v}")


def _emit_confusion(args, classes, cm):
    if args.format == "tabular":
        print("true\\pred\t" + "\t".join(classes))
        for name, row in zip(classes, cm):
            print(name + "\t" + "\t".join(str(v) for v in row))
        return
    width = max(len(c) for c in classes)
    print("confusion (rows true, cols predicted)")
    for name, row in zip(classes, cm):
        print(f"  {name:<{width}}  " + " ".join(f"{v:4d}" for v in row))


def _config(args, **extra):
    overrides = dict(kv.split("=", 1) for kv in args.set or [])
    overrides = {k.strip(): v.strip() for k, v in overrides.items()}
    if getattr(args, "data", None):
        overrides["data_dir"] = args.data
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        overrides["threads"] = args.threads
    overrides.update(extra)
    return harness.load_config(args.config, overrides)


def _read_split(path):
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    return harness.DatasetSplit(d["train"], d["validation"], d["test"], d.get("seed", 0))


def _split_for(args, cfg, labels):
    if getattr(args, "split", None):
        return _read_split(args.split)
    return harness.split_dataset(labels, cfg.seed)


# --------------------------------------------------------------------------
# verbs


def cmd_import(args):
    os.makedirs(args.out, exist_ok=True)
    n = 0
    for src in args.inputs:
        files = [src]
        if os.path.isdir(src):
            files = sorted(
                os.path.join(root, f)
                for root, _, names in os.walk(src)
                for f in names
                if f.lower().endswith((".svg", ".json"))
            )
        for f in files:
            s = load_sketch(f, args.input_format)
            label = args.label or s.label or os.path.basename(os.path.dirname(os.path.abspath(f)))
            s = replace(s, label=label)
            if args.normalize:
                s = normalize_sketch(s)
            os.makedirs(os.path.join(args.out, str(label)), exist_ok=True)
            stem = os.path.splitext(os.path.basename(f))[0]
            save_sketch(s, os.path.join(args.out, str(label), stem + ".json"))
            n += 1
    _emit(args, [("imported", n), ("out", args.out)])


def _write_set(sketches, out):
    counts = {}
    for s in sketches:
        i = counts.get(s.label, 0)
        counts[s.label] = i + 1
        os.makedirs(os.path.join(out, str(s.label)), exist_ok=True)
        save_sketch(s, os.path.join(out, str(s.label), f"{i:04d}.json"))
    return counts


def cmd_synth(args):
    fams = args.families.split(",") if args.families else None
    sketches = synth_generate(args.classes, args.per_class, args.seed or 0, fams)
    counts = _write_set(sketches, args.out)
    _emit(args, sorted(counts.items()), f"wrote {len(sketches)} sketches to {args.out}")


def cmd_augment(args):
    sketches, names = harness.load_sketch_dir(args.data)
    os.makedirs(args.out, exist_ok=True)
    for s, name in zip(sketches, names):
        stem = os.path.splitext(name)[0]
        for j, v in enumerate(augment(s)):
            path = os.path.join(args.out, f"{stem}-aug{j:02d}.json")
            os.makedirs(os.path.dirname(path), exist_ok=True)
            save_sketch(v, path)
    _emit(args, [("sketches", len(sketches)), ("variants", 18 * len(sketches)), ("out", args.out)])


def cmd_split(args):
    sketches, names = harness.load_sketch_dir(args.data)
    split = harness.split_dataset(sketches, args.seed or 0)
    d = split.to_dict()
    d["files"] = names
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(d, fh, indent=1)
    _emit(args, [("train", len(split.train)), ("validation", len(split.validation)), ("test", len(split.test))])


def _train_set(args):
    cfg = _config(args)
    sketches, classes, labels = harness.load_dataset(cfg)
    split = _split_for(args, cfg, labels)
    train_sk, train_y = harness.training_sketches(cfg, sketches, labels, split)
    return cfg, classes, train_sk, train_y


def cmd_codebook(args):
    cfg, _, train_sk, _ = _train_set(args)
    cb = harness.train_codebook(cfg, train_sk)
    save_codebook(cb, args.out)
    _emit(args, [("atoms", cb.size), ("iterations", len(cb.inertia)), ("inertia", cb.inertia[-1]), ("converged", cb.converged)])


def cmd_pretrain_cnn(args):
    cfg, classes, train_sk, train_y = _train_set(args)
    params, trace = harness.train_cnn(cfg, train_sk, train_y, len(classes))
    cnn_mod.save_cnn(params, args.out, {"seed": cfg.seed, "classes": [str(c) for c in classes]})
    if not np.isfinite(trace[-1]["loss"]):
        raise NumericError("CNN training diverged")
    _emit(args, [("epochs", len(trace)), ("loss", trace[-1]["loss"]), ("accuracy", trace[-1]["accuracy"])])


def cmd_featurize(args):
    cfg = _config(args)
    sketches, _, _ = harness.load_dataset(cfg)
    params = cnn_mod.load_cnn(args.cnn)
    fcfg = cfg.feature_config()
    rows = np.concatenate(harness.parallel_map(lambda s: texture_sequence(s, params, fcfg), sketches, cfg.threads))
    cnn_mod.write_feature_file(args.out, rows, {"per_sketch": 50})
    _emit(args, [("sketches", len(sketches)), ("rows", len(rows)), ("dim", rows.shape[1])])


def _emit_report(args, report):
    _emit(args, [(f"{k}_accuracy", v) for k, v in report.accuracy.items()] + [("best_epoch", report.best_epoch)])


def cmd_train(args):
    extra = {"output_dir": args.out}
    if args.features:
        extra["texture_features"] = args.features
    cfg = _config(args, **extra)
    split = _read_split(args.split) if args.split else None
    codebook = load_codebook(args.codebook) if args.codebook else None
    cnn_params = cnn_mod.load_cnn(args.cnn) if args.cnn else None
    report, _ = harness.run_experiment(cfg, split, codebook, cnn_params)
    if not np.isfinite(report.trace[-1]["train_loss"]):
        raise NumericError("training diverged")
    _emit_report(args, report)


def cmd_run(args):
    cfg = _config(args, **({"output_dir": args.out} if args.out else {}))
    report, _ = harness.run_experiment(cfg)
    if not np.isfinite(report.trace[-1]["train_loss"]):
        raise NumericError("training diverged")
    _emit_report(args, report)


def _model_dir(path):
    return os.path.dirname(path) if os.path.isfile(path) else path


def cmd_eval(args):
    params, header, codebook, cnn_params = harness.load_model_dir(_model_dir(args.model))
    snap = harness.ExperimentConfig(**header["config"])
    overrides = {"output_dir": ""}
    if args.data:
        overrides["data_dir"] = args.data
    if args.threads is not None:
        overrides["threads"] = args.threads
    cfg = replace(snap, **overrides)
    sketches, classes, labels = harness.load_dataset(cfg)
    if [str(c) for c in classes] != header["classes"]:
        raise ValueError("dataset classes do not match the model")
    if args.which == "all":
        ids = list(range(len(sketches)))
    else:
        split = _read_split(args.split) if args.split else harness.split_dataset(labels, cfg.seed)
        ids = getattr(split, args.which)
    seqs = harness.featurize([sketches[i] for i in ids], codebook, cnn_params, cfg.feature_config(), cfg.threads)
    ev = harness.evaluate(params, seqs, labels[ids])
    _emit(args, [("split", args.which), ("sketches", ev.total), ("accuracy", ev.accuracy)])
    _emit_confusion(args, header["classes"], ev.confusion)


def cmd_predict(args):
    params, header, codebook, cnn_params = harness.load_model_dir(_model_dir(args.model))
    if cnn_params is None:
        raise ValueError("model directory has no cnn.ckpt; prediction needs the texture network")
    cfg = harness.ExperimentConfig(**header["config"])
    s = normalize_sketch(load_sketch(args.sketch), cfg.canvas)
    pred = fusion_forward(build_feature_sequence(s, codebook, cnn_params, cfg.feature_config()), params)
    print(header["classes"][pred.cls])


def cmd_gradcheck(args):
    if args.config != "tiny":
        raise UsageError(f"unknown gradcheck config {args.config!r} (available: tiny)")
    err = fusion_grad_check(tiny_config(), batch=args.batch, seed=args.seed or 0, eps=args.eps)
    ok = err <= GRADCHECK_TOL
    _emit(args, [("max_relative_error", f"{err:.3e}"), ("tolerance", f"{GRADCHECK_TOL:.0e}"), ("status", "ok" if ok else "FAIL")])
    if not ok:
        raise NumericError(f"gradient check error {err:.3e} exceeds {GRADCHECK_TOL:.0e}")


def cmd_plot(args):
    from .plots import write_plots

    report = harness.read_report(args.report)
    out = args.out or os.path.dirname(os.path.abspath(args.report))
    os.makedirs(out, exist_ok=True)
    for p in write_plots(report, out):
        print(p)


# --------------------------------------------------------------------------
# parser


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--format", choices=("text", "tabular"), default="text", help="output style")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    seeded = _Parser(add_help=False)
    seeded.add_argument("--seed", type=int, default=None, help="random seed")

    configured = _Parser(add_help=False)
    configured.add_argument("--config", default=None, help=f"config file (default: ${harness.CONFIG_ENV})")
    configured.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    dataset = _Parser(add_help=False)
    dataset.add_argument("--data", default=None, help="sketch directory (default: config data_dir or synthetic)")
    dataset.add_argument("--split", default=None, help="split file written by 'split'")

    threads = _Parser(add_help=False)
    threads.add_argument("--threads", type=int, default=None, help="worker threads for featurization")

    p = _Parser(prog="sketchdual", description="Sketch recognition with dual texture/shape GRUs.")
    sub = p.add_subparsers(dest="verb", metavar="VERB", parser_class=_Parser)

    def verb(name, fn, parents, help):
        sp = sub.add_parser(name, parents=[common, *parents], help=help)
        sp.set_defaults(func=fn)
        return sp

    sp = verb("import", cmd_import, [], "convert SVG/canonical sketches to canonical JSON")
    sp.add_argument("inputs", nargs="+", help="files or directories")
    sp.add_argument("-o", "--out", required=True, help="output directory")
    sp.add_argument("--input-format", choices=("canonical", "svg"), default=None)
    sp.add_argument("--label", default=None, help="label to assign (default: file label or parent dir)")
    sp.add_argument("--normalize", action="store_true", help="fit strokes to 94%% of the canvas")

    sp = verb("synth", cmd_synth, [seeded], "generate a synthetic sketch set")
    sp.add_argument("-o", "--out", required=True)
    sp.add_argument("--classes", type=int, default=5)
    sp.add_argument("--per-class", type=int, default=20)
    sp.add_argument("--families", default=None, help="comma list from: " + ", ".join(DEFAULT_FAMILIES) + ", polygon-reversed")

    sp = verb("augment", cmd_augment, [], "write 18 augmented variants of every sketch")
    sp.add_argument("data")
    sp.add_argument("-o", "--out", required=True)

    sp = verb("split", cmd_split, [seeded], "stratified 67/13/20 split of a sketch directory")
    sp.add_argument("data")
    sp.add_argument("-o", "--out", required=True, help="split JSON")

    sp = verb("codebook", cmd_codebook, [seeded, configured, dataset], "k-means codebook from training descriptors")
    sp.add_argument("-o", "--out", required=True)

    sp = verb("pretrain-cnn", cmd_pretrain_cnn, [seeded, configured, dataset], "pretrain the texture CNN")
    sp.add_argument("-o", "--out", required=True)

    sp = verb("featurize", cmd_featurize, [seeded, configured, dataset, threads], "texture feature file for all sketches")
    sp.add_argument("--cnn", required=True)
    sp.add_argument("-o", "--out", required=True)

    sp = verb("train", cmd_train, [seeded, configured, dataset, threads], "train the fusion model and write a report")
    sp.add_argument("--codebook", default=None)
    sp.add_argument("--cnn", default=None)
    sp.add_argument("--features", default=None, help="texture feature file (bypasses the CNN)")
    sp.add_argument("-o", "--out", required=True, help="output directory")

    sp = verb("run", cmd_run, [seeded, configured, dataset, threads], "every stage from a config")
    sp.add_argument("-o", "--out", default=None, help="output directory (default: config output_dir)")

    sp = verb("eval", cmd_eval, [dataset, threads], "accuracy and confusion matrix of a trained model")
    sp.add_argument("model", help="output directory of train/run (or its model.ckpt)")
    sp.add_argument("--which", choices=("train", "validation", "test", "all"), default="test")

    sp = verb("predict", cmd_predict, [], "class name of one sketch")
    sp.add_argument("sketch")
    sp.add_argument("--model", required=True, help="output directory of train/run")

    sp = verb("gradcheck", cmd_gradcheck, [seeded], "finite-difference check of the fusion model")
    sp.add_argument("--config", default="tiny")
    sp.add_argument("--eps", type=float, default=1e-5)
    sp.add_argument("--batch", type=int, default=2)

    sp = verb("plot", cmd_plot, [], "SVG curves and confusion grid from a report")
    sp.add_argument("report", help="report.json")
    sp.add_argument("-o", "--out", default=None)
    return p


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        if not argv:
            raise UsageError(parser.format_help())
        args = parser.parse_args(argv)
        if args.verb is None:
            raise UsageError(parser.format_help())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        args.func(args)
        return EXIT_OK
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SketchError, ShapeFeatureError, ContainerError, harness.StageError, OSError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
