"""Command-line surface: one subcommand per pipeline stage.

Every subcommand is a thin wrapper over the library call with no hidden
logic. A JSON config file (--config) may supply any flag by its long
name; explicit flags win. Failures print a machine-readable JSON error
line to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import evalmetrics, training
from .classical import ClassicalParams, propose_candidates
from .nnet import TrainHyper, UNetConfig, load_checkpoint
from .postdetect import burn_overlay, clean_mask, extract_instances, write_instances
from .raster import read_image, require_mask, write_image, write_rgb_png
from .synthgen import SceneSpec, generate_corpus, load_manifest, read_circles


def _add_scene_flags(p: argparse.ArgumentParser):
    defaults = SceneSpec()
    for f in dataclasses.fields(SceneSpec):
        if f.name == "seed":
            continue
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, type=type(getattr(defaults, f.name)), default=None,
                       help=f"scene spec field (default {getattr(defaults, f.name)})")


def _scene_spec_from_args(args) -> SceneSpec:
    if args.spec:
        with open(args.spec) as f:
            spec = SceneSpec.from_json(json.load(f))
    else:
        spec = SceneSpec()
    overrides = {
        f.name: getattr(args, f.name)
        for f in dataclasses.fields(SceneSpec)
        if f.name != "seed" and getattr(args, f.name, None) is not None
    }
    return dataclasses.replace(spec, **overrides).validate()


def _classical_params(args) -> ClassicalParams:
    kwargs = {}
    for f in dataclasses.fields(ClassicalParams):
        v = getattr(args, f.name, None)
        if v is not None:
            kwargs[f.name] = v
    return ClassicalParams(**kwargs)


def _add_classical_flags(p: argparse.ArgumentParser):
    defaults = ClassicalParams()
    for f in dataclasses.fields(ClassicalParams):
        flag = "--" + f.name.replace("_", "-")
        typ = float if f.name == "area_min" else type(getattr(defaults, f.name, 0.0))
        p.add_argument(flag, type=typ, default=None,
                       help=f"pipeline parameter (default {getattr(defaults, f.name)})")


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--l2", type=float, default=None)
    p.add_argument("--encoder-depth", type=int, default=2)
    p.add_argument("--first-filters", type=int, default=8)
    p.add_argument("--patch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)


def _hyper_from_args(args) -> TrainHyper:
    hyper = TrainHyper()
    for name in ("epochs", "batch_size", "learning_rate", "l2"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(hyper, name, v)
    return hyper.validate()


def _cfg_from_args(args) -> UNetConfig:
    return UNetConfig(encoder_depth=args.encoder_depth,
                      first_filters=args.first_filters,
                      input_size=args.patch_size).validate()


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) is None:
            raise ValueError(f"missing required flag --{name.replace('_', '-')}")


def cmd_synth(args) -> int:
    _require(args, "out")
    spec = _scene_spec_from_args(args)
    records = generate_corpus(spec, args.n, args.seed, args.out)
    print(json.dumps({"written": len(records), "out": args.out}))
    return 0


def cmd_propose(args) -> int:
    _require(args, "image", "out")
    img = read_image(args.image)
    params = _classical_params(args)
    circles = propose_candidates(img, params)
    with open(args.out, "w") as f:
        for c in circles:
            f.write(json.dumps({"cx": c.cx, "cy": c.cy, "r": c.r, "score": c.score}) + "\n")
    if args.overlay:
        write_rgb_png(burn_overlay(img, circles), args.overlay)
    print(json.dumps({"candidates": len(circles), "out": args.out}))
    return 0


def cmd_train(args) -> int:
    _require(args, "corpus", "out")
    records = load_manifest(args.corpus)
    patches, masks, _ = training.make_patch_dataset(records, args.corpus, args.patch_size)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "model.ckpt")
    run = training.train(patches, masks, _cfg_from_args(args), _hyper_from_args(args),
                         training.AugmentConfig(), seed=args.seed,
                         checkpoint_path=ckpt,
                         log=lambda msg: print(msg, file=sys.stderr))
    manifest = {
        "seed": args.seed,
        "config": run.model.cfg.to_json(),
        "hyper": run.hyper.to_json(),
        "augment": run.aug.to_json(),
        "corpus": os.path.abspath(args.corpus),
        "loss_history": run.loss_history,
        "accuracy_history": run.accuracy_history,
        "early_accuracy": run.early_accuracy,
        "checkpoint": os.path.abspath(ckpt),
    }
    with open(os.path.join(args.out, "run.json"), "w") as f:
        json.dump(manifest, f, indent=1)
    print(json.dumps({"checkpoint": ckpt, "final_loss": run.loss_history[-1]
                      if run.loss_history else None}))
    return 0


def cmd_infer(args) -> int:
    _require(args, "checkpoint", "image", "out")
    net = load_checkpoint(args.checkpoint)
    img = read_image(args.image)
    mask = training.infer_full_image(net, img)
    if args.clean:
        mask = clean_mask(mask)
    write_image(mask, args.out)
    if args.overlay:
        instances = extract_instances(mask)
        write_rgb_png(burn_overlay(img, instances), args.overlay)
    print(json.dumps({"out": args.out, "positive_pixels": int(mask.sum())}))
    return 0


def cmd_crossval(args) -> int:
    _require(args, "corpus", "out")
    records = load_manifest(args.corpus)
    os.makedirs(args.out, exist_ok=True)
    result = training.run_crossval(
        records, args.corpus, _cfg_from_args(args), _hyper_from_args(args),
        training.AugmentConfig(), k=args.k, seed=args.seed,
        radius_mean=args.radius_mean, out_dir=args.out,
        log=lambda msg: print(msg, file=sys.stderr))
    print(json.dumps({"out": os.path.join(args.out, "crossval.csv"),
                      "average": result.average}))
    return 0


def cmd_evaluate(args) -> int:
    _require(args, "pred", "truth", "circles")
    pred = require_mask(read_image(args.pred))
    truth = require_mask(read_image(args.truth))
    circles = read_circles(args.circles)
    instances = extract_instances(pred, args.area_min, args.area_max)
    report = evalmetrics.evaluate_image(instances, circles, pred, truth)
    row = report.row()
    if args.out:
        evalmetrics.write_reports_json([("image", row)], args.out)
    print(json.dumps(row))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.data_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="temviro",
                                     description="Intact-particle detection toolkit")
    parser.add_argument("--config", default=None,
                        help="JSON file supplying any flag by long name")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = []

    p = sub.add_parser("synth", help="generate a synthetic corpus with ground truth")
    p.add_argument("--out")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spec", default=None, help="scene spec JSON file")
    _add_scene_flags(p)
    p.set_defaults(func=cmd_synth)
    parser.subcommands.append(p)

    p = sub.add_parser("propose", help="classical candidate proposal on one image")
    p.add_argument("--image")
    p.add_argument("--out", help="candidate JSONL path")
    p.add_argument("--overlay", default=None, help="optional overlay PNG")
    _add_classical_flags(p)
    p.set_defaults(func=cmd_propose)
    parser.subcommands.append(p)

    p = sub.add_parser("train", help="train a U-Net on a corpus")
    p.add_argument("--corpus")
    p.add_argument("--out")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)
    parser.subcommands.append(p)

    p = sub.add_parser("infer", help="segment an image with a trained model")
    p.add_argument("--checkpoint")
    p.add_argument("--image")
    p.add_argument("--out", help="output mask (PGM or PNG)")
    p.add_argument("--overlay", default=None)
    p.add_argument("--clean", action="store_true", help="apply mask cleanup")
    p.set_defaults(func=cmd_infer)
    parser.subcommands.append(p)

    p = sub.add_parser("crossval", help="k-fold cross-validation on a corpus")
    p.add_argument("--corpus")
    p.add_argument("--out")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--radius-mean", type=float, default=15.0)
    _add_train_flags(p)
    p.set_defaults(func=cmd_crossval)
    parser.subcommands.append(p)

    p = sub.add_parser("evaluate", help="score a predicted mask against truth")
    p.add_argument("--pred")
    p.add_argument("--truth")
    p.add_argument("--circles")
    p.add_argument("--area-min", type=float, default=0.0)
    p.add_argument("--area-max", type=float, default=float("inf"))
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)
    parser.subcommands.append(p)

    p = sub.add_parser("serve", help="run the annotation HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--data-dir", default="temviro_sessions")
    p.set_defaults(func=cmd_serve)
    parser.subcommands.append(p)

    return parser


def _config_path(argv: list[str]) -> str | None:
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    config = _config_path(argv)
    if config:
        with open(config) as f:
            overrides = json.load(f)
        defaults = {k.replace("-", "_"): v for k, v in overrides.items()}
        parser.set_defaults(**defaults)
        for sp in parser.subcommands:
            sp.set_defaults(**defaults)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as e:
        print(json.dumps({"error": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
