"""Command-line interface: gen, train, eval, run, oracle, cogent.

Exit codes: 0 success, 2 parse/validation error, 3 data error, 4 training divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import dsl, engine as en
from .data import (DataError, DatasetSpec, DetGraphs, GTGraphs, generate_dataset, load_split,
                   write_dataset)
from .executor import dump_trace, execute
from .experiments import DEFAULT_EPOCHS, build_model, run_on
from .training import TrainConfig, TrainingDiverged, evaluate, load_checkpoint, save_checkpoint, train
from .world import Scene, WorldConfig, WorldError

EXIT_OK, EXIT_INVALID, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("graphreason")


def _read_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read {path}: {e}") from e


def _dataset_spec(args) -> DatasetSpec:
    spec = DatasetSpec.from_dict(_read_json(args.config))
    if getattr(args, "scenes", None) is not None:
        spec.scenes = args.scenes
    if getattr(args, "questions_per_scene", None) is not None:
        spec.questions_per_scene = args.questions_per_scene
    return spec


def _load_scene(path: str) -> Scene:
    d = _read_json(path)
    try:
        return Scene.from_dict(d)
    except (KeyError, TypeError, WorldError) as e:
        raise DataError(f"malformed scene in {path}: {e}") from e


def cmd_gen(args) -> int:
    spec = _dataset_spec(args)
    scenes, splits = generate_dataset(spec)
    write_dataset(args.out, spec, scenes, splits)
    print(json.dumps({name: len(recs) for name, recs in splits.items()}))
    return EXIT_OK


def cmd_train(args) -> int:
    data = load_split(args.data, "train")
    epochs = args.epochs if args.epochs is not None else DEFAULT_EPOCHS[args.setting]
    model = build_model(data.spec, args.setting, args.dim, seed=args.seed)
    cfg = TrainConfig(epochs=epochs, batch_size=args.batch_size, fraction=args.fraction, seed=args.seed)

    def progress(epoch, result):
        log.info("epoch %d/%d loss %.4f", epoch, epochs, result.loss_curve[-1])

    result = train(model, data, cfg, progress)
    save_checkpoint(model, args.out, {"epoch": result.epoch, "seed": args.seed,
                                      "loss_curve": result.loss_curve, "lr_schedule": result.lr_schedule})
    print(json.dumps({"epochs": result.epoch, "examples": result.examples,
                      "final_loss": result.loss_curve[-1], "parameters": model.parameter_count()}))
    return EXIT_OK


def cmd_eval(args) -> int:
    model, meta = load_checkpoint(args.ckpt)
    data = load_split(args.data, args.split)
    metrics = evaluate(model, data, args.workers, meta.get("loss_curve"))
    print(json.dumps(metrics.to_dict()))
    return EXIT_OK


def _graph_for(model: en.Model, scene: Scene):
    if model.config.setting == "gt":
        return GTGraphs({0: scene}, model.embedding)(0)
    spec = DatasetSpec(world=WorldConfig(vocab=model.config.vocab))
    return DetGraphs({0: scene}, spec, model.config.det_projection_seed, model.config.seed)(0)


def cmd_run(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    scene = _load_scene(args.scene)
    program = dsl.parse(args.program, WorldConfig(vocab=model.config.vocab))
    logits, trace = execute(program, _graph_for(model, scene), model)
    answer = model.config.answers[int(np.argmax(logits.data))]
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write(dump_trace(trace, answer))
    print(answer)
    return EXIT_OK


def cmd_oracle(args) -> int:
    scene = _load_scene(args.scene)
    print(dsl.oracle(dsl.parse(args.program), scene))
    return EXIT_OK


def cmd_cogent(args) -> int:
    spec = _dataset_spec(args)
    spec.cogent = True
    scenes, splits = generate_dataset(spec)
    write_dataset(args.out, spec, scenes, splits)
    report = {}
    settings = ["gt", "det"] if args.setting == "both" else [args.setting]
    for setting in settings:
        cfg = TrainConfig(epochs=args.epochs or DEFAULT_EPOCHS[setting], seed=args.seed)
        res = run_on(scenes, splits, spec, setting, cfg, args.dim, args.workers)
        save_checkpoint(res.model, os.path.join(args.out, f"{setting}.ckpt.json"),
                        {"epoch": res.train.epoch, "seed": args.seed, "loss_curve": res.train.loss_curve})
        a, b = res.metrics["valA"], res.metrics["valB"]
        report[setting] = {"A": a.overall, "B": b.overall,
                           "A_per_family": a.per_family, "B_per_family": b.per_family}
        print(f"{setting}: condition A {a.overall:.4f}  condition B {b.overall:.4f}")
    with open(os.path.join(args.out, "cogent_metrics.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    print(json.dumps(report))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphreason", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate scenes and question splits")
    g.add_argument("--config", required=True, help="world config JSON")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--scenes", type=int)
    g.add_argument("--questions-per-scene", type=int)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model on <data>/train.jsonl")
    t.add_argument("--data", required=True)
    t.add_argument("--setting", choices=["gt", "det"], required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--fraction", type=float, default=1.0)
    t.add_argument("--epochs", type=int, help="default: 5 for gt, 10 for det")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--dim", type=int, default=32)
    t.add_argument("--batch-size", type=int, default=128)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="metrics JSON for one split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", required=True)
    e.add_argument("--workers", type=int, default=1)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("run", help="answer one program on one scene")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--scene", required=True)
    r.add_argument("--program", required=True)
    r.add_argument("--trace", help="write the execution trace JSON here")
    r.set_defaults(func=cmd_run)

    o = sub.add_parser("oracle", help="exact answer from the symbolic evaluator")
    o.add_argument("--scene", required=True)
    o.add_argument("--program", required=True)
    o.set_defaults(func=cmd_oracle)

    c = sub.add_parser("cogent", help="train on palette A, evaluate on A and swapped palette B")
    c.add_argument("--config", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--setting", choices=["gt", "det", "both"], default="both")
    c.add_argument("--scenes", type=int)
    c.add_argument("--questions-per-scene", type=int)
    c.add_argument("--epochs", type=int)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--dim", type=int, default=32)
    c.add_argument("--workers", type=int, default=1)
    c.set_defaults(func=cmd_cogent)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except dsl.ProgramError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (dsl.IllPosedError, WorldError, en.EngineError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
