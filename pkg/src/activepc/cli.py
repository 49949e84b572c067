"""Command-line entry point: ``activepc {generate,train,eval,ablate,sweep,inspect}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError, RunConfig

log = logging.getLogger("activepc")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _with_overrides(cfg: RunConfig, args) -> RunConfig:
    seed = cfg.seed
    if os.environ.get("PTV_SEED"):
        try:
            seed = int(os.environ["PTV_SEED"])
        except ValueError:
            raise ConfigError(f"PTV_SEED must be an integer, got {os.environ['PTV_SEED']!r}") from None
    if getattr(args, "seed", None) is not None:
        seed = args.seed
    train = cfg.train
    if getattr(args, "frames", None) is not None:
        train = dataclasses.replace(train, clip_frames=args.frames)
    if getattr(args, "points", None) is not None:
        train = dataclasses.replace(train, points_per_frame=args.points)
    out = args.out if getattr(args, "out", None) else cfg.output
    return cfgmod.validate(dataclasses.replace(cfg, seed=seed, train=train, output=out))


def _load(args) -> RunConfig:
    return _with_overrides(cfgmod.load(args.config), args)


def _record_config(cfg: RunConfig, directory) -> None:
    cfgmod.dump(cfg, Path(directory) / "resolved_config.yaml")
    log.info("resolved config written to %s", Path(directory) / "resolved_config.yaml")


def _require_dataset(cfg: RunConfig) -> Path:
    root = Path(cfg.data.root)
    if not (root / "manifest.tsv").exists():
        raise FileNotFoundError(f"dataset not found: {root / 'manifest.tsv'} (run 'generate' first)")
    return root


def _splits(cfg: RunConfig):
    from .data import load_split

    root = _require_dataset(cfg)
    return load_split(root, "train"), load_split(root, "test")


# -- commands -------------------------------------------------------------------


def cmd_generate(args) -> int:
    from .synthdata import make_dataset

    cfg = _load(args)
    root = Path(cfg.data.root)
    summary = make_dataset(cfg.dataset_config(), root, workers=args.workers)
    _record_config(cfg, root)
    total = sum(summary.counts.values())
    print(f"wrote {total} clips to {root}: " + ", ".join(f"{k} {v}" for k, v in sorted(summary.counts.items())))
    for cid, n in sorted(summary.per_class.items()):
        print(f"  class {cid} ({cfg.data.classes[cid]}): {n}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .model import ActivePC
    from .trainer import SGD, fit, load_checkpoint

    cfg = _load(args)
    root = _require_dataset(cfg)  # fail before allocating anything
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    _record_config(cfg, out)
    train, test = _splits(cfg)
    tcfg = cfg.train_config()
    model = ActivePC(cfg.model_config())
    opt = SGD(model.trainable_named_parameters(), tcfg.momentum)
    start = 0
    if args.from_checkpoint:
        start = load_checkpoint(args.from_checkpoint, model, opt)
        log.info("resuming from %s at epoch %d", args.from_checkpoint, start)
    result = fit(model, train, tcfg, test, metrics_path=out / "metrics.tsv",
                 checkpoint_path=out / "checkpoint.ptvw", start_epoch=start, opt=opt)
    log.info("data from %s; %d parameters", root, model.num_parameters())
    acc = result.final_accuracy
    print(f"trained {len(result.history)} epochs in {result.seconds:.0f}s; test accuracy "
          + ("n/a" if acc is None else f"{acc:.2f}%"))
    return EXIT_OK


def _model_for_eval(cfg: RunConfig, checkpoint):
    from .model import ActivePC
    from .trainer import load_checkpoint

    model = ActivePC(cfg.model_config())
    path = checkpoint or cfg.eval.checkpoint
    if path is None and (Path(cfg.output) / "checkpoint.ptvw").exists():
        path = Path(cfg.output) / "checkpoint.ptvw"
    if path is not None:
        load_checkpoint(path, model)
        log.info("loaded %s", path)
    else:
        log.warning("no checkpoint given; evaluating an untrained model")
    return model


def cmd_eval(args) -> int:
    from .data import load_split
    from .eval import evaluate, export_embeddings, write_report

    cfg = _load(args)
    root = _require_dataset(cfg)
    test = load_split(root, "test")
    model = _model_for_eval(cfg, args.checkpoint)
    out = Path(cfg.output)
    _record_config(cfg, out)
    rep = evaluate(model, test, cfg.train.clip_frames, cfg.train.points_per_frame, seed=cfg.seed,
                   batch_size=cfg.eval.batch_size)
    rep.meta.update({"r": cfg.model.radii[0], "layered": cfg.model.layered, "mns": cfg.model.mns,
                     "eeq": cfg.model.eeq, "omega": ",".join(f"{w:.4f}" for w in model.omega)})
    write_report(rep, out, cfg.data.classes)
    if cfg.eval.export_embeddings:
        export_embeddings(model, test, out / "embeddings.ptve", cfg.train.clip_frames, cfg.train.points_per_frame,
                          seed=cfg.seed)
    print(f"accuracy {rep.accuracy:.2f}% on {len(test)} videos")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .eval import ABLATION_ROWS, run_ablation, write_ablation

    cfg = _load(args)
    train, test = _splits(cfg)
    out = Path(cfg.output)
    _record_config(cfg, out)
    rows = run_ablation(cfg.model_config(), cfg.train_config(cfg.eval.ablation_epochs), train, test,
                        ABLATION_ROWS, workers=args.workers)
    write_ablation(rows, out)
    for r in rows:
        print(f"{r.label}\t" + ("failed: " + r.error if r.accuracy is None else f"{r.accuracy:.2f}"))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .eval import radius_sweep, write_sweep

    cfg = _load(args)
    train, test = _splits(cfg)
    out = Path(cfg.output)
    _record_config(cfg, out)
    res = radius_sweep(cfg.model_config(), cfg.train_config(cfg.eval.ablation_epochs), train, test,
                       cfg.eval.sweep_radii, workers=args.workers)
    write_sweep(res, out)
    print((out / "sweep.tsv").read_text(), end="")
    return EXIT_OK


def cmd_inspect(args) -> int:
    from .synthdata import read_clip, read_manifest

    paths = []
    for p in map(Path, args.paths):
        if p.is_dir():
            p = p / "manifest.tsv"
        if p.suffix == ".tsv":
            paths += [p.parent / e.path for e in read_manifest(p)]
        else:
            paths.append(p)
    for p in paths:
        clip = read_clip(p)
        distinct = [len(np.unique(f, axis=0)) for f in clip.frames]
        print(f"{p}\tclass={clip.class_id}\tsubject={clip.subject_id}\tframes={clip.frame_count}"
              f"\tpoints={clip.points_per_frame}")
        print("  distinct points per frame: " + " ".join(map(str, distinct)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="activepc", description="Point-cloud video action recognition on synthetic robot-view data.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(name, fn, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("config", help="YAML run configuration")
        s.add_argument("--seed", type=int, help="overrides the config seed and PTV_SEED")
        s.add_argument("--out", help="output directory (overrides 'output')")
        s.set_defaults(fn=fn)
        return s

    g = with_config("generate", cmd_generate, "render the synthetic dataset")
    g.add_argument("--workers", type=int, default=1)
    for name, fn, help_ in (("train", cmd_train, "train a model"), ("eval", cmd_eval, "evaluate on the test split"),
                            ("ablate", cmd_ablate, "component ablation grid"),
                            ("sweep", cmd_sweep, "radius sensitivity sweep")):
        s = with_config(name, fn, help_)
        s.add_argument("--frames", type=int, help="frames per clip")
        s.add_argument("--points", type=int, help="points per frame")
        if name == "train":
            s.add_argument("--from-checkpoint", help="resume from a checkpoint written by train")
        if name == "eval":
            s.add_argument("--checkpoint", help="weights to evaluate")
        if name in ("ablate", "sweep"):
            s.add_argument("--workers", type=int, default=1)
    i = sub.add_parser("inspect", help="print clip headers and per-frame point counts")
    i.add_argument("paths", nargs="+", help="clip files, manifests or dataset directories")
    i.set_defaults(fn=cmd_inspect)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        log.debug("traceback", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
