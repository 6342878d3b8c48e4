"""Command line entry point.

    crossview synth     --config cfg.yaml --out DIR
    crossview train     --config cfg.yaml [--set train.epochs=5 ...]
    crossview eval      --checkpoint ckpt --data DIR [--label-map map.json]
    crossview loco      --config cfg.yaml
    crossview probe     --checkpoint ckpt --data DIR [--val-data DIR]
    crossview gradcheck [--preset tiny]

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure, 5 I/O.
Failures print one JSON line ``{"error": ..., "message": ..., "exit_code": ...}``
on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_run_config
from .dataset import export_png, load_manifest, open_store, split_loco, synth_generate
from .errors import ConfigError, CrossViewError
from .evaluator import LabelMap, evaluate, run_loco
from .model import init_params
from .probe import export_embeddings, extract_features, probe_view_drop
from .sampler import build_triplet_batch
from .trainer import arch_for, gradient_check, json_safe, train

log = logging.getLogger("crossview")


def _versions():
    import numba

    return {"crossview": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "numba": numba.__version__, "kernel_backend": backend()}


def emit(obj):
    print(json.dumps(json_safe(obj)))


def write_inputs(out_dir, command, cfg: RunConfig | None = None, **extra):
    """Record what produced the outputs in ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rec = {"command": command, "versions": _versions(), **extra}
    if cfg is not None:
        rec["config_hash"] = cfg.hash()
        rec["seed"] = cfg.train.seed
        cfg.dump(out / "config.yaml")
    (out / "inputs.json").write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")


def _dataset(cfg: RunConfig):
    """Manifest and image store for the configured data source."""
    if cfg.data["train_dir"]:
        manifest = load_manifest(cfg.data["train_dir"])
        return manifest, open_store(manifest, cfg.train.input_size)
    return synth_generate(cfg.synth)


def _test_view(cfg: RunConfig, manifest) -> int:
    tv = int(cfg.data["test_view"])
    V = manifest.label_space.V
    if not -V <= tv < V:
        raise ConfigError(f"data.test_view: {tv} outside the {V} available views")
    return tv % V


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_synth(args):
    cfg = load_run_config(args.config, args.set, args.preset)
    out = Path(args.out) if args.out else cfg.run_dir / "data"
    manifest, store = synth_generate(cfg.synth)
    export_png(manifest, store, out)
    write_inputs(out.parent / (out.name + "_meta"), "synth", cfg, n_entries=len(manifest), data_dir=str(out))
    emit({"data_dir": str(out), "n_entries": len(manifest)})


def cmd_train(args):
    cfg = load_run_config(args.config, args.set, args.preset)
    run_dir = cfg.run_dir
    manifest, store = _dataset(cfg)
    tv = _test_view(cfg, manifest)
    tr, va, te = split_loco(manifest, tv, cfg.data["val_fraction"], cfg.data["split_seed"])
    write_inputs(run_dir, "train", cfg, test_view=manifest.label_space.views[tv])
    ckpt, _ = train(cfg.train, tr, va, store, metrics_path=run_dir / "metrics.log")
    save_checkpoint(ckpt, run_dir / "checkpoint.ckpt")
    report = evaluate(ckpt, te, store)
    report.save(run_dir / "report.json", run_dir / "confusion.csv")
    emit({"run_dir": str(run_dir), "best_epoch": ckpt.epoch, "val_top1": ckpt.val_top1,
          "test_top1": report.top1, "test_top5": report.top5})


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.data)
    store = open_store(manifest, ckpt.arch.input_size)
    label_map = LabelMap.load(args.label_map) if args.label_map else None
    report = evaluate(ckpt, manifest, store, label_map=label_map, restrict=not args.full_ranking)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "eval"
    report.save(out / "report.json", out / "confusion.csv")
    write_inputs(out, "eval", checkpoint=str(args.checkpoint), data=str(args.data),
                 label_map=args.label_map, skipped_files=manifest.warning_count)
    emit({"out": str(out), "top1": report.top1, "top5": report.top5, "n_samples": report.n_samples})


def cmd_loco(args):
    cfg = load_run_config(args.config, args.set, args.preset)
    manifest, store = _dataset(cfg)
    write_inputs(cfg.run_dir, "loco", cfg)
    rep = run_loco(manifest, cfg.train, store, run_dir=cfg.run_dir, val_fraction=cfg.data["val_fraction"],
                   split_seed=cfg.data["split_seed"])
    emit({"run_dir": str(cfg.run_dir), "mean_top1": rep.mean_top1, "mean_top5": rep.mean_top5})


def cmd_probe(args):
    ckpt = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.data)
    store = open_store(manifest, ckpt.arch.input_size)
    if args.val_data:
        train_m = manifest
        val_m = load_manifest(args.val_data)
        val_store = open_store(val_m, ckpt.arch.input_size)
    else:
        # recover the checkpoint's own train/val split of this dataset
        tv = args.test_view if args.test_view is not None else len(manifest.label_space.views) - 1
        train_m, val_m, _ = split_loco(manifest, tv, args.val_fraction, args.split_seed)
        val_store = store
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "probe"
    out.mkdir(parents=True, exist_ok=True)
    accs = {}
    for stage in ("pre", "post"):
        for part, m, st in (("train", train_m, store), ("val", val_m, val_store)):
            export_embeddings(extract_features(ckpt, m, stage, st), out / f"embeddings_{part}_{stage}.csv")
    if val_store is store:
        accs = probe_view_drop(ckpt, train_m, val_m, store)
    else:
        from .probe import mdc_accuracy, mdc_fit

        for stage in ("pre", "post"):
            tr = extract_features(ckpt, train_m, stage, store)
            va = extract_features(ckpt, val_m, stage, val_store)
            accs[f"acc_{stage}"] = mdc_accuracy(mdc_fit(tr.rows, tr.view_ids), va.rows, va.view_ids)
        accs["drop"] = accs["acc_pre"] - accs["acc_post"]
    (out / "probe.json").write_text(json.dumps(accs, indent=2) + "\n")
    write_inputs(out, "probe", checkpoint=str(args.checkpoint), data=str(args.data), val_data=args.val_data)
    emit(accs)


def cmd_gradcheck(args):
    cfg = load_run_config(args.config, args.set, args.preset or "tiny")
    gc = cfg.gradcheck
    manifest, store = synth_generate(cfg.synth)
    arch = arch_for(cfg.train, manifest.label_space)
    params = init_params(arch, np.random.default_rng(gc["seed"]), np.float64)
    batch = build_triplet_batch(manifest, int(gc["triplets"]), gc["seed"])
    images = store.batch([manifest.source_ids[i] for i in batch.stacked()])
    a, v = manifest.action_ids[batch.anchor], manifest.view_ids[batch.anchor]
    results = {}
    for sg in (False, True):
        rep = gradient_check(params, arch, images, a, v, cfg.train.loss_weights, stop_gradient_pv=sg,
                             epsilon=float(gc["epsilon"]), seed=gc["seed"])
        results[f"stop_gradient_pv={sg}"] = rep.to_dict()
    worst = max(r["max_rel_err"] for r in results.values())
    tol = float(gc["tolerance"])
    summary = {"max_rel_err": worst, "tolerance": tol, "passed": worst < tol, "checks": results}
    write_inputs(cfg.run_dir, "gradcheck", cfg)
    (cfg.run_dir / "gradcheck.json").write_text(json.dumps(summary, indent=2) + "\n")
    emit({"max_rel_err": worst, "passed": worst < tol})
    return 0 if worst < tol else 4


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossview", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="YAML or JSON run configuration")
        p.add_argument("--preset", choices=["desk", "large", "tiny"], help="base preset (default desk)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value, e.g. train.epochs=5")
        return p

    p = with_config(sub.add_parser("synth", help="generate the synthetic dataset as PNG files"))
    p.add_argument("--out", help="output directory (default <run_dir>/data)")
    p.set_defaults(func=cmd_synth)

    p = with_config(sub.add_parser("train", help="train on one leave-one-camera-out split"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a directory dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--label-map", help="JSON label map for foreign datasets")
    p.add_argument("--full-ranking", action="store_true", help="rank all model classes, not only mapped ones")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = with_config(sub.add_parser("loco", help="full leave-one-camera-out round"))
    p.set_defaults(func=cmd_loco)

    p = sub.add_parser("probe", help="view probe on features before/after the gate, plus embedding CSVs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="training dataset directory")
    p.add_argument("--val-data", help="validation dataset directory; otherwise --data is split")
    p.add_argument("--test-view", type=int)
    p.add_argument("--val-fraction", type=float, default=0.25)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_probe)

    p = with_config(sub.add_parser("gradcheck", help="finite-difference check of analytic gradients"))
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        code = args.func(args)
        return int(code or 0)
    except CrossViewError as exc:
        code = exc.exit_code
        err = exc
    except OSError as exc:
        code, err = 5, exc
    print(json.dumps({"error": type(err).__name__, "message": str(err), "exit_code": code}), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
