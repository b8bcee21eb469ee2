"""Command-line entry point: ``tumseg <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from .ensemble import canonical_subset, majority_vote
from .experiment import ROLES, load_subjects, run_crossval, segment, train_model_set
from .metrics import aggregate, evaluate_subject, write_aggregate_csv, write_metrics_csv
from .phantom import PhantomSpec, generate_phantom
from .unet import load_params
from .volume import STANDARD_GRID, uncrop

log = logging.getLogger("tumseg")


def _triple(text):
    parts = [int(p) for p in text.split(",")]
    if len(parts) == 1:
        parts *= 3
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected D or X,Y,Z")
    return tuple(parts)


def cmd_phantom(args):
    out = Path(args.out)
    for i in range(args.count):
        vol, labels = generate_phantom(PhantomSpec(dims=args.dims, seed=args.seed + i))
        ds.write_subject(out, f"phantom_{i:03d}", vol, labels)
    log.info("wrote %d phantoms to %s", args.count, out)


def cmd_preprocess(args):
    for sid in ds.list_subjects(args.in_dir):
        vol, labels, _ = ds.read_subject(args.in_dir, sid)
        pre, pre_labels, crop = ds.preprocess(vol, labels, args.grid)
        ds.write_subject(args.out, sid, pre, pre_labels, crop)
    log.info("preprocessed subjects into %s", args.out)


def cmd_train(args):
    cfg = ds.load_config(args.config)
    subjects = load_subjects(args.data, args.grid)
    ids = sorted(subjects)
    rng = np.random.default_rng(cfg.train.seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    n_val = int(np.floor(cfg.train.val_fraction * len(ids) + 0.5)) if len(ids) > 1 else 0
    val, train = order[:n_val], order[n_val:]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    models, hist = train_model_set([subjects[s] for s in train], [subjects[s] for s in val],
                                   cfg, roles=(args.plane,))
    from .train import write_history_csv
    from .unet import save_params

    save_params(models.plane_model(args.plane) if args.plane != "tc" else models.tc, out)
    write_history_csv(hist[args.plane], out.with_suffix(".csv"))
    log.info("saved %s model to %s", args.plane, out)


def _model_sets(models_dir):
    from .ensemble import ModelSet

    models_dir = Path(models_dir)
    dirs = sorted(p for p in models_dir.glob("fold*") if p.is_dir()) or [models_dir]
    sets = []
    for d in dirs:
        nets = {r: load_params(d / f"{r}.ckpt") for r in ROLES if (d / f"{r}.ckpt").exists()}
        sets.append(ModelSet(**nets))
    return sets


def cmd_predict(args):
    subset = canonical_subset(args.subset)
    sets = _model_sets(args.models)
    subjects = load_subjects(args.data, args.grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for sid, subj in subjects.items():
        finals, probs = [], []
        for models in sets:
            final, pred = segment(models, subj, subset)
            finals.append(final)
            probs.append(uncrop(pred.p_avg, subj.crop))
        labels = finals[0] if len(finals) == 1 else majority_vote(finals, probs)
        ds.write_labels(out / f"{sid}.nii.gz", labels, subj.volume.voxel_size)
        if args.save_probs:
            ds.save_probs(out / f"{sid}_probs.bin", np.mean(probs, axis=0))
    log.info("wrote %d predictions to %s", len(subjects), out)


def cmd_evaluate(args):
    reports = []
    for path in sorted(Path(args.pred).glob("*.nii.gz")):
        sid = path.name[:-len(".nii.gz")]
        pred, voxel_size = ds.read_labels(path)
        truth_path = Path(args.truth) / sid / f"{sid}_seg.nii.gz"
        if not truth_path.exists():
            truth_path = Path(args.truth) / f"{sid}.nii.gz"
        truth, _ = ds.read_labels(truth_path)
        reports.append(evaluate_subject(pred, truth, voxel_size, sid))
    out = Path(args.out)
    write_metrics_csv(reports, out)
    stats = aggregate(reports)
    write_aggregate_csv(stats, out.with_name(out.stem + "_aggregate.csv"))
    for region in ("ET", "WT", "TC"):
        s = stats[("dice", region)]
        print(f"{region}: dice mean {s.mean:.4f} median {s.median:.4f} (n={len(reports)})")


def cmd_crossval(args):
    cfg = ds.load_config(args.config)
    subjects = load_subjects(args.data, args.grid)
    only = None if args.only_folds is None else {int(f) for f in args.only_folds.split(",")}
    result = run_crossval(subjects, args.folds, cfg, args.ablate, args.out, only, args.seed)
    for name, stats in result.stats.items():
        dice = " ".join(f"{r} {stats[('dice', r)].mean:.3f}" for r in ("ET", "WT", "TC"))
        print(f"{name:6s} dice {dice}")
    print(f"finished in {result.seconds:.0f}s; reports in {args.out}")


def cmd_overlay(args):
    from .overlay import save_overlay

    save_overlay(args.image, args.labels, args.slice, args.out, plane=args.plane)


def build_parser():
    p = argparse.ArgumentParser(prog="tumseg", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("phantom", help="generate synthetic labelled subjects")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--dims", type=_triple, default=(64, 64, 64))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("preprocess", help="crop to the standard grid and normalise")
    s.add_argument("--in", dest="in_dir", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--grid", type=_triple, default=STANDARD_GRID)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train one plane network or the TC network")
    s.add_argument("--data", required=True)
    s.add_argument("--plane", choices=ROLES, required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--grid", type=_triple, default=STANDARD_GRID)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="segment subjects with trained networks")
    s.add_argument("--data", required=True)
    s.add_argument("--models", required=True)
    s.add_argument("--subset", default="TPTC", choices=["A", "AS", "TP", "TPTC"])
    s.add_argument("--out", required=True)
    s.add_argument("--save-probs", action="store_true")
    s.add_argument("--grid", type=_triple, default=STANDARD_GRID)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="score predictions against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("crossval", help="k-fold cross-validation, optionally with ablation")
    s.add_argument("--data", required=True)
    s.add_argument("--folds", type=int, default=5)
    s.add_argument("--ablate", action="store_true")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--grid", type=_triple, default=STANDARD_GRID)
    s.add_argument("--only-folds", help="comma-separated fold indices to run")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_crossval)

    s = sub.add_parser("overlay", help="PNG of one slice with labels overlaid")
    s.add_argument("--image", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--slice", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--plane", default="axial", choices=["axial", "sagittal", "coronal"])
    s.set_defaults(func=cmd_overlay)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(message)s")
    threads = ds.config_threads()
    if threads:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=threads):
            return args.func(args)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
