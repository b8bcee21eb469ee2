"""Training and evaluation orchestration: slice datasets, per-fold model
sets, prediction with post-processing, cross-validation and ablation."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import RunConfig, list_subjects, preprocess, read_subject
from .ensemble import SUBSET_LABELS, ModelSet, canonical_subset, derive_tc_mask, predict_subject
from .errors import EmptyDataset
from .metrics import (
    ablation_table,
    aggregate,
    evaluate_subject,
    write_ablation_csv,
    write_aggregate_csv,
    write_metrics_csv,
)
from .planes import PLANES, Plane, extract_slices
from .postproc import postprocess
from .train import make_folds, train_model, write_history_csv
from .unet import save_params
from .volume import STANDARD_GRID, MultiModalVolume, derive_tc, uncrop

log = logging.getLogger(__name__)

ROLES = ("axial", "sagittal", "coronal", "tc")


@dataclass
class Subject:
    subject_id: str
    volume: MultiModalVolume  # preprocessed (cropped + normalised)
    labels: Optional[np.ndarray]  # on the preprocessed grid
    crop: object
    truth: Optional[np.ndarray] = None  # labels on the original grid


def load_subjects(data_dir, grid=STANDARD_GRID, ids=None):
    """Read and preprocess every subject of a raw data directory.

    Subjects that already carry a crop sidecar are taken as preprocessed.
    """
    out = {}
    for sid in ids or list_subjects(data_dir):
        vol, labels, crop = read_subject(data_dir, sid)
        if crop is not None:
            truth = uncrop(labels, crop) if labels is not None else None
            out[sid] = Subject(sid, vol, labels, crop, truth)
        else:
            pre, pre_labels, crop = preprocess(vol, labels, grid)
            out[sid] = Subject(sid, pre, pre_labels, crop, labels)
    return out


def slice_dataset(subjects, role):
    """Stack the 2D training slices of ``subjects`` for one network role."""
    plane = Plane.AXIAL if role == "tc" else Plane(role)
    xs, ys = [], []
    for s in subjects:
        if s.labels is None:
            raise EmptyDataset(f"{s.subject_id} has no labels")
        grid = s.volume.dims
        xs.append(extract_slices(s.volume.data, plane, grid).slices)
        target = derive_tc(s.labels).astype(np.uint8) if role == "tc" else s.labels
        ys.append(extract_slices(target[None], plane, grid).slices[:, 0])
    if not xs:
        raise EmptyDataset("no subjects")
    return np.concatenate(xs).astype(np.float32), np.concatenate(ys)


def train_model_set(train_subjects, val_subjects, run_cfg=RunConfig(), roles=ROLES, out_dir=None):
    """Train the requested networks. Returns ``(ModelSet, {role: history})``."""
    nets, histories = {}, {}
    for role in roles:
        t0 = time.time()
        x, y = slice_dataset(train_subjects, role)
        vx, vy = slice_dataset(val_subjects, role) if val_subjects else (None, None)
        cfg = run_cfg.network_config(role)
        nets[role], histories[role] = train_model(x, y, cfg, run_cfg.train, run_cfg.augment, vx, vy)
        log.info("trained %s on %d slices in %.0fs", role, len(x), time.time() - t0)
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            save_params(nets[role], out_dir / f"{role}.ckpt")
            write_history_csv(histories[role], out_dir / f"history_{role}.csv")
    return ModelSet(**nets), histories


def segment(models, subject, subset="TPTC", batch_size=8, memo=None):
    """Ensemble prediction, uncrop to the original grid, post-process.

    Returns ``(final_labels, SubjectPrediction)``.
    """
    pred = predict_subject(models, subject.volume, subset, batch_size, subject.crop, memo)
    labels = uncrop(pred.labels, subject.crop)
    tc = uncrop(derive_tc_mask(pred.p_tc), subject.crop) if pred.p_tc is not None else None
    return postprocess(labels, tc, subject.volume.voxel_size), pred


@dataclass
class CrossvalResult:
    folds: list
    reports: dict = field(default_factory=dict)  # config label -> [MetricsReport]
    stats: dict = field(default_factory=dict)  # config label -> aggregate stats
    ablation: Optional[list] = None
    histories: dict = field(default_factory=dict)  # fold -> {role: history}
    seconds: float = 0.0


def run_crossval(subjects, k=5, run_cfg=RunConfig(), ablate=False, out_dir=None,
                 fold_indices=None, seed=0):
    """k-fold cross-validation over a {id: Subject} mapping.

    Every fold trains the plane networks and the TC network, then segments
    its test subjects with the full ensemble (and, with ``ablate``, with the
    A / A+S / TP / TP+TC subsets of the same networks).
    """
    t0 = time.time()
    ids = sorted(subjects)
    folds = make_folds(ids, k, run_cfg.train.val_fraction, seed)
    configs = ["A", "AS", "TP", "TPTC"] if ablate else ["TPTC"]
    result = CrossvalResult(folds, {SUBSET_LABELS[c]: [] for c in configs})
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "folds.txt", "w") as fh:
            for i, f in enumerate(folds):
                fh.write(f"fold {i} train {','.join(f.train)}\n")
                fh.write(f"fold {i} val {','.join(f.val)}\n")
                fh.write(f"fold {i} test {','.join(f.test)}\n")

    for i, fold in enumerate(folds):
        if fold_indices is not None and i not in fold_indices:
            continue
        fold_cfg = replace(run_cfg, train=replace(run_cfg.train, seed=run_cfg.train.seed + i))
        models, hist = train_model_set(
            [subjects[s] for s in fold.train], [subjects[s] for s in fold.val], fold_cfg,
            out_dir=out_dir / f"fold{i}" if out_dir is not None else None)
        result.histories[i] = hist
        for sid in fold.test:
            subj = subjects[sid]
            memo = {}
            for c in configs:
                final, _ = segment(models, subj, c, memo=memo)
                report = evaluate_subject(final, subj.truth, subj.volume.voxel_size, sid)
                result.reports[SUBSET_LABELS[c]].append(report)
        log.info("fold %d done after %.0fs", i, time.time() - t0)

    result.stats = {name: aggregate(reps) for name, reps in result.reports.items() if reps}
    if ablate:
        result.ablation = ablation_table(result.reports)
    result.seconds = time.time() - t0

    if out_dir is not None:
        main = SUBSET_LABELS["TPTC"]
        write_metrics_csv(result.reports[main], out_dir / "metrics.csv")
        write_aggregate_csv(result.stats[main], out_dir / "aggregate.csv")
        if ablate:
            for name, reps in result.reports.items():
                tag = canonical_subset(name)
                write_metrics_csv(reps, out_dir / f"metrics_{tag}.csv")
            write_ablation_csv(result.ablation, out_dir / "ablation.csv")
    return result


def phantom_subjects(seeds, dims=(64, 64, 64), grid=None):
    """Preprocessed phantom subjects keyed ``ph<seed>``."""
    from .phantom import PhantomSpec, generate_phantom

    grid = tuple(dims) if grid is None else tuple(grid)
    out = {}
    for s in seeds:
        vol, labels = generate_phantom(PhantomSpec(dims=tuple(dims), seed=s))
        pre, pre_labels, crop = preprocess(vol, labels, grid)
        sid = f"ph{s:03d}"
        out[sid] = Subject(sid, pre, pre_labels, crop, labels)
    return out


def phantom_study(n_train=24, n_test=6, run_cfg=RunConfig(), dims=(64, 64, 64), seed=0,
                  configs=("A", "AS", "TP", "TPTC"), out_dir=None):
    """Train one model set on ``n_train`` phantoms (a ``val_fraction`` share of
    them held out for validation) and score ``n_test`` unseen phantoms under
    each subset. Returns ``{label: [MetricsReport]}`` and the elapsed seconds."""
    t0 = time.time()
    train = phantom_subjects(range(seed, seed + n_train), dims)
    test = phantom_subjects(range(seed + n_train, seed + n_train + n_test), dims)
    ids = sorted(train)
    n_val = int(np.floor(run_cfg.train.val_fraction * len(ids) + 0.5))
    models, _ = train_model_set([train[s] for s in ids[n_val:]], [train[s] for s in ids[:n_val]],
                                run_cfg, out_dir=out_dir)
    reports = {SUBSET_LABELS[c]: [] for c in configs}
    for sid, subj in sorted(test.items()):
        memo = {}
        for c in configs:
            final, _ = segment(models, subj, c, memo=memo)
            reports[SUBSET_LABELS[c]].append(
                evaluate_subject(final, subj.truth, subj.volume.voxel_size, sid))
    return reports, time.time() - t0
