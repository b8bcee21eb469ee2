"""Sub-region overlap metrics, 95th-percentile Hausdorff distance,
aggregation and paired t-tests."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, special
from scipy.spatial import cKDTree

from .errors import EmptyList, LengthMismatch, ShapeMismatch, TooFewSamples
from .volume import ED, ET, NCR

REGIONS = ("ET", "WT", "TC")
METRICS = ("dice", "sensitivity", "specificity", "h95")


def compose_subregions(labels):
    """ET, TC (ET + NCR/NET) and WT (TC + ED) masks of an internal label map."""
    labels = np.asarray(labels)
    et = labels == ET
    tc = et | (labels == NCR)
    wt = tc | (labels == ED)
    return {"ET": et, "TC": tc, "WT": wt}


@dataclass
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int


def confusion_metrics(pred, truth):
    """Dice, sensitivity, specificity and the confusion counts.

    Both empty: dice 1, sensitivity 1. Empty truth with predictions: dice 0,
    sensitivity 1. Specificity with no negatives in truth is 1.
    """
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"{pred.shape} vs {truth.shape}")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    tn = pred.size - tp - fp - fn
    denom = 2 * tp + fp + fn
    dice = 2 * tp / denom if denom else 1.0
    sens = tp / (tp + fn) if tp + fn else 1.0
    spec = tn / (tn + fp) if tn + fp else 1.0
    return dice, sens, spec, Confusion(tp, fp, fn, tn)


def boundary(mask):
    """Mask voxels with at least one face neighbour outside the mask or grid."""
    mask = np.asarray(mask, dtype=bool)
    inner = ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(3, 1),
                                   border_value=0)
    return mask & ~inner


def empty_penalty(grid_dims, voxel_size=(1.0, 1.0, 1.0)):
    """Distance reported when exactly one mask is empty: the grid diagonal."""
    return float(np.sqrt(np.sum((np.asarray(grid_dims) * np.asarray(voxel_size)) ** 2)))


def hausdorff95(pred, truth, voxel_size=(1.0, 1.0, 1.0), grid_dims=None):
    """95th percentile (linear interpolation) of the pooled directed
    boundary-to-boundary distances, in mm."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"{pred.shape} vs {truth.shape}")
    grid_dims = pred.shape if grid_dims is None else grid_dims
    has_p, has_t = pred.any(), truth.any()
    if not has_p and not has_t:
        return 0.0
    if has_p != has_t:
        return empty_penalty(grid_dims, voxel_size)
    spacing = np.asarray(voxel_size, dtype=np.float64)
    bp = np.argwhere(boundary(pred)) * spacing
    bt = np.argwhere(boundary(truth)) * spacing
    d_pt, _ = cKDTree(bt).query(bp)
    d_tp, _ = cKDTree(bp).query(bt)
    return float(np.percentile(np.concatenate([d_pt, d_tp]), 95))


@dataclass
class RegionMetrics:
    dice: float
    sensitivity: float
    specificity: float
    h95: float
    counts: Confusion


@dataclass
class MetricsReport:
    regions: dict = field(default_factory=dict)  # region -> RegionMetrics
    subject: str = ""

    def value(self, region, metric):
        return getattr(self.regions[region], metric)


def evaluate_subject(pred, truth, voxel_size=(1.0, 1.0, 1.0), subject=""):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"{pred.shape} vs {truth.shape}")
    p_regions = compose_subregions(pred)
    t_regions = compose_subregions(truth)
    report = MetricsReport(subject=subject)
    for region in REGIONS:
        dice, sens, spec, counts = confusion_metrics(p_regions[region], t_regions[region])
        h95 = hausdorff95(p_regions[region], t_regions[region], voxel_size, truth.shape)
        report.regions[region] = RegionMetrics(dice, sens, spec, h95, counts)
    return report


# --- aggregation -----------------------------------------------------------------

@dataclass
class SummaryStats:
    mean: float
    std: float
    median: float
    q25: float
    q75: float


def summarize(values):
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise EmptyList("nothing to summarize")
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    q25, median, q75 = np.percentile(values, [25, 50, 75])
    return SummaryStats(float(values.mean()), std, float(median), float(q25), float(q75))


def aggregate(reports):
    """{(metric, region): SummaryStats} over subjects."""
    if not reports:
        raise EmptyList("no reports to aggregate")
    return {
        (metric, region): summarize([r.value(region, metric) for r in reports])
        for metric in METRICS
        for region in REGIONS
    }


def paired_t_test(a, b):
    """Paired two-tailed t-test. Returns ``(t, p)``.

    All-zero differences give ``t = 0, p = 1``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.shape} vs {b.shape}")
    n = a.size
    if n < 2:
        raise TooFewSamples("paired t-test needs at least two pairs")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0:
        if mean == 0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    t = mean / (sd / math.sqrt(n))
    df = n - 1
    # two-tailed tail mass of Student's t via the regularised incomplete beta
    p = float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))
    return float(t), min(1.0, p)


# --- reports on disk ---------------------------------------------------------------

def write_metrics_csv(reports, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject", "region", "dice", "sensitivity", "specificity", "h95"])
        for r in reports:
            for region in REGIONS:
                m = r.regions[region]
                w.writerow([r.subject, region, f"{m.dice:.6f}", f"{m.sensitivity:.6f}",
                            f"{m.specificity:.6f}", f"{m.h95:.4f}"])


def read_metrics_csv(path):
    reports = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rep = reports.setdefault(row["subject"], MetricsReport(subject=row["subject"]))
            rep.regions[row["region"]] = RegionMetrics(
                float(row["dice"]), float(row["sensitivity"]), float(row["specificity"]),
                float(row["h95"]), None)
    return list(reports.values())


_STAT_ROWS = (("Mean", "mean"), ("Std.", "std"), ("Median", "median"),
              ("25 quantile", "q25"), ("75 quantile", "q75"))


def write_aggregate_csv(stats, path):
    """One row per statistic, columns metric_region, like the results tables."""
    cols = [(m, r) for m in METRICS for r in REGIONS]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stat"] + [f"{m}_{r}" for m, r in cols])
        for label, attr in _STAT_ROWS:
            w.writerow([label] + [f"{getattr(stats[c], attr):.6g}" for c in cols])


def ablation_table(reports_by_config):
    """Per-configuration mean/std plus pairwise paired t-test p-values.

    ``reports_by_config`` maps configuration name -> list of reports over
    the same subjects in the same order. Returns a list of row dicts.
    """
    names = list(reports_by_config)
    cols = [(m, r) for m in METRICS for r in REGIONS]
    rows = []
    for name in names:
        stats = aggregate(reports_by_config[name])
        row = {"row": name, "kind": "mean(std)"}
        for c in cols:
            row[f"{c[0]}_{c[1]}"] = f"{stats[c].mean:.4f} ({stats[c].std:.4f})"
        rows.append(row)
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            a, b = reports_by_config[names[i]], reports_by_config[names[j]]
            row = {"row": f"{names[i]} vs {names[j]}", "kind": "p-value"}
            for m, r in cols:
                va = [x.value(r, m) for x in a]
                vb = [x.value(r, m) for x in b]
                _, p = paired_t_test(va, vb) if len(va) >= 2 else (0.0, float("nan"))
                row[f"{m}_{r}"] = f"{p:.4g}"
            rows.append(row)
    return rows


def write_ablation_csv(rows, path):
    fields = ["row", "kind"] + [f"{m}_{r}" for m in METRICS for r in REGIONS]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
