"""Acceptance criteria. Each test prints one PASS/FAIL line (also collected
in the terminal summary) and then asserts."""
import csv
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, random_box_mask, random_label_volume
from tumseg.cli import main as cli_main
from tumseg.dataset import parse_config
from tumseg.experiment import phantom_study
from tumseg.metrics import confusion_metrics, evaluate_subject, hausdorff95, paired_t_test
from tumseg.nifti import nifti_read, nifti_write
from tumseg.planes import PLANES, assemble_probs, extract_slices
from tumseg.postproc import connected_components, postprocess, relabel_small_et, clean_ed, \
    fill_tc_ed_interface, tc_override
from tumseg.train import TrainConfig, lr_at_epoch, make_folds
from tumseg.unet import UNetConfig, grad_check
from tumseg.volume import BACKGROUND, ED, ET, NCR, MultiModalVolume, crop_to_standard, uncrop

# settings for the end-to-end phantom study (criterion 7)
STUDY_CONFIG = """
unet.base_width = 8
train.epochs = 3
"""


def report(n, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {name} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_1_gradient_correctness():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 4, 16, 16))
    y = rng.integers(0, 4, size=(2, 16, 16))
    t0 = time.time()
    err = grad_check(UNetConfig(base_width=4, depth=3), x, y, n_samples=200)
    dt = time.time() - t0
    report(1, "gradient check", err < 1e-4 and dt < 60, f"max rel err {err:.2e}, {dt:.1f}s")


# --- 2 -------------------------------------------------------------------------------------

def _count_oracle(p, t):
    tp = fp = fn = tn = 0
    for a, b in zip(p.ravel().tolist(), t.ravel().tolist()):
        if a and b:
            tp += 1
        elif a:
            fp += 1
        elif b:
            fn += 1
        else:
            tn += 1
    dice = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 1.0
    sens = tp / (tp + fn) if tp + fn else 1.0
    spec = tn / (tn + fp) if tn + fp else 1.0
    return dice, sens, spec


def _surface_points(m, spacing):
    pts = []
    X, Y, Z = m.shape
    steps = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))
    for x, y, z in np.argwhere(m).tolist():
        for dx, dy, dz in steps:
            a, b, c = x + dx, y + dy, z + dz
            if not (0 <= a < X and 0 <= b < Y and 0 <= c < Z) or not m[a, b, c]:
                pts.append((x, y, z))
                break
    return np.array(pts, dtype=float) * np.asarray(spacing)


def _brute_h95(a, b, spacing):
    pa, pb = _surface_points(a, spacing), _surface_points(b, spacing)
    d = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1))
    return float(np.percentile(np.concatenate([d.min(axis=1), d.min(axis=0)]), 95))


def test_2_metric_oracles():
    t0 = time.time()
    rng = np.random.default_rng(2)
    mismatches = 0
    codes = {"ET": [ET], "TC": [ET, NCR], "WT": [ET, NCR, ED]}
    for _ in range(100):
        p = random_label_volume(rng, (16, 16, 16), noise=0.05)
        t = random_label_volume(rng, (16, 16, 16), noise=0.05)
        rep = evaluate_subject(p, t)
        for region, cs in codes.items():
            want = _count_oracle(np.isin(p, cs), np.isin(t, cs))
            m = rep.regions[region]
            mismatches += (m.dice, m.sensitivity, m.specificity) != want
    worst = 0.0
    done = 0
    while done < 50:
        shape = tuple(int(v) for v in rng.integers(6, 25, size=3))
        a = random_box_mask(rng, shape) | (rng.random(shape) < 0.01)
        b = random_box_mask(rng, shape) | (rng.random(shape) < 0.01)
        if not a.any() or not b.any():
            continue
        spacing = tuple(rng.uniform(0.5, 1.5, size=3))
        worst = max(worst, abs(hausdorff95(a, b, spacing) - _brute_h95(a, b, spacing)))
        done += 1
    dt = time.time() - t0
    report(2, "metric oracles", mismatches == 0 and worst < 1e-9 and dt < 60,
           f"{mismatches} overlap mismatches, max H95 diff {worst:.1e} mm, {dt:.1f}s")


def test_3_empty_prediction():
    truth = np.zeros((240, 240, 155), bool)
    truth[90:130, 100:140, 60:90] = True
    pred = np.zeros_like(truth)
    h = hausdorff95(pred, truth, (1.0, 1.0, 1.0))
    dice = confusion_metrics(pred, truth)[0]
    report(3, "empty prediction", abs(h - 373.13) <= 0.01 and dice == 0,
           f"H95 {h:.3f} mm, Dice {dice}")


def test_4_round_trips(tmp_path):
    rng = np.random.default_rng(4)
    failures = []
    grid = (12, 10, 8)
    for plane in PLANES:
        p = rng.random((4,) + grid)
        p /= p.sum(axis=0)
        back = assemble_probs(extract_slices(p, plane, grid), plane, grid)
        if not np.array_equal(back, p):
            failures.append(f"planes/{plane.value}")
    for i in range(5):
        data = np.zeros((4, 240, 240, 155), np.float32)
        lo = rng.integers([20, 20, 10], [60, 60, 30])
        size = rng.integers([100, 100, 90], [180, 180, 120])
        brain = (slice(lo[0], lo[0] + size[0]), slice(lo[1], lo[1] + size[1]),
                 slice(lo[2], lo[2] + size[2]))
        data[(slice(None),) + brain] = rng.random((4,) + tuple(size)) + 0.1
        labels = np.zeros((240, 240, 155), np.uint8)
        labels[brain] = rng.integers(0, 4, size=tuple(size))
        vol = MultiModalVolume(data, (1.0, 1.0, 1.0))
        _, cl, spec = crop_to_standard(vol, labels)
        mask = vol.brain_mask()
        if not np.array_equal(uncrop(cl, spec)[mask], labels[mask]):
            failures.append(f"crop/{i}")
    for dtype in (np.float32, np.uint8):
        arr = (rng.standard_normal((9, 7, 5)) * 50).astype(dtype)
        nifti_write(tmp_path / "x.nii.gz", arr, (1.0, 1.0, 1.0))
        back = nifti_read(tmp_path / "x.nii.gz").data
        if back.dtype != arr.dtype or back.tobytes() != arr.tobytes():
            failures.append(f"nifti/{np.dtype(dtype).name}")
    report(4, "round trips", not failures, ", ".join(failures) or "planes, crop, NIfTI exact")


def _random_tc(rng, shape):
    m = np.zeros(shape, bool)
    lo = [int(rng.integers(0, s // 2)) for s in shape]
    hi = [l + int(rng.integers(1, s // 2 + 1)) for l, s in zip(lo, shape)]
    m[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = True
    return m


def test_5_postprocessing_invariants():
    rng = np.random.default_rng(5)
    cube = np.ones((3, 3, 3), bool)
    from scipy import ndimage

    bad = []
    for i in range(500):
        shape = tuple(int(v) for v in rng.integers(8, 18, size=3))
        lab = random_label_volume(rng, shape, n_boxes=int(rng.integers(2, 9)), noise=0.02)
        tc = _random_tc(rng, shape) if i % 2 else None
        out = postprocess(lab, tc)
        if any(c.volume_mm3 < 200 for c in connected_components(out == ET)):
            bad.append(f"{i}:a")
        if tc is not None and not np.all(np.isin(out[tc], (ET, NCR))):
            bad.append(f"{i}:b")
        core = ndimage.binary_dilation((out == ET) | (out == NCR), structure=cube)
        near_ed = ndimage.binary_dilation(out == ED, structure=cube)
        if np.any((out == BACKGROUND) & core & near_ed):
            bad.append(f"{i}:c")
        rules = [relabel_small_et, clean_ed, fill_tc_ed_interface]
        if tc is not None:
            rules.append(lambda x: tc_override(x, tc))
        for rule in rules:
            once = rule(lab)
            if not np.array_equal(rule(once), once):
                bad.append(f"{i}:d")
        if not np.array_equal(postprocess(out, tc), out):
            bad.append(f"{i}:d-full")

    # exact thresholds
    lab = np.zeros((20, 20, 20), np.uint8)
    lab[0:10, 0:10, 0:2] = ET  # exactly 200 mm^3, kept
    lab[12:20, 0:10, 5:7] = ET  # 160 mm^3, relabelled
    out = relabel_small_et(lab)
    if np.count_nonzero(out == ET) != 200 or np.count_nonzero(out == NCR) != 160:
        bad.append("et-threshold")
    for x, kept in ((79, True), (80, False)):
        ed = np.zeros((90, 4, 4), np.uint8)
        ed[0:9, 0:3, 0:3] = ED  # centroid (4, 1, 1)
        ed[x, 1, 1] = ED  # exactly 75 mm away, then 76 mm
        if (clean_ed(ed)[x, 1, 1] == ED) != kept:
            bad.append(f"ed-distance-{x}")
    report(5, "post-processing invariants", not bad,
           f"500 volumes, violations: {', '.join(bad[:5]) or 'none'}")


def test_6_schedule_and_folds():
    cfg = TrainConfig()
    want = [1e-3, 1e-3, 1e-4, 1e-4] + [1e-5] * 46
    got = [lr_at_epoch(cfg, e) for e in range(1, 51)]
    lr_ok = all(math.isclose(a, b, rel_tol=1e-12) for a, b in zip(got, want))
    sizes = [len(f.test) for f in make_folds(range(369), 5)]
    report(6, "schedule and folds", lr_ok and sizes == [73, 73, 73, 73, 77],
           f"lr ok {lr_ok}, test sizes {sizes}")


@pytest.mark.slow
def test_7_phantom_study():
    cfg = parse_config(STUDY_CONFIG)
    reports, seconds = phantom_study(24, 6, cfg)
    wt = {name: float(np.mean([r.value("WT", "dice") for r in reps]))
          for name, reps in reports.items()}
    ok = wt["TP+TC"] >= 0.80 and wt["TP+TC"] >= wt["A"] - 0.02 and seconds <= 3600
    detail = ", ".join(f"{k} {v:.3f}" for k, v in wt.items())
    report(7, "phantom study", ok, f"WT Dice {detail}; {seconds / 60:.1f} min")


def test_8_ablation_harness(tmp_path):
    (tmp_path / "tiny.cfg").write_text(
        "unet.base_width = 2\nunet.depth = 1\ntrain.epochs = 1\naugment.factor = 1\n")
    cli_main(["phantom", "--count", "5", "--dims", "24,24,20", "--out", str(tmp_path / "raw")])
    cli_main(["crossval", "--data", str(tmp_path / "raw"), "--folds", "5", "--ablate",
              "--out", str(tmp_path / "cv"), "--config", str(tmp_path / "tiny.cfg"),
              "--grid", "16,16,24"])
    rows = list(csv.DictReader(open(tmp_path / "cv" / "ablation.csv")))
    means = [r for r in rows if r["kind"] == "mean(std)"]
    pvals = [r for r in rows if r["kind"] == "p-value"]
    cols = {f"{m}_{r}" for m in ("dice", "sensitivity", "specificity", "h95")
            for r in ("ET", "WT", "TC")}
    shape_ok = ([r["row"] for r in means] == ["A", "A+S", "TP", "TP+TC"] and len(pvals) == 6
                and all(set(r) - {"row", "kind"} == cols for r in rows))
    t, p = paired_t_test([1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
    t_ok = abs(t - 3.4641) < 1e-3 and abs(p - 0.0742) < 1e-3
    report(8, "ablation harness", shape_ok and t_ok,
           f"{len(means)} configs x {len(cols)} columns + {len(pvals)} p-value rows; "
           f"t {t:.4f}, p {p:.4f}")
