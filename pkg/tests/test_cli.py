import csv

import numpy as np
import pytest

from tumseg.cli import main
from tumseg.dataset import list_subjects, read_labels
from tumseg.unet import load_params

TINY = "unet.base_width = 2\nunet.depth = 1\ntrain.epochs = 1\naugment.factor = 1\n"
GRID = "16,16,24"


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.cfg").write_text(TINY)
    main(["phantom", "--count", "5", "--dims", "24,24,20", "--seed", "0",
          "--out", str(root / "raw")])
    return root


def test_phantom_and_preprocess(workspace):
    assert list_subjects(workspace / "raw") == [f"phantom_{i:03d}" for i in range(5)]
    main(["preprocess", "--in", str(workspace / "raw"), "--out", str(workspace / "pre"),
          "--grid", GRID])
    sid = "phantom_000"
    assert (workspace / "pre" / sid / f"{sid}_crop.txt").exists()
    labels, _ = read_labels(workspace / "pre" / sid / f"{sid}_seg.nii.gz")
    assert labels.shape == (16, 16, 24)


def test_train_predict_evaluate(workspace, capsys):
    models = workspace / "models"
    for role in ("axial", "sagittal", "coronal", "tc"):
        main(["train", "--data", str(workspace / "raw"), "--plane", role,
              "--config", str(workspace / "tiny.cfg"), "--out", str(models / f"{role}.ckpt"),
              "--grid", GRID])
        assert load_params(models / f"{role}.ckpt").config.depth == 1
        assert (models / f"{role}.csv").exists()
    pred = workspace / "pred"
    main(["predict", "--data", str(workspace / "raw"), "--models", str(models),
          "--out", str(pred), "--save-probs", "--grid", GRID])
    labels, _ = read_labels(pred / "phantom_000.nii.gz")
    assert labels.shape == (24, 24, 20)
    assert (pred / "phantom_000_probs.bin").exists()
    main(["evaluate", "--pred", str(pred), "--truth", str(workspace / "raw"),
          "--out", str(workspace / "metrics.csv")])
    rows = list(csv.DictReader(open(workspace / "metrics.csv")))
    assert len(rows) == 5 * 3
    assert (workspace / "metrics_aggregate.csv").exists()
    assert "WT: dice mean" in capsys.readouterr().out


def test_overlay(workspace):
    sid = "phantom_001"
    out = workspace / "ov.png"
    main(["overlay", "--image", str(workspace / "raw" / sid / f"{sid}_t1ce.nii.gz"),
          "--labels", str(workspace / "raw" / sid / f"{sid}_seg.nii.gz"),
          "--slice", "10", "--out", str(out)])
    assert out.read_bytes()[:4] == b"\x89PNG"


def test_crossval_ablate(workspace):
    out = workspace / "cv"
    main(["crossval", "--data", str(workspace / "raw"), "--folds", "5", "--ablate",
          "--out", str(out), "--config", str(workspace / "tiny.cfg"), "--grid", GRID])
    rows = list(csv.DictReader(open(out / "ablation.csv")))
    assert [r["row"] for r in rows[:4]] == ["A", "A+S", "TP", "TP+TC"]
    assert sum(r["kind"] == "p-value" for r in rows) == 6
    assert len(rows[0]) == 2 + 4 * 3
    for tag in ("A", "AS", "TP", "TPTC"):
        assert len(list(csv.DictReader(open(out / f"metrics_{tag}.csv")))) == 5 * 3
    assert (out / "fold4" / "tc.ckpt").exists()
    assert len((out / "folds.txt").read_text().splitlines()) == 15


def test_bad_subcommand():
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_predict_votes_over_folds(workspace):
    cv = workspace / "cv"
    if not (cv / "fold0").exists():
        pytest.skip("needs the crossval output")
    out = workspace / "voted"
    main(["predict", "--data", str(workspace / "raw"), "--models", str(cv), "--subset", "TP",
          "--out", str(out), "--grid", GRID])
    labels, _ = read_labels(out / "phantom_002.nii.gz")
    assert set(np.unique(labels)) <= {0, 1, 2, 3}
