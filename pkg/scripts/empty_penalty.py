"""H95 and Dice for an empty prediction against a nonempty truth, on the
BraTS grid and a few others."""
import numpy as np

from tumseg.metrics import confusion_metrics, empty_penalty, hausdorff95

for dims in [(240, 240, 155), (192, 192, 160), (64, 64, 64)]:
    truth = np.zeros(dims, bool)
    c = [d // 2 for d in dims]
    truth[c[0] - 5:c[0] + 5, c[1] - 5:c[1] + 5, c[2] - 5:c[2] + 5] = True
    pred = np.zeros_like(truth)
    print(f"{dims}: H95 {hausdorff95(pred, truth):.2f} mm "
          f"(diagonal {empty_penalty(dims):.2f}), Dice {confusion_metrics(pred, truth)[0]:.1f}")
