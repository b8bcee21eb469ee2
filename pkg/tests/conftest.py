import numpy as np
import pytest


def random_label_volume(rng, shape=(16, 16, 16), n_boxes=6, noise=0.01):
    """Blocky random internal label map with a sprinkling of isolated voxels."""
    labels = np.zeros(shape, dtype=np.uint8)
    for _ in range(n_boxes):
        lo = [rng.integers(0, s - 1) for s in shape]
        hi = [min(s, l + rng.integers(1, max(2, s // 2))) for l, s in zip(lo, shape)]
        labels[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = rng.integers(1, 4)
    speckle = rng.random(shape) < noise
    labels[speckle] = rng.integers(0, 4, size=int(speckle.sum()))
    return labels


def random_box_mask(rng, shape=(16, 16, 16)):
    mask = np.zeros(shape, dtype=bool)
    if rng.random() < 0.2:
        return mask
    lo = [rng.integers(0, s - 1) for s in shape]
    hi = [min(s, l + rng.integers(1, s // 2 + 1)) for l, s in zip(lo, shape)]
    mask[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = True
    return mask


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
