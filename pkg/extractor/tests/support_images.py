"""Deterministic image-tree builders for the extractor tests."""

from pathlib import Path

import numpy as np
from PIL import Image

FIXTURES = Path(__file__).parent / "fixtures"


def checker_image(seed, size, squares=4):
    """Deterministic RGB test image: noisy checkerboard plus a gradient."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    board = (((yy // (size // squares)) + (xx // (size // squares))) % 2) * 120
    grad = (xx / max(size - 1, 1) * 80).astype(np.float64)
    noise = rng.uniform(0, 55, size=(size, size, 3))
    base = board[:, :, None] + grad[:, :, None] + noise
    return Image.fromarray(np.clip(base, 0, 255).astype(np.uint8), mode="RGB")


def rectangle_mask_image(size, top, left, height, width):
    mask = np.zeros((size, size), dtype=np.uint8)
    mask[top : top + height, left : left + width] = 255
    return Image.fromarray(mask, mode="L")


def build_image_tree(root: Path, category="widget", size=64, n_train=3,
                     n_good=2, n_defect=2):
    """MVTec-style PNG tree with rectangle defect masks."""
    train = root / category / "train" / "good"
    test_good = root / category / "test" / "good"
    test_bad = root / category / "test" / "scratch"
    gt = root / category / "ground_truth" / "scratch"
    for d in (train, test_good, test_bad, gt):
        d.mkdir(parents=True, exist_ok=True)
    for i in range(n_train):
        checker_image(100 + i, size).save(train / f"{i:03d}.png")
    for i in range(n_good):
        checker_image(200 + i, size).save(test_good / f"{i:03d}.png")
    for i in range(n_defect):
        img = checker_image(300 + i, size)
        arr = np.asarray(img).copy()
        arr[10 : 10 + 12, 20 : 20 + 16] = (250, 30, 30)
        Image.fromarray(arr).save(test_bad / f"{i:03d}.png")
        rectangle_mask_image(size, 10, 20, 12, 16).save(gt / f"{i:03d}_mask.png")
    return root / category
