"""Dataset trees of feature tensors plus a seeded synthetic generator.

The on-disk layout mirrors the usual industrial-inspection convention, with
``.pft`` tensors in place of images::

    <root>/<category>/train/good/*.pft
    <root>/<category>/test/<defect_type>/*.pft      (good/ = normal items)
    <root>/<category>/ground_truth/<defect_type>/<stem>_mask.pft   (C=1, 0/1)

The synthetic generator works directly in feature space: normal samples are
smooth random fields of unit vectors jittered around a small set of latent
directions, anomalous samples rotate a rectangle of cells away from all of
them. That exercises the whole clustering/scoring path with no backbone in
the loop.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scoring import gaussian_blur
from .tensor import FeatureTensor, read_tensor, read_tensor_header, write_tensor

logger = logging.getLogger(__name__)

N_LATENT_DIRECTIONS = 8
JITTER_SIGMA = 0.1
SYNTH_DEFECT_TYPE = "defect"


class DatasetError(ValueError):
    """A dataset tree is missing pieces or malformed."""


@dataclass(frozen=True)
class TestItem:
    tensor_path: Path
    label: int  # 0 = normal, 1 = anomalous
    mask_path: Path | None

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")
        if self.label == 1 and self.mask_path is None:
            raise ValueError("anomalous items must carry a mask")


@dataclass(frozen=True)
class DatasetIndex:
    category: str
    train_normal: tuple[Path, ...]
    test_items: tuple[TestItem, ...]
    image_size: int

    def __post_init__(self):
        object.__setattr__(self, "train_normal", tuple(self.train_normal))
        object.__setattr__(self, "test_items", tuple(self.test_items))
        if len(self.train_normal) == 0:
            raise DatasetError(f"category {self.category!r} has an empty train set")


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 7
    n_train: int = 40
    n_test_normal: int = 20
    n_test_anomalous: int = 20
    grid: tuple[int, int] = (32, 32)
    channels: int = 64
    smoothness: float = 2.0
    defect_size_range: tuple[int, int] = (4, 12)
    defect_shift_deg: float = 45.0

    def __post_init__(self):
        if self.n_train < 1:
            raise ValueError("n_train must be >= 1")
        if self.n_test_normal < 0 or self.n_test_anomalous < 0:
            raise ValueError("test counts must be >= 0")
        if min(self.grid) < 1 or self.channels < 1:
            raise ValueError("grid and channel sizes must be >= 1")
        lo, hi = self.defect_size_range
        if not 1 <= lo <= hi:
            raise ValueError("defect size range must satisfy 1 <= lo <= hi")
        if hi > min(self.grid):
            raise ValueError("defect size must fit inside the grid")
        if self.smoothness <= 0:
            raise ValueError("smoothness must be positive")
        if self.defect_shift_deg < 0:
            raise ValueError("defect shift must be >= 0 degrees")


def load_mask(path) -> np.ndarray:
    """Load a C=1 mask tensor as a binary (H, W) array."""
    t = read_tensor(path)
    if t.channels != 1:
        raise DatasetError(f"mask {path} must have C=1, got C={t.channels}")
    values = t.data[:, :, 0]
    if not np.all((values == 0.0) | (values == 1.0)):
        raise DatasetError(f"mask {path} is not binary")
    return values > 0


def load_dataset(root_dir, category: str) -> DatasetIndex:
    """Index one category of a dataset tree, validating its structure.

    Tensor payloads and masks are read lazily; only headers are touched here.
    Anomalous test items without a mask, an empty train set, or inconsistent
    mask sizes are rejected.
    """
    root = Path(root_dir)
    cat_dir = root / category
    if not cat_dir.is_dir():
        raise DatasetError(f"no category directory {cat_dir}")

    train_dir = cat_dir / "train" / "good"
    train = tuple(sorted(train_dir.glob("*.pft")))
    if not train:
        raise DatasetError(f"empty train set under {train_dir}")

    test_dir = cat_dir / "test"
    if not test_dir.is_dir():
        raise DatasetError(f"no test directory {test_dir}")
    items: list[TestItem] = []
    for defect_dir in sorted(p for p in test_dir.iterdir() if p.is_dir()):
        defect_type = defect_dir.name
        for tensor_path in sorted(defect_dir.glob("*.pft")):
            if defect_type == "good":
                items.append(TestItem(tensor_path, 0, None))
                continue
            mask_path = (
                cat_dir / "ground_truth" / defect_type / f"{tensor_path.stem}_mask.pft"
            )
            if not mask_path.is_file():
                raise DatasetError(
                    f"anomalous item {tensor_path} has no mask at {mask_path}"
                )
            items.append(TestItem(tensor_path, 1, mask_path))

    mask_sizes = set()
    for item in items:
        if item.mask_path is not None:
            h, w, c = read_tensor_header(item.mask_path)
            if c != 1:
                raise DatasetError(f"mask {item.mask_path} must have C=1")
            mask_sizes.add((h, w))
    if len(mask_sizes) > 1:
        raise DatasetError(f"inconsistent mask sizes: {sorted(mask_sizes)}")
    if mask_sizes:
        image_size = next(iter(mask_sizes))[0]
    else:
        image_size = read_tensor_header(train[0])[0]

    return DatasetIndex(
        category=category,
        train_normal=train,
        test_items=tuple(items),
        image_size=image_size,
    )


def _latent_directions(rng: np.random.Generator, channels: int) -> np.ndarray:
    a = rng.standard_normal((channels, N_LATENT_DIRECTIONS))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))  # canonical sign, independent of LAPACK choices
    return q.T


def _normal_cells(
    rng: np.random.Generator, cfg: SynthConfig, directions: np.ndarray
) -> np.ndarray:
    h, w = cfg.grid
    fields = rng.standard_normal((N_LATENT_DIRECTIONS, h, w))
    smoothed = np.stack([gaussian_blur(f, cfg.smoothness) for f in fields])
    idx = np.argmax(smoothed, axis=0)
    cells = directions[idx] + rng.standard_normal((h, w, cfg.channels)) * JITTER_SIGMA
    cells /= np.linalg.norm(cells, axis=2, keepdims=True)
    return cells


def _inject_defect(
    rng: np.random.Generator,
    cells: np.ndarray,
    cfg: SynthConfig,
    directions: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    h, w = cfg.grid
    lo, hi = cfg.defect_size_range
    dh = int(rng.integers(lo, hi + 1))
    dw = int(rng.integers(lo, hi + 1))
    top = int(rng.integers(0, h - dh + 1))
    left = int(rng.integers(0, w - dw + 1))
    mask = np.zeros((h, w), dtype=np.float32)
    mask[top : top + dh, left : left + dw] = 1.0
    if cfg.defect_shift_deg == 0.0:
        return cells, mask

    angle = np.deg2rad(cfg.defect_shift_deg)
    # Rotation target at least the shift angle away from every latent
    # direction, so defect cells cannot land near another prototype.
    while True:
        v = rng.standard_normal(cfg.channels)
        v /= np.linalg.norm(v)
        if np.max(directions @ v) <= np.cos(angle):
            break
    block = cells[top : top + dh, left : left + dw].reshape(-1, cfg.channels)
    block = block.astype(np.float64)
    tangent = v[None, :] - (block @ v)[:, None] * block
    tangent /= np.maximum(np.linalg.norm(tangent, axis=1, keepdims=True), 1e-12)
    rotated = np.cos(angle) * block + np.sin(angle) * tangent
    rotated /= np.linalg.norm(rotated, axis=1, keepdims=True)
    out = cells.copy()
    out[top : top + dh, left : left + dw] = rotated.reshape(dh, dw, cfg.channels)
    return out, mask


def synth_generate(cfg: SynthConfig, out_dir, category: str = "synthetic") -> DatasetIndex:
    """Write a deterministic synthetic dataset tree and return its index.

    Every item draws from its own child of the seed sequence, so generation
    is order-independent and two runs with the same config are bit-identical.
    With a zero defect shift, anomalous tensors equal their (freshly drawn)
    normal sources and only the masks distinguish them.
    """
    root = Path(out_dir)
    ss = np.random.SeedSequence(cfg.seed)
    n_items = cfg.n_train + cfg.n_test_normal + cfg.n_test_anomalous
    children = ss.spawn(1 + n_items)
    directions = _latent_directions(
        np.random.Generator(np.random.PCG64(children[0])), cfg.channels
    )

    cat_dir = root / category
    train_dir = cat_dir / "train" / "good"
    test_good_dir = cat_dir / "test" / "good"
    test_bad_dir = cat_dir / "test" / SYNTH_DEFECT_TYPE
    gt_dir = cat_dir / "ground_truth" / SYNTH_DEFECT_TYPE
    for d in (train_dir, test_good_dir, test_bad_dir, gt_dir):
        d.mkdir(parents=True, exist_ok=True)

    next_child = 1

    def item_rng() -> np.random.Generator:
        nonlocal next_child
        rng = np.random.Generator(np.random.PCG64(children[next_child]))
        next_child += 1
        return rng

    for i in range(cfg.n_train):
        cells = _normal_cells(item_rng(), cfg, directions)
        write_tensor(FeatureTensor.from_array(cells), train_dir / f"{i:03d}.pft")
    for i in range(cfg.n_test_normal):
        cells = _normal_cells(item_rng(), cfg, directions)
        write_tensor(FeatureTensor.from_array(cells), test_good_dir / f"{i:03d}.pft")
    for i in range(cfg.n_test_anomalous):
        rng = item_rng()
        source = _normal_cells(rng, cfg, directions)
        defected, mask = _inject_defect(rng, source, cfg, directions)
        write_tensor(FeatureTensor.from_array(defected), test_bad_dir / f"{i:03d}.pft")
        write_tensor(
            FeatureTensor.from_array(mask[:, :, None]), gt_dir / f"{i:03d}_mask.pft"
        )

    logger.info(
        "synthetic dataset at %s: %d train, %d test normal, %d test anomalous",
        cat_dir,
        cfg.n_train,
        cfg.n_test_normal,
        cfg.n_test_anomalous,
    )
    return load_dataset(root, category)
