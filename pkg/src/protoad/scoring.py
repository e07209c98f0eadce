"""End-to-end anomaly scoring against a prototype bank.

The pipeline is: similarity tensor (one matrix product standing in for the
1x1 convolution), channel max-pooling, subtraction from one, bilinear
upsampling and Gaussian smoothing. The image-level score is the maximum of
the patch-grid anomaly map, taken before upsampling and smoothing so it does
not depend on the output resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .prototype import PrototypeBank
from .tensor import FeatureTensor, l2_normalize, resize_map


@dataclass(frozen=True)
class PostprocessConfig:
    output_size: tuple[int, int] = (224, 224)
    gaussian_sigma: float = 4.0

    def __post_init__(self):
        if self.gaussian_sigma <= 0:
            raise ValueError("gaussian_sigma must be positive")
        if min(self.output_size) < 1:
            raise ValueError("output_size must be >= 1 in both dimensions")

    @property
    def kernel_radius(self) -> int:
        # Kernel truncated at ceil(3 * sigma).
        return int(math.ceil(3.0 * self.gaussian_sigma))


@dataclass(frozen=True)
class ScoreMap:
    """Anomaly scores for one image.

    ``values`` is the upsampled, smoothed localization map; ``patch_values``
    the raw patch-grid anomaly map it was derived from. ``image_score`` is
    the exact maximum of ``patch_values``. ``zero_cells`` counts zero-flagged
    feature cells, which score a neutral 1 (no direction, treated as
    orthogonal to every prototype).
    """

    values: np.ndarray
    patch_values: np.ndarray
    image_score: float
    zero_cells: int = 0

    def __post_init__(self):
        for name, arr in (("values", self.values), ("patch_values", self.patch_values)):
            if arr.ndim != 2:
                raise ValueError(f"{name} must be a 2-d map")
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite values")
            if arr.min() < -1e-6 or arr.max() > 2.0 + 1e-6:
                raise ValueError(f"{name} outside the [0, 2] score range")
        if self.image_score != float(self.patch_values.max()):
            raise ValueError("image_score must equal max(patch_values) exactly")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def similarity_tensor(features: FeatureTensor, bank: PrototypeBank) -> np.ndarray:
    """Cosine of every patch vector against every prototype, as (H, W, K).

    Computed as a single (H*W) x C by C x K matrix product in float64.
    Zero-flagged cells yield 0 in every channel.
    """
    if features.channels != bank.channels:
        raise ValueError(
            f"feature channels {features.channels} != bank channels {bank.channels}"
        )
    flat = features.vectors().astype(np.float64)
    sims = flat @ bank.kernels.astype(np.float64).T
    return sims.reshape(features.height, features.width, bank.num_prototypes)


def channel_max_pool(sim: np.ndarray) -> np.ndarray:
    """Per-cell maximum over the K similarity channels (the normal-score map)."""
    if sim.ndim != 3 or sim.shape[2] < 1:
        raise ValueError("similarity tensor must be (H, W, K) with K >= 1")
    return sim.max(axis=2)


def anomaly_map(normal_map: np.ndarray) -> np.ndarray:
    """One minus the normal-score map; cosines in [-1, 1] map to scores in [0, 2].

    Float noise can push a cosine past 1 by ~1e-8; the result is clipped back
    into [0, 2] so a perfect prototype match scores exactly zero.
    """
    normal_map = np.asarray(normal_map)
    if normal_map.min() < -1.0 - 1e-5 or normal_map.max() > 1.0 + 1e-5:
        raise ValueError("normal scores must be cosines in [-1, 1]")
    return np.clip(1.0 - normal_map, 0.0, 2.0)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-d Gaussian, truncated at radius ceil(3 * sigma)."""
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(values: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian smoothing with mirrored (edge-inclusive) borders.

    The kernel sums to one, so constant maps pass through unchanged.
    """
    kernel = gaussian_kernel(sigma)
    radius = (len(kernel) - 1) // 2
    out = np.asarray(values, dtype=np.float64)
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="symmetric")
        acc = np.zeros_like(out)
        for offset, weight in enumerate(kernel):
            if axis == 0:
                acc += weight * padded[offset : offset + out.shape[0], :]
            else:
                acc += weight * padded[:, offset : offset + out.shape[1]]
        out = acc
    return out


def postprocess(
    patch_map: np.ndarray, cfg: PostprocessConfig, zero_cells: int = 0
) -> ScoreMap:
    """Upsample a patch-grid anomaly map to pixels and smooth it.

    Bilinear upsampling uses the same half-pixel alignment as the tensor
    module; smoothing sigma is in output-pixel units.
    """
    patch_map = np.asarray(patch_map, dtype=np.float64)
    out_h, out_w = cfg.output_size
    if out_h < patch_map.shape[0] or out_w < patch_map.shape[1]:
        raise ValueError("output_size must be at least the patch-grid size")
    up = resize_map(patch_map.astype(np.float32), out_h, out_w)
    smoothed = gaussian_blur(up, cfg.gaussian_sigma)
    return ScoreMap(
        values=smoothed.astype(np.float32),
        patch_values=patch_map.astype(np.float32),
        image_score=float(patch_map.astype(np.float32).max()),
        zero_cells=zero_cells,
    )


def image_score(m: ScoreMap) -> float:
    """Maximum patch-level anomaly score (pre-upsampling, pre-smoothing)."""
    if m.patch_values.size == 0:
        raise ValueError("empty score map")
    return float(m.patch_values.max())


def score_image(
    features: FeatureTensor, bank: PrototypeBank, cfg: PostprocessConfig | None = None
) -> ScoreMap:
    """Score one image's feature tensor against the bank.

    Normalization is applied here (it is idempotent for already-normalized
    inputs), so raw extractor dumps and pre-normalized tensors score alike.
    Zero-flagged cells get a neutral score of 1 and are counted on the map.
    """
    cfg = cfg or PostprocessConfig()
    normalized, zero_cells = l2_normalize(features)
    sims = similarity_tensor(normalized, bank)
    patch_map = anomaly_map(channel_max_pool(sims))
    return postprocess(patch_map, cfg, zero_cells=zero_cells)


def heatmap_bytes(values: np.ndarray) -> np.ndarray:
    """Quantize a score map to u8 grayscale: round(255 * s / 2), clipped."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 2.0)
    return np.round(255.0 * v / 2.0).astype(np.uint8)


def write_heatmap_png(values: np.ndarray, path) -> None:
    from PIL import Image

    Image.fromarray(heatmap_bytes(values), mode="L").save(Path(path), format="PNG")


def write_heatmap_pgm(values: np.ndarray, path) -> None:
    gray = heatmap_bytes(values)
    h, w = gray.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + gray.tobytes())


def write_heatmap(values: np.ndarray, path) -> Path:
    """Write a PNG heatmap, falling back to PGM if no PNG encoder is available."""
    path = Path(path)
    try:
        write_heatmap_png(values, path)
        return path
    except ImportError:
        fallback = path.with_suffix(".pgm")
        write_heatmap_pgm(values, fallback)
        return fallback
