"""One-shot patch-feature extraction from an image tree to ``.pft`` tensors.

Images go through the fixed preprocessing (warp to a square resize size,
center crop, ImageNet channel statistics), a frozen Wide-ResNet50 forward
pass captures the selected stage outputs, deeper stages are bilinearly
upsampled to the first selected stage's grid and concatenated channel-wise,
and the result is dumped raw (no L2 normalization; the scoring side owns
that). Ground-truth masks are carried through the same geometry.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torchvision.models import wide_resnet50_2

logger = logging.getLogger(__name__)

PFT_MAGIC = b"PROTOFT1"
PFT_DTYPE_F32 = 1

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}

STAGE_CHANNELS = {1: 256, 2: 512, 3: 1024}


class ExtractError(ValueError):
    pass


@dataclass(frozen=True)
class ExtractConfig:
    image_root: Path
    output_root: Path
    category: str
    stages: tuple[int, ...] = (1, 2, 3)
    batch_size: int = 16
    resize: int = 256
    crop: int = 224
    weights: str = "pretrained"  # "pretrained", "random", or a .pth path
    seed: int = 0
    mask_size: str = "grid"  # "grid" or "full"
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD

    def __post_init__(self):
        object.__setattr__(self, "image_root", Path(self.image_root))
        object.__setattr__(self, "output_root", Path(self.output_root))
        stages = tuple(sorted(set(self.stages)))
        if not stages or any(s not in (1, 2, 3) for s in stages):
            raise ExtractError("stages must be a non-empty subset of {1, 2, 3}")
        object.__setattr__(self, "stages", stages)
        if self.batch_size < 1:
            raise ExtractError("batch size must be >= 1")
        if self.crop > self.resize:
            raise ExtractError("crop size cannot exceed resize size")
        if self.mask_size not in ("grid", "full"):
            raise ExtractError("mask_size must be 'grid' or 'full'")

    @property
    def channels(self) -> int:
        return sum(STAGE_CHANNELS[s] for s in self.stages)


def write_pft(array: np.ndarray, path: Path) -> None:
    """Write an (H, W, C) float32 array in the .pft layout."""
    h, w, c = array.shape
    header = PFT_MAGIC + struct.pack("<IIII", h, w, c, PFT_DTYPE_F32)
    path.write_bytes(header + np.ascontiguousarray(array, dtype="<f4").tobytes())


def load_backbone(cfg: ExtractConfig) -> torch.nn.Module:
    """The frozen feature extractor, initialized per ``cfg.weights``.

    "pretrained" pulls the published ImageNet weights (a network failure
    surfaces as ExtractError); "random" draws a seeded initialization, which
    keeps the full pipeline runnable and deterministic without downloads;
    anything else is treated as a local state-dict path.
    """
    if cfg.weights == "pretrained":
        try:
            from torchvision.models import Wide_ResNet50_2_Weights

            model = wide_resnet50_2(weights=Wide_ResNet50_2_Weights.IMAGENET1K_V1)
        except Exception as exc:
            raise ExtractError(f"could not obtain pretrained weights: {exc}") from exc
    elif cfg.weights == "random":
        torch.manual_seed(cfg.seed)
        model = wide_resnet50_2(weights=None)
    else:
        model = wide_resnet50_2(weights=None)
        try:
            state = torch.load(cfg.weights, map_location="cpu", weights_only=True)
        except Exception as exc:
            raise ExtractError(f"could not load weights from {cfg.weights}: {exc}") from exc
        model.load_state_dict(state)
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def preprocess_image(path: Path, cfg: ExtractConfig) -> torch.Tensor:
    """Warp to resize x resize, center-crop, scale to [0,1], normalize channels."""
    try:
        with Image.open(path) as img:
            img = img.convert("RGB").resize((cfg.resize, cfg.resize), Image.BILINEAR)
    except OSError as exc:
        raise ExtractError(f"unreadable image {path}: {exc}") from exc
    left = (cfg.resize - cfg.crop) // 2
    img = img.crop((left, left, left + cfg.crop, left + cfg.crop))
    array = np.asarray(img, dtype=np.float32) / 255.0
    array = (array - np.asarray(cfg.mean, dtype=np.float32)) / np.asarray(
        cfg.std, dtype=np.float32
    )
    return torch.from_numpy(array.transpose(2, 0, 1).copy())


def preprocess_mask(path: Path, cfg: ExtractConfig, grid: int) -> np.ndarray:
    """Apply the image geometry to a mask, then binarize at half intensity."""
    try:
        with Image.open(path) as img:
            img = img.convert("L").resize((cfg.resize, cfg.resize), Image.NEAREST)
    except OSError as exc:
        raise ExtractError(f"unreadable mask {path}: {exc}") from exc
    left = (cfg.resize - cfg.crop) // 2
    img = img.crop((left, left, left + cfg.crop, left + cfg.crop))
    if cfg.mask_size == "grid":
        img = img.resize((grid, grid), Image.NEAREST)
    return (np.asarray(img, dtype=np.float32) > 127.5).astype(np.float32)


def stage_features(model: torch.nn.Module, batch: torch.Tensor,
                   stages: tuple[int, ...]) -> np.ndarray:
    """Selected stage maps, upsampled to the first selected stage's grid and
    concatenated stage-ascending, as (B, H, W, C)."""
    with torch.no_grad():
        x = model.maxpool(model.relu(model.bn1(model.conv1(batch))))
        outputs = {}
        x = model.layer1(x)
        outputs[1] = x
        if max(stages) >= 2:
            x = model.layer2(x)
            outputs[2] = x
        if max(stages) >= 3:
            x = model.layer3(x)
            outputs[3] = x
        target = outputs[stages[0]].shape[-2:]
        parts = []
        for s in stages:
            t = outputs[s]
            if t.shape[-2:] != target:
                t = torch.nn.functional.interpolate(
                    t, size=target, mode="bilinear", align_corners=False
                )
            parts.append(t)
        stacked = torch.cat(parts, dim=1)
    return stacked.permute(0, 2, 3, 1).contiguous().numpy().astype(np.float32)


def extract_image(path: Path, model: torch.nn.Module, cfg: ExtractConfig) -> np.ndarray:
    """Convenience single-image path used by tests and the golden fixture."""
    batch = preprocess_image(path, cfg).unsqueeze(0)
    return stage_features(model, batch, cfg.stages)[0]


def _image_files(directory: Path):
    return sorted(
        p for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )


def _find_mask(gt_dir: Path, stem: str) -> Path | None:
    for candidate in (f"{stem}_mask", stem):
        for suffix in IMAGE_SUFFIXES:
            p = gt_dir / f"{candidate}{suffix}"
            if p.is_file():
                return p
    return None


def extract_tree(cfg: ExtractConfig) -> dict:
    """Mirror one category of an image tree to ``.pft`` tensors.

    Walks ``train/good``, ``test/<type>`` and ``ground_truth/<type>`` under
    the category, batching the forward passes. Returns per-split counts.
    """
    src_cat = cfg.image_root / cfg.category
    if not src_cat.is_dir():
        raise ExtractError(f"no category directory {src_cat}")
    model = load_backbone(cfg)

    jobs: list[tuple[Path, Path]] = []
    train_dir = src_cat / "train" / "good"
    if train_dir.is_dir():
        for p in _image_files(train_dir):
            jobs.append((p, cfg.output_root / cfg.category / "train" / "good" / f"{p.stem}.pft"))
    test_dir = src_cat / "test"
    if test_dir.is_dir():
        for defect_dir in sorted(d for d in test_dir.iterdir() if d.is_dir()):
            for p in _image_files(defect_dir):
                jobs.append(
                    (p, cfg.output_root / cfg.category / "test" / defect_dir.name / f"{p.stem}.pft")
                )
    if not jobs:
        raise ExtractError(f"no images under {src_cat}")

    grid = None
    n_tensors = 0
    for start in range(0, len(jobs), cfg.batch_size):
        chunk = jobs[start : start + cfg.batch_size]
        batch = torch.stack([preprocess_image(p, cfg) for p, _ in chunk])
        features = stage_features(model, batch, cfg.stages)
        grid = features.shape[1]
        for (src, dst), feats in zip(chunk, features):
            dst.parent.mkdir(parents=True, exist_ok=True)
            write_pft(feats, dst)
            n_tensors += 1
        logger.info("extracted %d/%d tensors", min(start + cfg.batch_size, len(jobs)), len(jobs))

    n_masks = 0
    gt_root = src_cat / "ground_truth"
    if gt_root.is_dir():
        for defect_dir in sorted(d for d in gt_root.iterdir() if d.is_dir()):
            test_src = src_cat / "test" / defect_dir.name
            if not test_src.is_dir():
                continue
            for image_path in _image_files(test_src):
                mask_path = _find_mask(defect_dir, image_path.stem)
                if mask_path is None:
                    raise ExtractError(
                        f"test image {image_path} has no mask under {defect_dir}"
                    )
                mask = preprocess_mask(mask_path, cfg, grid)
                out = (
                    cfg.output_root / cfg.category / "ground_truth" / defect_dir.name
                    / f"{image_path.stem}_mask.pft"
                )
                out.parent.mkdir(parents=True, exist_ok=True)
                write_pft(mask[:, :, None], out)
                n_masks += 1

    meta_path = cfg.output_root / cfg.category / "extract_meta.txt"
    meta_path.parent.mkdir(parents=True, exist_ok=True)
    meta_path.write_text(
        "\n".join(
            [
                f"backbone=wide_resnet50_2",
                f"weights={cfg.weights}",
                f"stages={','.join(str(s) for s in cfg.stages)}",
                f"resize={cfg.resize}",
                f"crop={cfg.crop}",
                f"grid={grid}",
                f"channels={cfg.channels}",
                f"mask_size={cfg.mask_size}",
                f"mean={','.join(str(v) for v in cfg.mean)}",
                f"std={','.join(str(v) for v in cfg.std)}",
            ]
        )
        + "\n",
        encoding="utf-8",
    )
    return {"tensors": n_tensors, "masks": n_masks, "grid": grid, "channels": cfg.channels}
