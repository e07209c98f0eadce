"""Wide-ResNet50 patch-feature extraction to .pft tensor trees."""

from .extract import (
    ExtractConfig,
    ExtractError,
    extract_image,
    extract_tree,
    load_backbone,
    preprocess_image,
    preprocess_mask,
    write_pft,
)

__version__ = "0.1.0"

__all__ = [
    "ExtractConfig",
    "ExtractError",
    "extract_image",
    "extract_tree",
    "load_backbone",
    "preprocess_image",
    "preprocess_mask",
    "write_pft",
]
