"""Prototype-bank anomaly detection and localization over patch feature tensors."""

from .data import DatasetIndex, SynthConfig, load_dataset, load_mask, synth_generate
from .finch import (
    NeighborIndex,
    Partition,
    PartitionHierarchy,
    finch,
    first_neighbors,
    kmeans_reference,
    partition_from_neighbors,
    select_partition,
)
from .metrics import EvalReport, auroc, pixel_auroc, pro_score
from .prototype import PrototypeBank, build_bank, load_bank, save_bank
from .scoring import (
    PostprocessConfig,
    ScoreMap,
    anomaly_map,
    channel_max_pool,
    image_score,
    postprocess,
    score_image,
    similarity_tensor,
)
from .tensor import (
    FeatureTensor,
    LevelSet,
    aggregate_levels,
    bilinear_resize,
    l2_normalize,
    read_tensor,
    write_tensor,
)

__version__ = "0.1.0"

__all__ = [
    "DatasetIndex",
    "EvalReport",
    "FeatureTensor",
    "LevelSet",
    "NeighborIndex",
    "Partition",
    "PartitionHierarchy",
    "PostprocessConfig",
    "PrototypeBank",
    "ScoreMap",
    "SynthConfig",
    "aggregate_levels",
    "anomaly_map",
    "auroc",
    "bilinear_resize",
    "build_bank",
    "channel_max_pool",
    "finch",
    "first_neighbors",
    "image_score",
    "kmeans_reference",
    "l2_normalize",
    "load_bank",
    "load_dataset",
    "load_mask",
    "partition_from_neighbors",
    "pixel_auroc",
    "postprocess",
    "pro_score",
    "read_tensor",
    "save_bank",
    "score_image",
    "select_partition",
    "similarity_tensor",
    "synth_generate",
    "write_tensor",
]
