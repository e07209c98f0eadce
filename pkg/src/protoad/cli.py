"""Command-line interface: synth, fit, score, eval, inspect-bank."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DatasetIndex, SynthConfig, load_dataset, load_mask, synth_generate
from .finch import finch, select_partition
from .metrics import EvalReport, MetricError, auroc, pixel_auroc, pro_score_detail
from .prototype import PrototypeBank, build_bank, load_bank, save_bank
from .scoring import PostprocessConfig, ScoreMap, score_image, write_heatmap
from .tensor import FeatureTensor, l2_normalize, read_tensor, write_tensor

logger = logging.getLogger(__name__)

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


@dataclass(frozen=True)
class RunConfig:
    """One run's knobs; the defaults are the pipeline's reference settings.

    Everything here is echoed into the artifacts it shapes: bank metadata for
    fit, the report's config block for eval.
    """

    root: Path
    category: str
    max_clusters: int = 10_000
    gaussian_sigma: float = 4.0
    output_size: int = 224
    feature_levels: str = "1,2,3"
    workers: int = 1
    out: Path | None = None

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))
        if self.max_clusters < 1:
            raise ValueError("max_clusters must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def postprocess(self) -> "PostprocessConfig":
        return PostprocessConfig(
            (self.output_size, self.output_size), self.gaussian_sigma
        )


def _configure_logging() -> None:
    level = os.environ.get("PROTOAD_LOG", "info").lower()
    if level not in LOG_LEVELS:
        raise ValueError(
            f"PROTOAD_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}"
        )
    logging.basicConfig(
        level=LOG_LEVELS[level],
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def pool_train_vectors(index: DatasetIndex) -> tuple[np.ndarray, int]:
    """Normalized patch vectors of all train tensors, zero-flagged cells dropped."""
    chunks = []
    channels = None
    dropped = 0
    for path in index.train_normal:
        t = read_tensor(path)
        if channels is None:
            channels = t.channels
        elif t.channels != channels:
            raise ValueError(
                f"train tensor {path} has C={t.channels}, expected C={channels}"
            )
        normalized, n_zero = l2_normalize(t)
        vectors = normalized.vectors()
        if n_zero:
            keep = np.any(vectors != 0.0, axis=1)
            vectors = vectors[keep]
            dropped += n_zero
        chunks.append(vectors)
    return np.concatenate(chunks, axis=0), dropped


def nearest_resize_mask(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor mask resize with half-pixel centers."""
    h, w = mask.shape
    ys = np.minimum(np.floor((np.arange(out_h) + 0.5) * h / out_h).astype(int), h - 1)
    xs = np.minimum(np.floor((np.arange(out_w) + 0.5) * w / out_w).astype(int), w - 1)
    return mask[np.ix_(ys, xs)]


def fit_bank(
    index: DatasetIndex, max_clusters: int, feature_levels: str = "1,2,3"
) -> tuple[PrototypeBank, dict]:
    """Run the full fit: pool train vectors, cluster, select, build the bank."""
    features, dropped = pool_train_vectors(index)
    hierarchy = finch(features)
    selected = select_partition(hierarchy, max_clusters)
    meta = {
        "category": index.category,
        "feature_levels": feature_levels,
        "max_clusters": str(max_clusters),
        "partition_level": str(selected.level),
    }
    bank = build_bank(features, selected.partition, meta)
    info = {
        "n_vectors": features.shape[0],
        "n_zero_dropped": dropped,
        "cluster_counts": hierarchy.cluster_counts,
        "selected_level": selected.level,
        "below_threshold": selected.below_threshold,
    }
    return bank, info


def evaluate_bank(
    index: DatasetIndex,
    bank: PrototypeBank,
    cfg: PostprocessConfig,
    workers: int = 1,
    fpr_limit: float = 0.3,
    n_thresholds: int = 200,
) -> EvalReport:
    """Score every test item and compute the three metrics."""
    items = index.test_items
    if not items:
        raise MetricError("empty test set")

    def score_one(item) -> ScoreMap:
        return score_image(read_tensor(item.tensor_path), bank, cfg)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            maps = list(pool.map(score_one, items))
    else:
        maps = [score_one(item) for item in items]

    labels = [item.label for item in items]
    image_scores = [m.image_score for m in maps]
    img_auroc = auroc(image_scores, labels)

    out_h, out_w = cfg.output_size
    masks = []
    for item in items:
        if item.mask_path is None:
            masks.append(np.zeros((out_h, out_w), dtype=bool))
        else:
            mask = load_mask(item.mask_path)
            if mask.shape != (out_h, out_w):
                mask = nearest_resize_mask(mask, out_h, out_w)
            masks.append(mask)

    px_auroc = pixel_auroc(maps, masks)
    pro, pro_achieved, _ = pro_score_detail(maps, masks, fpr_limit, n_thresholds)

    return EvalReport(
        image_auroc=img_auroc,
        pixel_auroc=px_auroc,
        pro_score=pro,
        n_images=len(items),
        n_anomalous_images=int(sum(labels)),
        n_pixels=len(items) * out_h * out_w,
        n_anomalous_pixels=int(sum(int(m.sum()) for m in masks)),
        gaussian_sigma=cfg.gaussian_sigma,
        n_thresholds=n_thresholds,
        fpr_limit=fpr_limit,
        pro_fpr_achieved=pro_achieved,
    )


def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    cfg = RunConfig(root=args.root, category=args.category,
                    max_clusters=args.max_clusters, out=Path(args.out))
    index = load_dataset(cfg.root, cfg.category)
    bank, info = fit_bank(index, cfg.max_clusters, cfg.feature_levels)
    save_bank(bank, cfg.out)
    print(f"train vectors: {info['n_vectors']} (zero-flagged dropped: {info['n_zero_dropped']})")
    for level, count in enumerate(info["cluster_counts"]):
        print(f"level {level}: {count} clusters")
    print(f"selected level {info['selected_level']}"
          + ("" if info["below_threshold"] else " (no level below threshold)"))
    print(f"bank: K={bank.num_prototypes} C={bank.channels} -> {args.out}")
    print(f"fit time: {time.perf_counter() - t0:.2f}s")
    return 0


def cmd_score(args) -> int:
    bank = load_bank(args.bank)
    tensor = read_tensor(args.tensor)
    cfg = PostprocessConfig((args.out_size, args.out_size), args.sigma)
    m = score_image(tensor, bank, cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.tensor).stem
    heatmap_path = write_heatmap(m.values, out_dir / f"{stem}_heatmap.png")
    map_path = out_dir / f"{stem}_map.pft"
    write_tensor(FeatureTensor.from_array(m.values[:, :, None]), map_path)
    if m.zero_cells:
        logger.info("%d zero-flagged cells scored neutrally", m.zero_cells)
    print(f"heatmap: {heatmap_path}")
    print(f"raw map: {map_path}")
    print(f"S={m.image_score:.6f}")
    return 0


def cmd_eval(args) -> int:
    cfg = RunConfig(root=args.root, category=args.category,
                    gaussian_sigma=args.sigma, output_size=args.out_size,
                    workers=args.workers,
                    out=Path(args.out) if args.out else None)
    index = load_dataset(cfg.root, cfg.category)
    bank = load_bank(args.bank)
    report = evaluate_bank(index, bank, cfg.postprocess, workers=cfg.workers)
    if cfg.out:
        report.write(cfg.out)
    sys.stdout.write(report.to_text())
    return 0


def cmd_synth(args) -> int:
    cfg = SynthConfig(seed=args.seed)
    cat_dir = Path(args.out) / args.category
    if cat_dir.exists() and any(cat_dir.iterdir()) and not args.force:
        raise ValueError(f"{cat_dir} exists and is not empty (use --force)")
    index = synth_generate(cfg, args.out, args.category)
    n_normal = sum(1 for item in index.test_items if item.label == 0)
    n_anom = len(index.test_items) - n_normal
    print(f"category: {index.category}")
    print(f"train: {len(index.train_normal)} normal tensors")
    print(f"test: {n_normal} normal + {n_anom} anomalous tensors")
    print(f"grid: {cfg.grid[0]}x{cfg.grid[1]} C={cfg.channels} seed={cfg.seed}")
    return 0


def cmd_inspect_bank(args) -> int:
    bank = load_bank(args.bank)
    print(f"K={bank.num_prototypes}")
    print(f"C={bank.channels}")
    for key in sorted(bank.meta):
        print(f"{key}={bank.meta[key]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protoad",
        description="Prototype-bank anomaly detection over .pft feature tensors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="learn a prototype bank from the train split")
    p_fit.add_argument("--root", required=True, help="dataset root directory")
    p_fit.add_argument("--category", required=True)
    p_fit.add_argument("--max-clusters", type=int, default=10_000)
    p_fit.add_argument("--out", default="bank.ptb", help="output .ptb path")
    p_fit.set_defaults(func=cmd_fit)

    p_score = sub.add_parser("score", help="score one tensor against a bank")
    p_score.add_argument("bank", help=".ptb bank file")
    p_score.add_argument("tensor", help=".pft tensor file")
    p_score.add_argument("--out", default=".", help="output directory")
    p_score.add_argument("--sigma", type=float, default=4.0)
    p_score.add_argument("--out-size", type=int, default=224)
    p_score.set_defaults(func=cmd_score)

    p_eval = sub.add_parser("eval", help="evaluate a bank on the test split")
    p_eval.add_argument("bank", help=".ptb bank file")
    p_eval.add_argument("--root", required=True)
    p_eval.add_argument("--category", required=True)
    p_eval.add_argument("--sigma", type=float, default=4.0)
    p_eval.add_argument("--out-size", type=int, default=224)
    p_eval.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p_eval.add_argument("--out", default=None, help="report file path")
    p_eval.set_defaults(func=cmd_eval)

    p_synth = sub.add_parser("synth", help="generate the synthetic dataset")
    p_synth.add_argument("--out", required=True, help="dataset root to create")
    p_synth.add_argument("--category", default="synthetic")
    p_synth.add_argument("--seed", type=int, default=7)
    p_synth.add_argument("--force", action="store_true")
    p_synth.set_defaults(func=cmd_synth)

    p_inspect = sub.add_parser("inspect-bank", help="print a bank's header and meta")
    p_inspect.add_argument("bank", help=".ptb bank file")
    p_inspect.set_defaults(func=cmd_inspect_bank)

    return parser


def main(argv=None) -> int:
    try:
        _configure_logging()
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
