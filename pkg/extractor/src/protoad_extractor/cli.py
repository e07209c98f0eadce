"""The ``extract`` command."""

from __future__ import annotations

import argparse
import logging
import sys

from .extract import ExtractConfig, ExtractError, extract_tree


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="extract",
        description="Dump Wide-ResNet50 patch features from an image tree to .pft tensors",
    )
    parser.add_argument("--in", dest="image_root", required=True, help="image tree root")
    parser.add_argument("--out", dest="output_root", required=True, help=".pft tree root")
    parser.add_argument("--category", required=True)
    parser.add_argument("--stages", default="1,2,3", help="comma-separated subset of 1,2,3")
    parser.add_argument("--batch", type=int, default=16)
    parser.add_argument("--resize", type=int, default=256)
    parser.add_argument("--crop", type=int, default=224)
    parser.add_argument("--weights", default="pretrained",
                        help="'pretrained', 'random', or a local .pth path")
    parser.add_argument("--seed", type=int, default=0, help="seed for --weights random")
    parser.add_argument("--mask-size", choices=("grid", "full"), default="grid")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s",
                        stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        stages = tuple(int(s) for s in args.stages.split(",") if s)
        cfg = ExtractConfig(
            image_root=args.image_root,
            output_root=args.output_root,
            category=args.category,
            stages=stages,
            batch_size=args.batch,
            resize=args.resize,
            crop=args.crop,
            weights=args.weights,
            seed=args.seed,
            mask_size=args.mask_size,
        )
        stats = extract_tree(cfg)
    except (ExtractError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"tensors: {stats['tensors']}")
    print(f"masks: {stats['masks']}")
    print(f"grid: {stats['grid']}x{stats['grid']} C={stats['channels']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
