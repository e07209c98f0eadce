"""Threshold-free evaluation: image/pixel AUROC and the per-region overlap score."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

logger = logging.getLogger(__name__)

EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


class MetricError(ValueError):
    """Inputs do not admit the requested metric."""


def _as_map(m) -> np.ndarray:
    values = getattr(m, "values", m)
    return np.asarray(values, dtype=np.float64)


def auroc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum statistic.

    Equals (#{pos > neg} + 0.5 * #{pos = neg}) / (P * N): ties get half
    credit, matching trapezoidal integration of the ROC curve. One sort,
    O(n log n).
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise MetricError("scores and labels must have the same length")
    if not np.isfinite(scores).all():
        raise MetricError("scores contain non-finite values")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC needs at least one positive and one negative")

    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    # Average rank within each tie group.
    boundaries = np.nonzero(np.diff(sorted_scores))[0]
    starts = np.concatenate(([0], boundaries + 1))
    ends = np.concatenate((boundaries, [len(scores) - 1]))
    group_rank = (starts + ends) / 2.0 + 1.0
    ranks = np.empty(len(scores), dtype=np.float64)
    ranks[order] = np.repeat(group_rank, ends - starts + 1)

    rank_sum = ranks[pos].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def pixel_auroc(maps, masks) -> float:
    """AUROC over the pooled pixel population of all test images."""
    if len(maps) != len(masks):
        raise MetricError("need one mask per score map")
    flat_scores, flat_labels = [], []
    for i, (m, mask) in enumerate(zip(maps, masks)):
        values = _as_map(m)
        mask = np.asarray(mask)
        if values.shape != mask.shape:
            raise MetricError(
                f"map {i} is {values.shape} but its mask is {mask.shape}"
            )
        flat_scores.append(values.ravel())
        flat_labels.append((mask.ravel() > 0).astype(np.int64))
    return auroc(np.concatenate(flat_scores), np.concatenate(flat_labels))


def _region_sorted_scores(maps, masks):
    """Ascending per-region score lists plus the pooled normal-pixel scores."""
    regions: list[np.ndarray] = []
    normal_scores = []
    for i, (m, mask) in enumerate(zip(maps, masks)):
        values = _as_map(m)
        mask = np.asarray(mask) > 0
        if values.shape != mask.shape:
            raise MetricError(
                f"map {i} is {values.shape} but its mask is {mask.shape}"
            )
        labeled, n_regions = ndimage.label(mask, structure=EIGHT_CONNECTED)
        for r in range(1, n_regions + 1):
            regions.append(np.sort(values[labeled == r]))
        normal_scores.append(values[~mask])
    normal = np.sort(np.concatenate(normal_scores)) if normal_scores else np.array([])
    return regions, normal


def _pro_curve(regions, normal, thresholds):
    """(fpr, pro) operating points for descending thresholds, binarizing at >= t.

    Starts from the empty prediction (0, 0)."""
    fprs = [0.0]
    pros = [0.0]
    n_normal = len(normal)
    for t in thresholds:
        overlaps = [
            (len(r) - np.searchsorted(r, t, side="left")) / len(r) for r in regions
        ]
        fp = n_normal - np.searchsorted(normal, t, side="left")
        fprs.append(fp / n_normal)
        pros.append(float(np.mean(overlaps)))
    return np.asarray(fprs), np.asarray(pros)


def _integrate_to_limit(fprs, pros, fpr_limit):
    """Trapezoidal area of the curve over [0, fpr_limit], normalized.

    If the sweep never reaches fpr_limit the achieved maximum is used as the
    integration bound and normalizer instead."""
    achieved = float(fprs[-1])
    if achieved < fpr_limit:
        limit = achieved
        if limit <= 0.0:
            return 0.0, achieved
    else:
        limit = fpr_limit
    cut = np.searchsorted(fprs, limit, side="left")
    xs = fprs[: cut + 1].copy()
    ys = pros[: cut + 1].copy()
    if xs[-1] > limit:
        # Interpolate the curve exactly at the integration bound.
        x0, x1 = fprs[cut - 1], fprs[cut]
        y0, y1 = pros[cut - 1], pros[cut]
        frac = (limit - x0) / (x1 - x0)
        xs[-1] = limit
        ys[-1] = y0 + frac * (y1 - y0)
    return float(np.trapezoid(ys, xs) / limit), achieved


def pro_score(
    maps, masks, fpr_limit: float = 0.3, n_thresholds: int = 200
) -> float:
    """Per-region overlap integrated over the false-positive-rate range.

    Ground-truth regions are 8-connected components of the masks; each region
    contributes its recovered fraction with equal weight regardless of size.
    The threshold sweep runs over ``n_thresholds`` score quantiles, descending,
    and the PRO-vs-FPR curve is integrated up to ``fpr_limit`` and normalized
    by it.
    """
    value, _, _ = pro_score_detail(maps, masks, fpr_limit, n_thresholds)
    return value


def pro_score_detail(
    maps, masks, fpr_limit: float = 0.3, n_thresholds: int = 200
) -> tuple[float, float, bool]:
    """Like ``pro_score`` but also returns (achieved max FPR, truncation flag)."""
    if not 0.0 < fpr_limit <= 1.0:
        raise MetricError("fpr_limit must be in (0, 1]")
    if n_thresholds < 2:
        raise MetricError("need at least two thresholds")
    if len(maps) != len(masks):
        raise MetricError("need one mask per score map")
    regions, normal = _region_sorted_scores(maps, masks)
    if not regions:
        raise MetricError("no ground-truth regions in any mask")
    if len(normal) == 0:
        raise MetricError("no normal pixels; FPR is undefined")

    pooled = np.concatenate([_as_map(m).ravel() for m in maps])
    quantiles = np.quantile(pooled, np.linspace(0.0, 1.0, n_thresholds))
    thresholds = np.unique(quantiles)[::-1]

    fprs, pros = _pro_curve(regions, normal, thresholds)
    value, achieved = _integrate_to_limit(fprs, pros, fpr_limit)
    truncated = achieved < fpr_limit
    if truncated:
        logger.warning(
            "threshold sweep reached FPR %.4f < limit %.4f; integrated over the "
            "achieved range",
            achieved,
            fpr_limit,
        )
    return value, achieved, truncated


@dataclass
class EvalReport:
    image_auroc: float
    pixel_auroc: float
    pro_score: float
    n_images: int
    n_anomalous_images: int
    n_pixels: int
    n_anomalous_pixels: int
    gaussian_sigma: float
    n_thresholds: int
    fpr_limit: float
    pro_fpr_achieved: float

    def __post_init__(self):
        for name in ("image_auroc", "pixel_auroc", "pro_score"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.n_anomalous_images > self.n_images:
            raise ValueError("anomalous image count exceeds image count")
        if self.n_anomalous_pixels > self.n_pixels:
            raise ValueError("anomalous pixel count exceeds pixel count")

    def to_text(self) -> str:
        lines = [
            f"image_auroc={self.image_auroc:.4f}",
            f"pixel_auroc={self.pixel_auroc:.4f}",
            f"pro_score={self.pro_score:.4f}",
            f"n_images={self.n_images}",
            f"n_anomalous_images={self.n_anomalous_images}",
            f"n_pixels={self.n_pixels}",
            f"n_anomalous_pixels={self.n_anomalous_pixels}",
            f"gaussian_sigma={self.gaussian_sigma}",
            f"n_thresholds={self.n_thresholds}",
            f"fpr_limit={self.fpr_limit}",
            f"pro_fpr_achieved={self.pro_fpr_achieved:.4f}",
        ]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")
