"""Parameter-free agglomerative clustering from first-neighbor relations.

Points sharing a first-nearest-neighbor relation are linked and the connected
components form the first partition; merging then recurses on renormalized
cluster means until a single cluster remains. Similarity is the cosine on
unit-norm vectors at every level, so nearest-neighbor order matches squared
Euclidean distance throughout.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import sparse

logger = logging.getLogger(__name__)

DEFAULT_MAX_CLUSTERS = 10_000
DEGENERATE_NORM = 1e-12
UNIT_NORM_TOL = 1e-4

# Row-block size for the blocked similarity matmul; results are independent
# of this value (full similarity rows are always reduced at once).
NEIGHBOR_BLOCK_ROWS = 2048


@dataclass(frozen=True)
class NeighborIndex:
    """First (nearest) neighbor index of each point, ``kappa[i] != i``."""

    kappa: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.kappa, dtype=np.int64)
        object.__setattr__(self, "kappa", k)
        n = len(k)
        if n < 2:
            raise ValueError("neighbor index needs at least two points")
        if k.min() < 0 or k.max() >= n:
            raise ValueError("neighbor index out of range")
        if np.any(k == np.arange(n)):
            raise ValueError("a point cannot be its own first neighbor")

    def __len__(self) -> int:
        return len(self.kappa)


def adjacent(nbr: NeighborIndex, i: int, j: int) -> bool:
    """Linkage predicate: i and j are adjacent iff j is i's first neighbor,
    i is j's, or they share the same first neighbor."""
    if i == j:
        return False
    k = nbr.kappa
    return bool(k[i] == j or k[j] == i or k[i] == k[j])


@dataclass(frozen=True)
class Partition:
    """One clustering level: labels, cluster count, unit-norm mean vectors.

    ``means[k]`` is the mean of the points labeled k, renormalized to unit
    length; ``degenerate[k]`` marks clusters whose raw mean underflowed (the
    first member's vector is substituted there). Construction does not
    re-validate; the builders in this module produce consistent instances.
    """

    labels: np.ndarray
    num_clusters: int
    means: np.ndarray
    sizes: np.ndarray
    degenerate: np.ndarray

    def validate(self) -> None:
        if self.num_clusters < 1:
            raise ValueError("partition must have at least one cluster")
        if self.labels.min() < 0 or self.labels.max() >= self.num_clusters:
            raise ValueError("labels out of range")
        if len(np.unique(self.labels)) != self.num_clusters:
            raise ValueError("labels must cover every cluster id")
        if int(self.sizes.sum()) != len(self.labels):
            raise ValueError("cluster sizes must sum to the point count")
        norms = np.linalg.norm(self.means.astype(np.float64), axis=1)
        bad = ~self.degenerate & (np.abs(norms - 1.0) > 1e-6)
        if np.any(bad):
            raise ValueError("non-degenerate mean rows must be unit norm")


@dataclass(frozen=True)
class PartitionHierarchy:
    """Nested partitions with strictly decreasing cluster counts."""

    partitions: tuple[Partition, ...]

    def __post_init__(self):
        object.__setattr__(self, "partitions", tuple(self.partitions))
        if len(self.partitions) == 0:
            raise ValueError("hierarchy must contain at least one partition")

    @property
    def cluster_counts(self) -> list[int]:
        return [p.num_clusters for p in self.partitions]

    def __len__(self) -> int:
        return len(self.partitions)


class SelectedPartition(NamedTuple):
    partition: Partition
    level: int
    below_threshold: bool


def _check_points(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points)
    if points.ndim != 2:
        raise ValueError("points must be a (N, C) matrix")
    if points.shape[0] < 2:
        raise ValueError("need at least two points")
    if not np.isfinite(points).all():
        raise ValueError("points contain non-finite values")
    norms = np.linalg.norm(points.astype(np.float64), axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
        raise ValueError("points must be unit-norm (within 1e-4)")
    return np.ascontiguousarray(points, dtype=np.float32)


def first_neighbors(points: np.ndarray) -> NeighborIndex:
    """Exact first neighbor of every point by cosine similarity.

    kappa[i] = argmax over j != i of dot(points[i], points[j]); ties break
    to the smallest index so results are reproducible.
    """
    points = _check_points(points)
    n = points.shape[0]
    kappa = np.empty(n, dtype=np.int64)
    for start in range(0, n, NEIGHBOR_BLOCK_ROWS):
        stop = min(start + NEIGHBOR_BLOCK_ROWS, n)
        sims = points[start:stop] @ points.T
        sims[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        kappa[start:stop] = np.argmax(sims, axis=1)
    return NeighborIndex(kappa)


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[ra] = rb


def partition_from_neighbors(nbr: NeighborIndex) -> np.ndarray:
    """Connected components of the first-neighbor linkage graph.

    Unioning every point with its first neighbor covers all three linkage
    conditions: shared-neighbor pairs end up connected through the common
    neighbor. Component ids follow order of first appearance, so point 0 is
    always in component 0.
    """
    kappa = nbr.kappa
    n = len(kappa)
    uf = _UnionFind(n)
    for i in range(n):
        uf.union(i, int(kappa[i]))
    labels = np.empty(n, dtype=np.int64)
    remap: dict[int, int] = {}
    for i in range(n):
        root = uf.find(i)
        if root not in remap:
            remap[root] = len(remap)
        labels[i] = remap[root]
    return labels


def relabel_by_first_appearance(labels: np.ndarray) -> np.ndarray:
    """Canonical form of a labeling: ids assigned in order of first appearance."""
    labels = np.asarray(labels)
    remap: dict[int, int] = {}
    out = np.empty(len(labels), dtype=np.int64)
    for i, lab in enumerate(labels):
        key = int(lab)
        if key not in remap:
            remap[key] = len(remap)
        out[i] = remap[key]
    return out


def cluster_means(points: np.ndarray, labels: np.ndarray, num_clusters: int):
    """Unit-norm cluster means (float32) plus sizes and degeneracy flags.

    A cluster whose raw mean norm is below 1e-12 (antipodal members) gets its
    first member's vector as representative and is flagged.
    """
    n = len(labels)
    indicator = sparse.csr_matrix(
        (np.ones(n, dtype=np.float64), (labels, np.arange(n))),
        shape=(num_clusters, n),
    )
    sums = indicator @ points.astype(np.float64)
    sizes = np.bincount(labels, minlength=num_clusters).astype(np.int64)
    means = sums / sizes[:, None]
    norms = np.linalg.norm(means, axis=1)
    degenerate = norms < DEGENERATE_NORM
    if np.any(degenerate):
        first_member = np.full(num_clusters, n, dtype=np.int64)
        np.minimum.at(first_member, labels, np.arange(n))
        means[degenerate] = points[first_member[degenerate]].astype(np.float64)
        norms = np.linalg.norm(means, axis=1)
    means = (means / norms[:, None]).astype(np.float32)
    return means, sizes, degenerate


def _build_partition(points: np.ndarray, labels: np.ndarray) -> Partition:
    num_clusters = int(labels.max()) + 1
    means, sizes, degenerate = cluster_means(points, labels, num_clusters)
    return Partition(
        labels=labels,
        num_clusters=num_clusters,
        means=means,
        sizes=sizes,
        degenerate=degenerate,
    )


def finch(points: np.ndarray) -> PartitionHierarchy:
    """Full clustering hierarchy of a set of unit-norm points.

    Level 0 links every point to its first neighbor; each further level
    re-runs the same step on the previous level's renormalized cluster means
    and composes the labels. Recursion ends after a single-cluster level, or
    if a level fails to reduce the cluster count (that level is dropped).
    """
    points = _check_points(points)
    labels = partition_from_neighbors(first_neighbors(points))
    levels = [_build_partition(points, labels)]
    while levels[-1].num_clusters > 1:
        current = levels[-1]
        sub = partition_from_neighbors(first_neighbors(current.means))
        if int(sub.max()) + 1 >= current.num_clusters:
            logger.warning(
                "merge level failed to reduce %d clusters; stopping",
                current.num_clusters,
            )
            break
        composed = sub[current.labels]
        levels.append(_build_partition(points, composed))
    return PartitionHierarchy(tuple(levels))


def select_partition(
    h: PartitionHierarchy, max_clusters: int = DEFAULT_MAX_CLUSTERS
) -> SelectedPartition:
    """Pick the first partition with fewer than ``max_clusters`` clusters.

    If every level is at or above the threshold, the last (coarsest) level is
    returned with ``below_threshold`` False.
    """
    if max_clusters < 1:
        raise ValueError("max_clusters must be positive")
    for level, part in enumerate(h.partitions):
        if part.num_clusters < max_clusters:
            return SelectedPartition(part, level, True)
    logger.warning(
        "no partition below %d clusters (counts %s); falling back to the last",
        max_clusters,
        h.cluster_counts,
    )
    return SelectedPartition(h.partitions[-1], len(h.partitions) - 1, False)


def kmeans_reference(points: np.ndarray, k: int, seed: int) -> Partition:
    """Plain Lloyd k-means with seeded k-means++ initialization.

    Euclidean metric on the features as given, iteration cap 100, stopping
    when no center moves more than 1e-4 (relative to the unit feature
    scale). Kept as the comparison baseline for the non-parametric
    clustering path; not used by the pipeline itself.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("points must be a (N, C) matrix")
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    rng = np.random.Generator(np.random.PCG64(seed))

    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    centers[0] = points[int(rng.integers(n))]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # All remaining mass is on already-chosen positions (duplicate
            # points); fall back to a uniform draw.
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[c] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centers[c]) ** 2, axis=1))

    labels = np.zeros(n, dtype=np.int64)
    for _ in range(100):
        dists = (
            np.sum(points**2, axis=1)[:, None]
            - 2.0 * points @ centers.T
            + np.sum(centers**2, axis=1)[None, :]
        )
        labels = np.argmin(dists, axis=1).astype(np.int64)
        new_centers = centers.copy()
        counts = np.bincount(labels, minlength=k)
        assigned_dist = np.min(dists, axis=1)
        for empty in np.nonzero(counts == 0)[0]:
            # Re-seed an empty cluster on the point farthest from its center;
            # knock that point out so two empties never grab the same one.
            farthest = int(np.argmax(assigned_dist))
            new_centers[empty] = points[farthest]
            labels[farthest] = empty
            assigned_dist[farthest] = -np.inf
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(new_centers)
        np.add.at(sums, labels, points)
        new_centers = sums / counts[:, None]
        shift = np.max(np.linalg.norm(new_centers - centers, axis=1))
        centers = new_centers
        if shift < 1e-4:
            break

    labels = relabel_by_first_appearance(labels)
    means, sizes, degenerate = cluster_means(
        np.ascontiguousarray(points, dtype=np.float32), labels, int(labels.max()) + 1
    )
    return Partition(
        labels=labels,
        num_clusters=int(labels.max()) + 1,
        means=means,
        sizes=sizes,
        degenerate=degenerate,
    )
