"""Independent reference implementations used to check the fast paths.

Everything here is deliberately naive (quadratic loops, dense sweeps) and
shares no code with the package.
"""

import numpy as np


def first_neighbor_edges(points):
    """All linkage edges from the O(N^2) cosine table, all three conditions."""
    n = points.shape[0]
    sims = points.astype(np.float64) @ points.astype(np.float64).T
    np.fill_diagonal(sims, -np.inf)
    kappa = [int(np.argmax(sims[i])) for i in range(n)]
    edges = set()
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if kappa[i] == j or kappa[j] == i or kappa[i] == kappa[j]:
                edges.add((min(i, j), max(i, j)))
    return kappa, edges


def components_from_edges(n, edges):
    """Union-find over an explicit edge set, labels by first appearance."""
    parent = list(range(n))

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    labels = np.empty(n, dtype=np.int64)
    remap = {}
    for i in range(n):
        r = find(i)
        if r not in remap:
            remap[r] = len(remap)
        labels[i] = remap[r]
    return labels


def finch_level0_oracle(points):
    """Level-0 labels by explicit edge enumeration + union-find."""
    _, edges = first_neighbor_edges(points)
    return components_from_edges(points.shape[0], edges)


def canonical_labels(labels):
    remap = {}
    out = np.empty(len(labels), dtype=np.int64)
    for i, lab in enumerate(labels):
        key = int(lab)
        if key not in remap:
            remap[key] = len(remap)
        out[i] = remap[key]
    return out


def auroc_pairwise(scores, labels):
    """O(n^2) pair counting: wins + half credit for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def nearest_prototype_scores(features, kernels):
    """Per-cell exhaustive search: 1 - max_k cos(x_ij, m_k), float64 loops."""
    h, w, c = features.shape
    out = np.empty((h, w), dtype=np.float64)
    for i in range(h):
        for j in range(w):
            x = features[i, j].astype(np.float64)
            best = -np.inf
            for k in range(kernels.shape[0]):
                best = max(best, float(np.dot(x, kernels[k].astype(np.float64))))
            out[i, j] = 1.0 - best
    return out


def bilinear_upsample_oracle(values, out_h, out_w):
    """Scalar-loop bilinear resize, half-pixel centers, clamped borders."""
    h, w = values.shape
    out = np.empty((out_h, out_w), dtype=np.float64)
    for oy in range(out_h):
        sy = min(max((oy + 0.5) * h / out_h - 0.5, 0.0), h - 1)
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for ox in range(out_w):
            sx = min(max((ox + 0.5) * w / out_w - 0.5, 0.0), w - 1)
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            out[oy, ox] = (
                values[y0, x0] * (1 - fy) * (1 - fx)
                + values[y0, x1] * (1 - fy) * fx
                + values[y1, x0] * fy * (1 - fx)
                + values[y1, x1] * fy * fx
            )
    return out


def gaussian_conv2d_oracle(values, sigma):
    """Direct O(n^2 r^2) 2-d convolution with a truncated Gaussian, mirrored borders."""
    radius = int(np.ceil(3.0 * sigma))
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (ax / sigma) ** 2)
    kernel = np.outer(kernel, kernel)
    kernel /= kernel.sum()
    padded = np.pad(values.astype(np.float64), radius, mode="symmetric")
    h, w = values.shape
    out = np.empty((h, w), dtype=np.float64)
    for i in range(h):
        for j in range(w):
            window = padded[i : i + 2 * radius + 1, j : j + 2 * radius + 1]
            out[i, j] = float(np.sum(window * kernel))
    return out


def _regions_8connected(mask):
    """Connected components of a boolean mask by BFS, 8-connectivity."""
    h, w = mask.shape
    seen = np.zeros((h, w), dtype=bool)
    regions = []
    for si in range(h):
        for sj in range(w):
            if not mask[si, sj] or seen[si, sj]:
                continue
            stack = [(si, sj)]
            seen[si, sj] = True
            cells = []
            while stack:
                i, j = stack.pop()
                cells.append((i, j))
                for di in (-1, 0, 1):
                    for dj in (-1, 0, 1):
                        ni, nj = i + di, j + dj
                        if 0 <= ni < h and 0 <= nj < w and mask[ni, nj] and not seen[ni, nj]:
                            seen[ni, nj] = True
                            stack.append((ni, nj))
            regions.append(cells)
    return regions


def pro_dense_oracle(maps, masks, fpr_limit=0.3):
    """Dense-threshold PRO sweep: every distinct score value, descending.

    Same conventions as the package: binarize at >= t, start the curve at the
    empty prediction (0, 0), trapezoid up to fpr_limit with interpolation at
    the bound.
    """
    maps = [np.asarray(getattr(m, "values", m), dtype=np.float64) for m in maps]
    masks = [np.asarray(m) > 0 for m in masks]
    regions = []
    for m, mask in zip(maps, masks):
        for cells in _regions_8connected(mask):
            regions.append(np.array([m[i, j] for i, j in cells]))
    normal = np.concatenate([m[~mask] for m, mask in zip(maps, masks)])
    n_normal = len(normal)
    thresholds = np.unique(np.concatenate([m.ravel() for m in maps]))[::-1]

    fprs = [0.0]
    pros = [0.0]
    for t in thresholds:
        overlaps = [np.mean(r >= t) for r in regions]
        fprs.append(float(np.sum(normal >= t)) / n_normal)
        pros.append(float(np.mean(overlaps)))

    area = 0.0
    for a in range(1, len(fprs)):
        x0, x1 = fprs[a - 1], fprs[a]
        y0, y1 = pros[a - 1], pros[a]
        if x1 <= fpr_limit:
            area += (x1 - x0) * (y0 + y1) / 2.0
        else:
            if x0 < fpr_limit:
                frac = (fpr_limit - x0) / (x1 - x0)
                y_cut = y0 + frac * (y1 - y0)
                area += (fpr_limit - x0) * (y0 + y_cut) / 2.0
            break
    achieved = min(fprs[-1], fpr_limit)
    return area / achieved if achieved > 0 else 0.0
