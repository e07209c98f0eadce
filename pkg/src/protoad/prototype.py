"""Prototype bank construction and the ``.ptb`` on-disk format.

The bank holds the kernel rows of the scoring stage's 1x1 convolution: one
unit-norm representative vector per cluster of normal patch features. Means
of unit vectors are not themselves unit-norm, so every kernel is renormalized
after averaging; that keeps the convolution output an exact cosine.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .finch import Partition, cluster_means

PTB_MAGIC = b"PROTOBK1"
PTB_VERSION = 1

# Pairwise cosine above this marks numerically identical kernels (duplicate
# training patches), not genuinely distinct prototypes.
DUPLICATE_COSINE = 1.0 - 1e-9

_DEDUP_BLOCK = 1024


class BankFormatError(ValueError):
    """A ``.ptb`` file does not follow the documented layout."""


@dataclass(frozen=True)
class PrototypeBank:
    """K unit-norm prototype vectors plus free-form metadata.

    ``kernels`` is a (K, C) float32 matrix; rows are the 1x1-convolution
    kernels. ``meta`` carries provenance such as the category name, feature
    level selection, the cluster-count threshold used, and the source
    partition level.
    """

    kernels: np.ndarray
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        k = self.kernels
        if not isinstance(k, np.ndarray) or k.ndim != 2 or k.shape[0] < 1:
            raise ValueError("kernels must be a non-empty (K, C) matrix")
        if k.dtype != np.float32:
            object.__setattr__(self, "kernels", np.ascontiguousarray(k, dtype=np.float32))
            k = self.kernels
        elif not k.flags.c_contiguous:
            object.__setattr__(self, "kernels", np.ascontiguousarray(k))
            k = self.kernels
        if not np.isfinite(k).all():
            raise ValueError("kernels contain non-finite values")
        norms = np.linalg.norm(k.astype(np.float64), axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("every kernel row must be unit norm (within 1e-6)")

    @property
    def num_prototypes(self) -> int:
        return self.kernels.shape[0]

    @property
    def channels(self) -> int:
        return self.kernels.shape[1]


def _dedup_rows(kernels: np.ndarray) -> np.ndarray:
    """Drop rows whose cosine to an earlier row exceeds the duplicate bound."""
    n = kernels.shape[0]
    keep = np.ones(n, dtype=bool)
    for start in range(0, n, _DEDUP_BLOCK):
        stop = min(start + _DEDUP_BLOCK, n)
        sims = kernels[start:stop].astype(np.float64) @ kernels.astype(np.float64).T
        for row in range(start, stop):
            if np.any(sims[row - start, :row] > DUPLICATE_COSINE):
                keep[row] = False
    return kernels[keep]


def build_bank(
    features: np.ndarray, part: Partition, meta: dict[str, str] | None = None
) -> PrototypeBank:
    """Build the bank from unit-norm features and a partition over them.

    Each kernel is the renormalized mean of the features sharing a label;
    degenerate clusters fall back to their first member. Numerically
    identical kernels are deduplicated, reducing K.
    """
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 2:
        raise ValueError("features must be a (N, C) matrix")
    if len(part.labels) != features.shape[0]:
        raise ValueError(
            f"partition covers {len(part.labels)} points but "
            f"{features.shape[0]} features were given"
        )
    means, _, _ = cluster_means(features, part.labels, part.num_clusters)
    kernels = _dedup_rows(means)
    return PrototypeBank(kernels=kernels, meta=dict(meta or {}))


def save_bank(bank: PrototypeBank, path) -> None:
    """Write a bank to ``path`` in the ``.ptb`` format (see ``load_bank``)."""
    lines = []
    for key, value in bank.meta.items():
        if not key or "=" in key:
            raise ValueError(f"invalid meta key: {key!r}")
        if "\n" in key or "\n" in str(value):
            raise ValueError("meta keys and values must be single-line")
        lines.append(f"{key}={value}")
    meta_blob = "\n".join(lines).encode("utf-8")
    header = PTB_MAGIC + struct.pack(
        "<IIII",
        PTB_VERSION,
        bank.num_prototypes,
        bank.channels,
        len(meta_blob),
    )
    payload = np.ascontiguousarray(bank.kernels, dtype="<f4").tobytes()
    Path(path).write_bytes(header + meta_blob + payload)


def load_bank(path) -> PrototypeBank:
    """Read a ``.ptb`` file.

    Layout: 8-byte magic ``PROTOBK1``; u32 LE version (must be 1); u32 K;
    u32 C; u32 meta byte length M; M bytes of UTF-8 ``key=value`` lines;
    then K*C f32 LE kernel values, row-major.
    """
    raw = Path(path).read_bytes()
    if len(raw) < len(PTB_MAGIC) or raw[: len(PTB_MAGIC)] != PTB_MAGIC:
        raise BankFormatError("bad magic, not a .ptb file")
    if len(raw) < 24:
        raise BankFormatError("truncated header")
    version, k, c, meta_len = struct.unpack("<IIII", raw[8:24])
    if version != PTB_VERSION:
        raise BankFormatError(f"unsupported version {version}")
    if k < 1 or c < 1:
        raise BankFormatError(f"invalid dimensions K={k} C={c}")
    meta_end = 24 + meta_len
    expected = meta_end + k * c * 4
    if len(raw) < expected:
        raise BankFormatError(
            f"truncated file: {len(raw)} bytes, header declares {expected}"
        )
    if len(raw) > expected:
        raise BankFormatError(f"{len(raw) - expected} trailing bytes after payload")
    meta: dict[str, str] = {}
    meta_text = raw[24:meta_end].decode("utf-8")
    for line in meta_text.splitlines():
        if not line:
            continue
        if "=" not in line:
            raise BankFormatError(f"malformed meta line: {line!r}")
        key, _, value = line.partition("=")
        meta[key] = value
    kernels = np.frombuffer(raw[meta_end:expected], dtype="<f4").reshape(k, c)
    return PrototypeBank(kernels=np.ascontiguousarray(kernels, dtype=np.float32), meta=meta)
