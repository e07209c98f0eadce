"""Dense patch-feature grids and the ``.pft`` on-disk tensor format.

A feature tensor is an H x W grid of C-dimensional patch vectors stored as a
C-contiguous float32 array of shape (H, W, C), so each patch vector is a
contiguous slice (this is what the matrix-product scoring kernel wants).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PFT_MAGIC = b"PROTOFT1"
PFT_DTYPE_F32 = 1
PFT_HEADER_SIZE = 24


class TensorFormatError(ValueError):
    """A ``.pft`` file does not follow the documented layout."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TensorTruncationError(TensorFormatError):
    """A ``.pft`` file ends before the header-declared payload does."""


@dataclass(frozen=True)
class FeatureTensor:
    """An H x W grid of C-dimensional patch feature vectors.

    ``data`` is float32 with shape (H, W, C), row-major and channel-minor:
    the value at (i, j, c) sits at flat index ((i * W) + j) * C + c. All
    values must be finite and every dimension must be >= 1.
    """

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if not isinstance(d, np.ndarray) or d.ndim != 3:
            raise ValueError("feature tensor data must be a 3-d array (H, W, C)")
        if d.dtype != np.float32:
            raise ValueError(f"feature tensor dtype must be float32, got {d.dtype}")
        if min(d.shape) < 1:
            raise ValueError(f"feature tensor dimensions must be >= 1, got {d.shape}")
        if not d.flags.c_contiguous:
            object.__setattr__(self, "data", np.ascontiguousarray(d))
        if not np.isfinite(d).all():
            raise ValueError("feature tensor contains non-finite values")

    @classmethod
    def from_array(cls, array) -> "FeatureTensor":
        """Build a tensor from any array-like, casting to float32."""
        return cls(np.ascontiguousarray(array, dtype=np.float32))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def vectors(self) -> np.ndarray:
        """The (H*W, C) view of the patch vectors, row-major."""
        return self.data.reshape(-1, self.data.shape[2])


@dataclass(frozen=True)
class LevelSet:
    """Ordered per-stage feature tensors for one image.

    The first level fixes the target resolution; deeper levels must not be
    larger in either spatial dimension.
    """

    levels: tuple[FeatureTensor, ...]

    def __post_init__(self):
        if len(self.levels) == 0:
            raise ValueError("level set must contain at least one tensor")
        object.__setattr__(self, "levels", tuple(self.levels))
        h0, w0 = self.levels[0].height, self.levels[0].width
        for i, lvl in enumerate(self.levels[1:], start=1):
            if lvl.height > h0 or lvl.width > w0:
                raise ValueError(
                    f"level {i} is {lvl.height}x{lvl.width}, larger than the "
                    f"first level's {h0}x{w0}"
                )

    @property
    def target_resolution(self) -> tuple[int, int]:
        return self.levels[0].height, self.levels[0].width


def l2_normalize(t: FeatureTensor, epsilon: float = 1e-12) -> tuple[FeatureTensor, int]:
    """Scale every patch vector to unit Euclidean norm.

    Vectors whose norm is below ``epsilon`` carry no usable direction; they
    are written out as exact zeros and counted, so callers can exclude them
    from clustering (and scoring treats them as cosine 0).

    Returns the normalized tensor and the number of zero-flagged cells.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    norms = np.linalg.norm(t.data.astype(np.float64), axis=2, keepdims=True)
    flagged = norms[..., 0] < epsilon
    safe = np.where(flagged[..., None], 1.0, norms)
    out = (t.data / safe).astype(np.float32)
    out[flagged] = 0.0
    return FeatureTensor(out), int(flagged.sum())


def zero_cell_mask(t: FeatureTensor) -> np.ndarray:
    """Boolean (H, W) mask of cells that are exactly the zero vector."""
    return ~np.any(t.data != 0.0, axis=2)


def _resize_axes(h: int, w: int, out_h: int, out_w: int):
    # Half-pixel-center alignment: src = (dst + 0.5) * scale - 0.5, clamped.
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    return y0, y1, ys - y0, x0, x1, xs - x0


def bilinear_resize(t: FeatureTensor, out_h: int, out_w: int) -> FeatureTensor:
    """Resize the patch grid with bilinear interpolation.

    Uses half-pixel-center alignment with border clamping, the convention of
    common image-resize kernels; a same-size resize is bit-identical and a
    constant field stays exactly constant.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be >= 1 in both dimensions")
    h, w, _ = t.data.shape
    if (out_h, out_w) == (h, w):
        return FeatureTensor(t.data.copy())
    y0, y1, fy, x0, x1, fx = _resize_axes(h, w, out_h, out_w)
    data = t.data.astype(np.float64)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    out = (
        data[np.ix_(y0, x0)] * (1.0 - fy) * (1.0 - fx)
        + data[np.ix_(y0, x1)] * (1.0 - fy) * fx
        + data[np.ix_(y1, x0)] * fy * (1.0 - fx)
        + data[np.ix_(y1, x1)] * fy * fx
    )
    return FeatureTensor(out.astype(np.float32))


def resize_map(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize for a single-channel float map (same alignment rule)."""
    t = FeatureTensor.from_array(values[:, :, None])
    return bilinear_resize(t, out_h, out_w).data[:, :, 0]


def aggregate_levels(ls: LevelSet) -> FeatureTensor:
    """Resize every level to the first level's resolution and concatenate channels.

    The output channel count is the sum of the per-level channel counts, with
    the blocks kept in level order.
    """
    th, tw = ls.target_resolution
    parts = [bilinear_resize(lvl, th, tw).data for lvl in ls.levels]
    return FeatureTensor(np.concatenate(parts, axis=2))


def write_tensor(t: FeatureTensor, path) -> None:
    """Write a tensor to ``path`` in the ``.pft`` format (see ``read_tensor``)."""
    h, w, c = t.data.shape
    header = PFT_MAGIC + struct.pack("<IIII", h, w, c, PFT_DTYPE_F32)
    payload = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_tensor(path) -> FeatureTensor:
    """Read a ``.pft`` file.

    Layout: 8-byte magic ``PROTOFT1``; u32 little-endian H, W, C, dtype code
    (1 = f32 LE, the only accepted value); then H*W*C*4 payload bytes in
    row-major channel-minor order. No padding, no trailing bytes.
    """
    raw = Path(path).read_bytes()
    if len(raw) < len(PFT_MAGIC):
        raise TensorTruncationError("file too short for magic", offset=len(raw))
    if raw[: len(PFT_MAGIC)] != PFT_MAGIC:
        raise TensorFormatError("bad magic, not a .pft file", offset=0)
    if len(raw) < PFT_HEADER_SIZE:
        raise TensorTruncationError("incomplete header", offset=len(raw))
    h, w, c, dtype_code = struct.unpack("<IIII", raw[8:PFT_HEADER_SIZE])
    for value, name, offset in ((h, "H", 8), (w, "W", 12), (c, "C", 16)):
        if value < 1:
            raise TensorFormatError(f"dimension {name} must be >= 1, got {value}", offset=offset)
    if dtype_code != PFT_DTYPE_F32:
        raise TensorFormatError(f"unsupported dtype code {dtype_code}", offset=20)
    expected = h * w * c * 4
    payload = raw[PFT_HEADER_SIZE:]
    if len(payload) < expected:
        raise TensorTruncationError(
            f"payload has {len(payload)} bytes, header declares {expected}",
            offset=PFT_HEADER_SIZE + len(payload),
        )
    if len(payload) > expected:
        raise TensorFormatError(
            f"{len(payload) - expected} trailing bytes after payload",
            offset=PFT_HEADER_SIZE + expected,
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w, c)
    return FeatureTensor(np.ascontiguousarray(data, dtype=np.float32))


def read_tensor_header(path) -> tuple[int, int, int]:
    """Read only (H, W, C) from a ``.pft`` header, cheaply."""
    with open(path, "rb") as f:
        raw = f.read(PFT_HEADER_SIZE)
    if len(raw) < len(PFT_MAGIC):
        raise TensorTruncationError("file too short for magic", offset=len(raw))
    if raw[: len(PFT_MAGIC)] != PFT_MAGIC:
        raise TensorFormatError("bad magic, not a .pft file", offset=0)
    if len(raw) < PFT_HEADER_SIZE:
        raise TensorTruncationError("incomplete header", offset=len(raw))
    h, w, c, dtype_code = struct.unpack("<IIII", raw[8:PFT_HEADER_SIZE])
    if dtype_code != PFT_DTYPE_F32:
        raise TensorFormatError(f"unsupported dtype code {dtype_code}", offset=20)
    return h, w, c
