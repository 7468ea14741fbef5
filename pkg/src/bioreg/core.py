"""Raster and field value types plus preprocessing.

Grid convention, used by every module: the pixel at row ``i`` and column
``j`` sits at physical position ``(x1, x2) = (j * sx, i * sy)`` in mm.
``x1`` runs horizontally (along columns, array axis 1) and ``x2`` runs
vertically (along rows, array axis 0). Arrays are stored row-major with
shape ``(height, width)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import CropTooLarge, EmptyMask, GridMismatch, InvalidInput

Spacing = tuple[float, float]


def _as_spacing(spacing) -> Spacing:
    sx, sy = (float(s) for s in spacing)
    if not (sx > 0 and sy > 0 and np.isfinite(sx) and np.isfinite(sy)):
        raise InvalidInput(f"spacing must be positive and finite, got {spacing!r}")
    return sx, sy


def _frozen(a, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _check_shape(shape):
    if len(shape) != 2:
        raise InvalidInput(f"expected a 2D raster, got shape {shape}")
    h, w = shape
    if h < 2 or w < 2:
        raise InvalidInput(f"width and height must be >= 2, got {w}x{h}")


@dataclass(frozen=True)
class ScalarImage2D:
    """Real-valued raster with physical pixel spacing ``(sx, sy)`` in mm."""

    data: np.ndarray
    spacing: Spacing = (1.0, 1.0)

    def __post_init__(self):
        data = _frozen(self.data)
        _check_shape(data.shape)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _as_spacing(self.spacing))

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class DisplacementField2D:
    """Dense two-channel displacement in mm; ``u1`` along x1, ``u2`` along x2."""

    u1: np.ndarray
    u2: np.ndarray
    spacing: Spacing = (1.0, 1.0)

    def __post_init__(self):
        u1, u2 = _frozen(self.u1), _frozen(self.u2)
        _check_shape(u1.shape)
        if u1.shape != u2.shape:
            raise InvalidInput(f"channel shapes differ: {u1.shape} vs {u2.shape}")
        if not (np.all(np.isfinite(u1)) and np.all(np.isfinite(u2))):
            raise InvalidInput("displacement field contains non-finite entries")
        object.__setattr__(self, "u1", u1)
        object.__setattr__(self, "u2", u2)
        object.__setattr__(self, "spacing", _as_spacing(self.spacing))

    @classmethod
    def zeros(cls, shape, spacing=(1.0, 1.0)) -> "DisplacementField2D":
        return cls(np.zeros(shape), np.zeros(shape), spacing)

    @classmethod
    def from_array(cls, arr, spacing=(1.0, 1.0)) -> "DisplacementField2D":
        """Build from a ``(2, height, width)`` array."""
        arr = np.asarray(arr, dtype=np.float64)
        return cls(arr[0], arr[1], spacing)

    def to_array(self) -> np.ndarray:
        return np.stack([self.u1, self.u2])

    @property
    def shape(self) -> tuple[int, int]:
        return self.u1.shape

    @property
    def width(self) -> int:
        return self.u1.shape[1]

    @property
    def height(self) -> int:
        return self.u1.shape[0]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u1, self.u2)

    def __add__(self, other: "DisplacementField2D") -> "DisplacementField2D":
        check_same_grid(self, other)
        return DisplacementField2D(self.u1 + other.u1, self.u2 + other.u2, self.spacing)

    def __mul__(self, s: float) -> "DisplacementField2D":
        return DisplacementField2D(self.u1 * s, self.u2 * s, self.spacing)

    __rmul__ = __mul__


@dataclass(frozen=True)
class SegMaskSet:
    """Labelled binary masks sharing one grid."""

    structures: tuple[tuple[str, np.ndarray], ...]
    spacing: Spacing = (1.0, 1.0)
    shape: tuple[int, int] = field(init=False)

    def __post_init__(self):
        items = []
        shape = None
        for label, mask in self.structures:
            m = np.asarray(mask)
            if not np.all((m == 0) | (m == 1)):
                raise InvalidInput(f"mask {label!r} has entries outside {{0, 1}}")
            m = _frozen(m, np.uint8)
            _check_shape(m.shape)
            if shape is None:
                shape = m.shape
            elif m.shape != shape:
                raise GridMismatch(f"mask {label!r} has shape {m.shape}, expected {shape}")
            items.append((str(label), m))
        if not items:
            raise InvalidInput("a mask set needs at least one structure")
        labels = [lab for lab, _ in items]
        if len(set(labels)) != len(labels):
            raise InvalidInput(f"duplicate labels in {labels}")
        object.__setattr__(self, "structures", tuple(items))
        object.__setattr__(self, "spacing", _as_spacing(self.spacing))
        object.__setattr__(self, "shape", shape)

    @property
    def labels(self) -> list[str]:
        return [lab for lab, _ in self.structures]

    def __getitem__(self, label: str) -> np.ndarray:
        for lab, m in self.structures:
            if lab == label:
                return m
        raise KeyError(label)

    def __len__(self):
        return len(self.structures)


def check_same_grid(*objs):
    """Raise GridMismatch unless all objects share shape and spacing."""
    ref = objs[0]
    for o in objs[1:]:
        if o.shape != ref.shape:
            raise GridMismatch(f"grid shapes differ: {ref.shape} vs {o.shape}")
        if not np.allclose(o.spacing, ref.spacing, rtol=1e-12, atol=0):
            raise GridMismatch(f"spacings differ: {ref.spacing} vs {o.spacing}")


def pixel_coordinates(shape, spacing=(1.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """Physical ``(x1, x2)`` coordinate arrays for every pixel of a grid."""
    h, w = shape
    sx, sy = spacing
    x2, x1 = np.meshgrid(np.arange(h) * sy, np.arange(w) * sx, indexing="ij")
    return x1, x2


def normalize_minmax(img: ScalarImage2D) -> ScalarImage2D:
    lo, hi = img.data.min(), img.data.max()
    if hi == lo:
        return ScalarImage2D(np.zeros(img.shape), img.spacing)
    return ScalarImage2D((img.data - lo) / (hi - lo), img.spacing)


def centroid(mask, spacing=(1.0, 1.0)) -> tuple[float, float]:
    """Mean physical position ``(x1, x2)`` of the foreground pixels."""
    rows, cols = np.nonzero(np.asarray(mask))
    if rows.size == 0:
        raise EmptyMask("centroid of an empty mask")
    sx, sy = spacing
    return float(cols.mean() * sx), float(rows.mean() * sy)


def crop_slices(shape, spacing, center, size) -> tuple[slice, slice]:
    """Row/column slices of a ``size=(w, h)`` window centred near ``center``.

    The window is shifted (never padded) to stay inside the image.
    """
    h, w = shape
    cw, ch = (int(s) for s in size)
    if cw > w or ch > h or cw < 1 or ch < 1:
        raise CropTooLarge(f"crop {cw}x{ch} does not fit image {w}x{h}")
    sx, sy = spacing
    ci = int(np.floor(center[1] / sy + 0.5))
    cj = int(np.floor(center[0] / sx + 0.5))
    i0 = min(max(ci - ch // 2, 0), h - ch)
    j0 = min(max(cj - cw // 2, 0), w - cw)
    return slice(i0, i0 + ch), slice(j0, j0 + cw)


def crop_centered(img: ScalarImage2D, center: Sequence[float], size: Iterable[int]) -> ScalarImage2D:
    rs, cs = crop_slices(img.shape, img.spacing, center, tuple(size))
    return ScalarImage2D(img.data[rs, cs], img.spacing)


def crop_masks(masks: SegMaskSet, center, size) -> SegMaskSet:
    rs, cs = crop_slices(masks.shape, masks.spacing, center, tuple(size))
    return SegMaskSet(tuple((lab, m[rs, cs]) for lab, m in masks.structures), masks.spacing)
