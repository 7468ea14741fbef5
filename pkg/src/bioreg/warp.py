"""Bilinear spatial transformer with pull-back sampling.

The moved image is ``moved(x) = I(x + u(x))`` with ``u`` living on the
fixed grid. Sample positions outside the image are clamped to the edge; the
derivative along a clamped direction is zero.
"""

from __future__ import annotations

import numpy as np

from .core import DisplacementField2D, ScalarImage2D, check_same_grid
from .errors import GridMismatch, InvalidInput


def _cell(coord, n):
    """Lower cell index, fractional offset and in-range flag along one axis."""
    c = np.clip(coord, 0.0, n - 1)
    lo = np.clip(np.floor(c).astype(np.intp), 0, max(n - 2, 0))
    hi = np.minimum(lo + 1, n - 1)
    frac = c - lo
    inside = (coord >= 0.0) & (coord <= n - 1)
    return lo, hi, frac, inside


def sample_bilinear(arr, x, y, with_grad=False):
    """Sample ``arr`` at fractional pixel coordinates (``x`` column, ``y`` row).

    With ``with_grad`` also returns ``(d/dx, d/dy)`` of the interpolant in
    pixel units. Works for any array with at least one row and one column.
    """
    arr = np.asarray(arr, dtype=np.float64)
    h, w = arr.shape
    x0, x1, fx, in_x = _cell(np.asarray(x, dtype=np.float64), w)
    y0, y1, fy, in_y = _cell(np.asarray(y, dtype=np.float64), h)
    a00 = arr[y0, x0]
    a01 = arr[y0, x1]
    a10 = arr[y1, x0]
    a11 = arr[y1, x1]
    top = (1.0 - fx) * a00 + fx * a01
    bottom = (1.0 - fx) * a10 + fx * a11
    val = (1.0 - fy) * top + fy * bottom
    if not with_grad:
        return val
    gx = ((1.0 - fy) * (a01 - a00) + fy * (a11 - a10)) * in_x
    gy = (bottom - top) * in_y
    return val, gx, gy


def resample(arr, u1_px, u2_px, with_grad=False):
    """Pull-back resample of a raw array by a displacement given in pixels."""
    arr = np.asarray(arr, dtype=np.float64)
    if np.shape(u1_px) != arr.shape or np.shape(u2_px) != arr.shape:
        raise GridMismatch(f"displacement shape does not match array {arr.shape}")
    rows, cols = np.indices(arr.shape, dtype=np.float64)
    return sample_bilinear(arr, cols + u1_px, rows + u2_px, with_grad=with_grad)


def _pixel_displacement(u: DisplacementField2D):
    sx, sy = u.spacing
    return u.u1 / sx, u.u2 / sy


def warp_image(img: ScalarImage2D, u: DisplacementField2D) -> ScalarImage2D:
    check_same_grid(img, u)
    return ScalarImage2D(resample(img.data, *_pixel_displacement(u)), img.spacing)


def warp_mask(mask, u: DisplacementField2D, mode: str = "soft") -> np.ndarray:
    """Warp a binary mask; ``soft`` keeps bilinear values, ``hard`` thresholds at 0.5."""
    mask = np.asarray(mask)
    if mask.shape != u.shape:
        raise GridMismatch(f"mask shape {mask.shape} does not match field {u.shape}")
    soft = resample(mask, *_pixel_displacement(u))
    if mode == "soft":
        return soft
    if mode == "hard":
        return (soft >= 0.5).astype(np.uint8)
    raise InvalidInput(f"unknown warp mode {mode!r}")


def warp_with_jacobian(arr, u: DisplacementField2D):
    """Warped values and per-pixel derivatives w.r.t. ``u1`` and ``u2`` (per mm)."""
    sx, sy = u.spacing
    val, gx, gy = resample(arr, u.u1 / sx, u.u2 / sy, with_grad=True)
    return val, np.stack([gx / sx, gy / sy])


def warp_intensity_jacobian(img: ScalarImage2D, u: DisplacementField2D) -> np.ndarray:
    """``d(I o u)(x) / du(x)`` as a ``(2, height, width)`` array."""
    check_same_grid(img, u)
    return warp_with_jacobian(img.data, u)[1]
