"""Analytic contracting-annulus phantom with exact ground-truth displacement.

The moving frame (end-diastole) is a smooth radial profile: a bright blood
pool inside ``r_inner``, a dark myocardial ring up to ``r_outer`` and a grey
background. The fixed frame (end-systole) is the same profile contracted by
the factor ``1 - contraction`` about the centre. The ground-truth field maps
every fixed-grid point to its end-diastolic pre-image and is tapered to
zero in the far field, where the profile is flat anyway, so the fixed frame
is rendered exactly as the moving profile pulled back through that field.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import DisplacementField2D, ScalarImage2D, SegMaskSet, check_same_grid, pixel_coordinates
from .errors import EmptyMask, GridMismatch, InvalidSpec


@dataclass(frozen=True)
class PhantomSpec:
    size: tuple[int, int] = (96, 96)  # (width, height)
    spacing: tuple[float, float] = (1.0, 1.0)
    center: Optional[tuple[float, float]] = None  # mm; grid centre when None
    r_inner: float = 14.0
    r_outer: float = 22.0
    contraction: float = 0.05
    edge_sigma: float = 1.5
    pool_level: float = 1.0
    myo_level: float = 0.1
    background_level: float = 0.4
    margin: float = 5.0
    feather: float = 10.0
    noise: float = 0.0
    seed: Optional[int] = None

    def __post_init__(self):
        w, h = self.size
        sx, sy = self.spacing
        half = 0.5 * min((w - 1) * sx, (h - 1) * sy)
        if not (0 < self.r_inner < self.r_outer < half):
            raise InvalidSpec(f"need 0 < r_inner < r_outer < {half:g} mm")
        if not (0 <= self.contraction <= 0.3):
            raise InvalidSpec("contraction must lie in [0, 0.3]")
        if not (self.edge_sigma > 0 and self.feather > 0 and self.margin >= 0 and self.noise >= 0):
            raise InvalidSpec("edge_sigma and feather must be positive, margin and noise non-negative")
        if self.r_outer + self.margin + self.feather > half * np.sqrt(2):
            raise InvalidSpec("feathered region does not fit in the grid")
        if self.noise > 0 and self.seed is None:
            raise InvalidSpec("noise requires an explicit seed")

    def centre(self) -> tuple[float, float]:
        if self.center is not None:
            return tuple(float(c) for c in self.center)
        w, h = self.size
        sx, sy = self.spacing
        return 0.5 * (w - 1) * sx, 0.5 * (h - 1) * sy


@dataclass(frozen=True)
class PhantomPair:
    I_m: ScalarImage2D
    I_f: ScalarImage2D
    s_m: SegMaskSet
    s_f: SegMaskSet
    u_gt: DisplacementField2D
    roi: np.ndarray


def _step(t):
    return 0.5 * (1.0 + np.tanh(t))


def radial_profile(rho, spec: PhantomSpec):
    """Intensity as a function of end-diastolic radius (mm)."""
    s = spec.edge_sigma
    pool = _step((spec.r_inner - rho) / s)
    inside = _step((spec.r_outer - rho) / s)
    return (
        spec.background_level
        + (spec.myo_level - spec.background_level) * inside
        + (spec.pool_level - spec.myo_level) * pool
    )


def _taper(r, spec: PhantomSpec):
    """1 up to ``r_outer + margin``, raised-cosine fall to 0 over ``feather``."""
    t = np.clip((r - spec.r_outer - spec.margin) / spec.feather, 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * t))


def ground_truth_radial(r, spec: PhantomSpec):
    """Radial displacement (mm, outward positive) at fixed-frame radius ``r``."""
    k = spec.contraction / (1.0 - spec.contraction)
    return k * r * _taper(r, spec)


def _masks(rho, spec, scale, spacing):
    cavity = rho < spec.r_inner * scale
    ring = (rho >= spec.r_inner * scale) & (rho < spec.r_outer * scale)
    return SegMaskSet((("myocardium", ring.astype(np.uint8)), ("cavity", cavity.astype(np.uint8))), spacing)


def make_pair(spec: PhantomSpec = PhantomSpec()) -> PhantomPair:
    w, h = spec.size
    x1, x2 = pixel_coordinates((h, w), spec.spacing)
    c1, c2 = spec.centre()
    d1, d2 = x1 - c1, x2 - c2
    r = np.hypot(d1, d2)
    with np.errstate(invalid="ignore", divide="ignore"):
        n1 = np.where(r > 0, d1 / r, 0.0)
        n2 = np.where(r > 0, d2 / r, 0.0)

    radial = ground_truth_radial(r, spec)
    u_gt = DisplacementField2D(radial * n1, radial * n2, spec.spacing)

    moving = radial_profile(r, spec)
    fixed = radial_profile(r + radial, spec)
    if spec.noise > 0:
        rng = np.random.default_rng(spec.seed)
        moving = moving + rng.normal(0.0, spec.noise, moving.shape)
        fixed = fixed + rng.normal(0.0, spec.noise, fixed.shape)

    s_m = _masks(r, spec, 1.0, spec.spacing)
    s_f = _masks(r, spec, 1.0 - spec.contraction, spec.spacing)
    roi = s_f["myocardium"].copy()
    roi.setflags(write=False)
    return PhantomPair(
        ScalarImage2D(moving, spec.spacing),
        ScalarImage2D(fixed, spec.spacing),
        s_m,
        s_f,
        u_gt,
        roi,
    )


def endpoint_error(u: DisplacementField2D, u_gt: DisplacementField2D, roi) -> tuple[float, float]:
    """Mean and max Euclidean displacement error (mm) over ``roi``."""
    check_same_grid(u, u_gt)
    roi = np.asarray(roi).astype(bool)
    if roi.shape != u.shape:
        raise GridMismatch(f"roi shape {roi.shape} does not match field {u.shape}")
    if not roi.any():
        raise EmptyMask("endpoint error over an empty roi")
    err = np.hypot(u.u1 - u_gt.u1, u.u2 - u_gt.u2)[roi]
    return float(err.mean()), float(err.max())
