"""Segmentation conformance, field quality and significance testing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import DisplacementField2D, ScalarImage2D, SegMaskSet, check_same_grid
from .elasticity import displacement_gradient
from .errors import DegenerateSample, EmptyMask, GridMismatch, InvalidInput, LabelMismatch
from .warp import warp_mask


def _pair(a, b):
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise GridMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def dice(a, b) -> float:
    a, b = _pair(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def jaccard(a, b) -> float:
    a, b = _pair(a, b)
    union = int((a | b).sum())
    if union == 0:
        return 1.0
    return int((a & b).sum()) / union


def boundary_points(mask, spacing=(1.0, 1.0)) -> np.ndarray:
    """Physical ``(x1, x2)`` positions of foreground pixels touching background.

    4-neighbourhood; pixels on the image border always count as boundary.
    Returns an ``(n, 2)`` array.
    """
    m = np.asarray(mask).astype(bool)
    if not m.any():
        raise EmptyMask("boundary of an empty mask")
    p = np.pad(m, 1, constant_values=False)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    rows, cols = np.nonzero(m & ~interior)
    sx, sy = spacing
    return np.column_stack([cols * sx, rows * sy]).astype(np.float64)


def _directed(pa, pb):
    """Distance from each point of ``pa`` to its nearest point in ``pb``."""
    d2 = ((pa[:, None, :] - pb[None, :, :]) ** 2).sum(axis=-1)
    return np.sqrt(d2.min(axis=1))


def hausdorff(a, b, spacing=(1.0, 1.0)) -> float:
    a, b = _pair(a, b)
    pa, pb = boundary_points(a, spacing), boundary_points(b, spacing)
    return float(max(_directed(pa, pb).max(), _directed(pb, pa).max()))


def asd(a, b, spacing=(1.0, 1.0)) -> float:
    a, b = _pair(a, b)
    pa, pb = boundary_points(a, spacing), boundary_points(b, spacing)
    dab, dba = _directed(pa, pb), _directed(pb, pa)
    return float((dab.sum() + dba.sum()) / (dab.size + dba.size))


def jacobian_det_map(u: DisplacementField2D) -> ScalarImage2D:
    """Per-pixel ``det(I + grad u)`` using the strain difference stencils."""
    d11, d12, d21, d22 = displacement_gradient(u)
    return ScalarImage2D((1.0 + d11) * (1.0 + d22) - d12 * d21, u.spacing)


def jacobian_metric(u: DisplacementField2D) -> tuple[float, float]:
    """Mean and standard deviation of ``|det J - 1|`` over all pixels."""
    dev = np.abs(jacobian_det_map(u).data - 1.0)
    return float(dev.mean()), float(dev.std())


def _betacf(a, b, x, max_iter=300, tol=3e-16):
    # modified Lentz evaluation of the incomplete beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function ``I_x(a, b)``."""
    if not 0.0 <= x <= 1.0:
        raise InvalidInput(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    lbeta = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    front = math.exp(lbeta + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, dof: float) -> float:
    return betainc_regularized(0.5 * dof, 0.5, dof / (dof + t * t))


def paired_ttest(x, y) -> tuple[float, int, float]:
    """Paired t-test of ``x`` against ``y``; returns ``(t, dof, two-sided p)``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise InvalidInput("paired samples need equal 1D lengths >= 2")
    d = x - y
    n = d.size
    sd = d.std(ddof=1)
    if sd == 0.0:
        raise DegenerateSample("differences have zero variance")
    t = float(d.mean() / (sd / math.sqrt(n)))
    return t, n - 1, t_two_sided_p(t, n - 1)


@dataclass
class StructureMetrics:
    dice: float
    jaccard: float
    hd_mm: float
    asd_mm: float


@dataclass
class MetricReport:
    structures: dict[str, StructureMetrics] = field(default_factory=dict)
    jac_mean: float = 0.0
    jac_std: float = 0.0

    def jac_text(self) -> str:
        return f"{self.jac_mean:.4f} ± {self.jac_std:.4f}"

    def to_dict(self) -> dict:
        return {
            "structures": {k: vars(v) for k, v in self.structures.items()},
            "jac_metric": {"mean": self.jac_mean, "std": self.jac_std, "text": self.jac_text()},
        }


def evaluate(u: DisplacementField2D, s_m: SegMaskSet, s_f: SegMaskSet) -> MetricReport:
    """Warp the moving masks (hard) with ``u`` and score them against ``s_f``."""
    if s_m.labels != s_f.labels:
        raise LabelMismatch(f"moving labels {s_m.labels} != fixed labels {s_f.labels}")
    check_same_grid(s_m, s_f, u)
    report = MetricReport()
    for (label, m), (_, f) in zip(s_m.structures, s_f.structures):
        w = warp_mask(m, u, "hard")
        report.structures[label] = StructureMetrics(
            dice(w, f), jaccard(w, f), hausdorff(w, f, u.spacing), asd(w, f, u.spacing)
        )
    report.jac_mean, report.jac_std = jacobian_metric(u)
    return report
