"""Linear-elastic strain energy prior and the L2 displacement-gradient baseline.

Spatial derivatives use central differences in the interior and first-order
one-sided differences on the first/last row or column, scaled by the
physical spacing. ``diff_adjoint`` is the exact transpose of ``diff`` and is
what the analytic gradients are assembled from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DisplacementField2D, ScalarImage2D
from .errors import InvalidMaterial


def diff(f, h, axis):
    """Spacing-scaled derivative of ``f`` along ``axis``."""
    f = np.moveaxis(np.asarray(f, dtype=np.float64), axis, 0)
    out = np.empty_like(f)
    out[0] = (f[1] - f[0]) / h
    out[-1] = (f[-1] - f[-2]) / h
    out[1:-1] = (f[2:] - f[:-2]) / (2.0 * h)
    return np.moveaxis(out, 0, axis)


def diff_adjoint(r, h, axis):
    """Transpose of :func:`diff` applied to ``r``."""
    r = np.moveaxis(np.asarray(r, dtype=np.float64), axis, 0)
    g = np.zeros_like(r)
    g[0] -= r[0] / h
    g[1] += r[0] / h
    g[-1] += r[-1] / h
    g[-2] -= r[-1] / h
    half = r[1:-1] / (2.0 * h)
    g[2:] += half
    g[:-2] -= half
    return np.moveaxis(g, 0, axis)


def displacement_gradient(u: DisplacementField2D):
    """Return ``(du1/dx1, du1/dx2, du2/dx1, du2/dx2)``."""
    sx, sy = u.spacing
    return (diff(u.u1, sx, 1), diff(u.u1, sy, 0), diff(u.u2, sx, 1), diff(u.u2, sy, 0))


@dataclass(frozen=True)
class Material:
    """Isotropic material; ``E`` is the stiffness scale, ``nu`` the Poisson ratio."""

    E: float = 1.0
    nu: float = 0.4

    def __post_init__(self):
        if not (np.isfinite(self.E) and self.E > 0):
            raise InvalidMaterial(f"stiffness must be positive, got E={self.E}")
        if not (np.isfinite(self.nu) and 0.0 <= self.nu < 0.5):
            raise InvalidMaterial(f"Poisson ratio must lie in [0, 0.5), got nu={self.nu}")

    @property
    def C(self) -> np.ndarray:
        return stiffness_matrix(self)


def compliance_matrix(m: Material) -> np.ndarray:
    """Compliance (inverse stiffness) of the material."""
    E, nu = m.E, m.nu
    return np.array(
        [
            [1.0 / E, -nu / E, 0.0],
            [-nu / E, 1.0 / E, 0.0],
            [0.0, 0.0, 2.0 * (1.0 + nu) / E],
        ]
    )


def stiffness_matrix(m: Material) -> np.ndarray:
    """Closed-form inverse of :func:`compliance_matrix`."""
    E, nu = m.E, m.nu
    a = E / (1.0 - nu * nu)
    return np.array(
        [
            [a, nu * a, 0.0],
            [nu * a, a, 0.0],
            [0.0, 0.0, E / (2.0 * (1.0 + nu))],
        ]
    )


@dataclass(frozen=True)
class StrainField2D:
    """Channels ``e11``, ``e22`` and the tensorial shear ``e12``."""

    e11: np.ndarray
    e22: np.ndarray
    e12: np.ndarray
    spacing: tuple[float, float] = (1.0, 1.0)

    def to_array(self) -> np.ndarray:
        return np.stack([self.e11, self.e22, self.e12])

    @property
    def shape(self):
        return self.e11.shape


def strain_tensor(u: DisplacementField2D) -> StrainField2D:
    d11, d12, d21, d22 = displacement_gradient(u)
    return StrainField2D(d11, d22, 0.5 * (d12 + d21), u.spacing)


def _quadratic(eps: np.ndarray, C: np.ndarray):
    """Per-pixel ``C @ eps`` and ``0.5 * eps^T C eps`` for a (3, h, w) stack."""
    Ce = np.einsum("ab,bhw->ahw", C, eps)
    W = 0.5 * np.einsum("ahw,ahw->hw", eps, Ce)
    return Ce, W


def strain_energy_density(eps: StrainField2D, C) -> ScalarImage2D:
    """Per-pixel ``W = 0.5 * eps^T C eps``."""
    _, W = _quadratic(eps.to_array(), np.asarray(C, dtype=np.float64))
    return ScalarImage2D(W, eps.spacing)


def _strain_adjoint(g11, g22, g12, spacing):
    """Pull a per-pixel gradient w.r.t. (e11, e22, e12) back onto (u1, u2)."""
    sx, sy = spacing
    gu1 = diff_adjoint(g11, sx, 1) + 0.5 * diff_adjoint(g12, sy, 0)
    gu2 = diff_adjoint(g22, sy, 0) + 0.5 * diff_adjoint(g12, sx, 1)
    return gu1, gu2


NORMALIZATIONS = ("rms", "sum", "mean")


def reg_bim(u: DisplacementField2D, m: Material = Material(), norm: str = "rms"):
    """L2 norm of the per-pixel strain energy image, with its gradient.

    ``norm`` selects the pixel normalisation of ``sqrt(sum W^2)``:
    ``"sum"`` leaves it as is, ``"rms"`` divides by ``sqrt(n_pixels)``
    (the counterpart of a pixel-averaged MSE) and ``"mean"`` divides by
    ``n_pixels``. Returns ``(value, grad)``; at ``value == 0`` the gradient
    is zero.
    """
    if norm not in NORMALIZATIONS:
        raise ValueError(f"norm must be one of {NORMALIZATIONS}, got {norm!r}")
    eps = strain_tensor(u).to_array()
    Ce, W = _quadratic(eps, stiffness_matrix(m))
    value = float(np.sqrt(np.sum(W * W)))
    if value == 0.0:
        return 0.0, DisplacementField2D.zeros(u.shape, u.spacing)
    scale = {"sum": 1.0, "rms": 1.0 / np.sqrt(W.size), "mean": 1.0 / W.size}[norm]
    g = ((W / value) * scale) * Ce
    gu1, gu2 = _strain_adjoint(g[0], g[1], g[2], u.spacing)
    return value * scale, DisplacementField2D(gu1, gu2, u.spacing)


def reg_l2grad(u: DisplacementField2D):
    """Mean over pixels of ``|grad u1|^2 + |grad u2|^2`` and its gradient."""
    sx, sy = u.spacing
    n = u.u1.size
    d11, d12, d21, d22 = displacement_gradient(u)
    value = float(np.sum(d11 * d11 + d12 * d12 + d21 * d21 + d22 * d22) / n)
    gu1 = (2.0 / n) * (diff_adjoint(d11, sx, 1) + diff_adjoint(d12, sy, 0))
    gu2 = (2.0 / n) * (diff_adjoint(d21, sx, 1) + diff_adjoint(d22, sy, 0))
    return value, DisplacementField2D(gu1, gu2, u.spacing)
