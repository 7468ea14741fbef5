"""Registration objective ``sim + lam * reg + gamma * seg`` with analytic gradient."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import DisplacementField2D, ScalarImage2D, SegMaskSet, check_same_grid
from .elasticity import NORMALIZATIONS, Material, reg_bim, reg_l2grad
from .errors import GridMismatch, InvalidInput, LabelMismatch, MissingMasks, NonFiniteLoss
from .warp import warp_with_jacobian

REGULARIZERS = ("bim", "l2grad", "none")


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.05
    gamma: float = 0.01
    material: Material = field(default_factory=Material)
    regularizer: str = "bim"
    dice_eps: float = 1e-6
    reg_norm: str = "rms"

    def __post_init__(self):
        if not self.lam >= 0 or not self.gamma >= 0:
            raise InvalidInput(f"weights must be non-negative (lam={self.lam}, gamma={self.gamma})")
        if not self.dice_eps > 0:
            raise InvalidInput("dice smoothing must be positive")
        if self.regularizer not in REGULARIZERS:
            raise InvalidInput(f"regularizer must be one of {REGULARIZERS}, got {self.regularizer!r}")
        if self.reg_norm not in NORMALIZATIONS:
            raise InvalidInput(f"reg_norm must be one of {NORMALIZATIONS}, got {self.reg_norm!r}")


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    sim: float
    reg: float
    seg: float
    grad: DisplacementField2D

    def scalars(self) -> dict:
        return {"total": self.total, "sim": self.sim, "reg": self.reg, "seg": self.seg}


def _zero_like(u):
    return np.zeros((2,) + u.shape)


def _sim(I_f, I_m, u):
    check_same_grid(I_f, I_m, u)
    moved, jac = warp_with_jacobian(I_m.data, u)
    resid = I_f.data - moved
    n = resid.size
    return float(np.sum(resid * resid) / n), (-2.0 / n) * resid * jac


def loss_sim(I_f: ScalarImage2D, I_m: ScalarImage2D, u: DisplacementField2D):
    """Pixel-averaged squared error between ``I_f`` and ``I_m`` warped by ``u``."""
    value, g = _sim(I_f, I_m, u)
    return value, DisplacementField2D(g[0], g[1], u.spacing)


def soft_dice(p, q, eps=1e-6) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return float((2.0 * np.sum(p * q) + eps) / (np.sum(p * p) + np.sum(q * q) + eps))


def _seg(s_m, s_f, u, eps):
    if s_m.labels != s_f.labels:
        raise LabelMismatch(f"moving labels {s_m.labels} != fixed labels {s_f.labels}")
    check_same_grid(s_m, s_f, u)
    k = len(s_m)
    value = 0.0
    g = _zero_like(u)
    for (_, m), (_, f) in zip(s_m.structures, s_f.structures):
        p, jac = warp_with_jacobian(m, u)
        q = f.astype(np.float64)
        num = 2.0 * np.sum(p * q) + eps
        den = np.sum(p * p) + np.sum(q * q) + eps
        value += 1.0 - num / den
        dd_dp = (2.0 * q * den - num * 2.0 * p) / (den * den)
        g -= dd_dp * jac
    return float(value / k), g / k


def loss_seg(s_m: SegMaskSet, s_f: SegMaskSet, u: DisplacementField2D, eps: float = 1e-6):
    """Mean over structures of ``1 - softDice(s_m o u, s_f)``."""
    value, g = _seg(s_m, s_f, u, eps)
    return value, DisplacementField2D(g[0], g[1], u.spacing)


def loss_reg(cfg: LossConfig, u: DisplacementField2D):
    if cfg.regularizer == "bim":
        return reg_bim(u, cfg.material, cfg.reg_norm)
    if cfg.regularizer == "l2grad":
        return reg_l2grad(u)
    return 0.0, DisplacementField2D.zeros(u.shape, u.spacing)


def total_loss(
    cfg: LossConfig,
    I_m: ScalarImage2D,
    I_f: ScalarImage2D,
    masks: Optional[tuple[SegMaskSet, SegMaskSet]],
    u: DisplacementField2D,
) -> LossBreakdown:
    """Full objective; ``masks`` is ``(s_m, s_f)`` or None.

    Raises NonFiniteLoss if any term evaluates to NaN or Inf.
    """
    with np.errstate(invalid="ignore", over="ignore"):
        return _total(cfg, I_m, I_f, masks, u)


def _total(cfg, I_m, I_f, masks, u) -> LossBreakdown:
    sim, g = _sim(I_f, I_m, u)

    reg = 0.0
    if cfg.regularizer != "none":
        reg, g_reg = loss_reg(cfg, u)
        if cfg.lam:
            g = g + cfg.lam * g_reg.to_array()

    seg = 0.0
    if masks is not None:
        s_m, s_f = masks
        if s_m.shape != u.shape:
            raise GridMismatch(f"mask grid {s_m.shape} does not match field {u.shape}")
        seg, g_seg = _seg(s_m, s_f, u, cfg.dice_eps)
        if cfg.gamma:
            g = g + cfg.gamma * g_seg
    elif cfg.gamma > 0:
        warnings.warn("gamma > 0 but no masks supplied; segmentation term set to 0", MissingMasks, stacklevel=3)

    total = sim + cfg.lam * reg + cfg.gamma * seg
    if not (np.isfinite(total) and np.all(np.isfinite(g))):
        raise NonFiniteLoss(f"non-finite objective (sim={sim}, reg={reg}, seg={seg})")
    return LossBreakdown(total, sim, reg, seg, DisplacementField2D(g[0], g[1], u.spacing))


def fd_gradient(f: Callable[[DisplacementField2D], float], u: DisplacementField2D, h: float = 1e-6,
                entries=None) -> DisplacementField2D:
    """Central finite-difference gradient of a scalar function of ``u``.

    ``entries`` optionally restricts evaluation to a list of
    ``(channel, row, col)`` tuples; the rest of the result is left at zero.
    """
    if not h > 0:
        raise InvalidInput("finite-difference step must be positive")
    base = u.to_array()
    out = np.zeros_like(base)
    if entries is None:
        entries = list(np.ndindex(base.shape))
    for idx in entries:
        orig = base[idx]
        base[idx] = orig + h
        fp = f(DisplacementField2D.from_array(base, u.spacing))
        base[idx] = orig - h
        fm = f(DisplacementField2D.from_array(base, u.spacing))
        base[idx] = orig
        out[idx] = (fp - fm) / (2.0 * h)
    return DisplacementField2D.from_array(out, u.spacing)
