"""MAP estimation of a dense displacement field by Adam on the full objective.

There is no network here: each image pair gets its own optimised field,
starting from zero displacement.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import DisplacementField2D, ScalarImage2D, SegMaskSet, check_same_grid
from .errors import InvalidInput, NonFiniteLoss
from .objective import LossConfig, total_loss
from .warp import sample_bilinear

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    lr: float = 0.1
    max_iter: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    tol: float = 1e-6
    window: int = 10
    loss: LossConfig = field(default_factory=LossConfig)
    pyramid: bool = False

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidInput("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidInput("Adam betas must lie in [0, 1)")
        if self.max_iter < 1 or self.window < 1:
            raise InvalidInput("max_iter and window must be >= 1")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, x):
        return cls(np.zeros_like(x), np.zeros_like(x), 0)


def adam_step(x, grad, state: AdamState, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns ``(new_x, new_state)``."""
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * (grad * grad)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new_x = x - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_x, AdamState(m, v, t)


@dataclass
class SolveResult:
    u_star: DisplacementField2D
    history: list[dict]
    iterations: int
    stop_reason: str
    final: Optional[object] = None  # LossBreakdown at u_star


def _converged(totals, window, tol):
    """True when the mean of the last ``window`` totals improved on the mean
    of the ``window`` before by no more than ``tol`` (relative).

    Averaging over blocks keeps a single Adam overshoot from ending the run.
    """
    if len(totals) < 2 * window:
        return False
    old = float(np.mean(totals[-2 * window:-window]))
    new = float(np.mean(totals[-window:]))
    return old - new <= tol * abs(old)


def _solve_level(I_m, I_f, masks, cfg: SolverConfig, u0: DisplacementField2D) -> SolveResult:
    x = u0.to_array()
    state = AdamState.zeros_like(x)
    history: list[dict] = []
    totals: list[float] = []
    stop = "max_iter"
    lb = None
    for it in range(cfg.max_iter):
        u = DisplacementField2D.from_array(x, I_f.spacing)
        try:
            lb = total_loss(cfg.loss, I_m, I_f, masks, u)
        except NonFiniteLoss as exc:
            raise NonFiniteLoss(f"iteration {it}: {exc}", history) from None
        record = lb.scalars()
        history.append(record)
        totals.append(lb.total)
        if _converged(totals, cfg.window, cfg.tol):
            stop = "converged"
            break
        if it == cfg.max_iter - 1:
            break
        x, state = adam_step(x, lb.grad.to_array(), state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    if totals[-1] > totals[0]:
        log.warning("final loss %.6g exceeds initial loss %.6g", totals[-1], totals[0])
    return SolveResult(DisplacementField2D.from_array(x, I_f.spacing), history, len(history), stop, lb)


def _pool2(a):
    h, w = a.shape
    a = np.pad(a, ((0, h % 2), (0, w % 2)), mode="edge")
    return 0.25 * (a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2])


def downsample_image(img: ScalarImage2D) -> ScalarImage2D:
    sx, sy = img.spacing
    return ScalarImage2D(_pool2(img.data), (2 * sx, 2 * sy))


def downsample_masks(masks: SegMaskSet) -> SegMaskSet:
    sx, sy = masks.spacing
    items = tuple((lab, (_pool2(m.astype(np.float64)) >= 0.5).astype(np.uint8)) for lab, m in masks.structures)
    return SegMaskSet(items, (2 * sx, 2 * sy))


def upsample_field(u: DisplacementField2D, shape, spacing) -> DisplacementField2D:
    """Bilinear upsampling of a half-resolution field; values stay in mm."""
    rows, cols = np.indices(shape, dtype=np.float64)
    xc, yc = (cols - 0.5) / 2.0, (rows - 0.5) / 2.0
    return DisplacementField2D(sample_bilinear(u.u1, xc, yc), sample_bilinear(u.u2, xc, yc), spacing)


def register(
    I_m: ScalarImage2D,
    I_f: ScalarImage2D,
    masks: Optional[tuple[SegMaskSet, SegMaskSet]] = None,
    cfg: SolverConfig = SolverConfig(),
    u0: Optional[DisplacementField2D] = None,
) -> SolveResult:
    """Estimate the field mapping fixed-grid points into the moving image."""
    check_same_grid(I_m, I_f)
    if u0 is None:
        u0 = DisplacementField2D.zeros(I_f.shape, I_f.spacing)
    check_same_grid(I_f, u0)
    if cfg.pyramid and min(I_f.shape) >= 8:
        cm = None
        if masks is not None:
            cm = (downsample_masks(masks[0]), downsample_masks(masks[1]))
        ci_f = downsample_image(I_f)
        coarse_u0 = DisplacementField2D(_pool2(u0.u1), _pool2(u0.u2), ci_f.spacing)
        coarse = _solve_level(downsample_image(I_m), ci_f, cm, cfg, coarse_u0)
        u0 = upsample_field(coarse.u_star, I_f.shape, I_f.spacing)
        fine = _solve_level(I_m, I_f, masks, cfg, u0)
        fine.history = coarse.history + fine.history
        fine.iterations = len(fine.history)
        return fine
    return _solve_level(I_m, I_f, masks, cfg, u0)
