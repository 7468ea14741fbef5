"""Biomechanics-informed 2D deformable image registration."""

__version__ = "0.1.0"

from .core import (
    DisplacementField2D,
    ScalarImage2D,
    SegMaskSet,
    centroid,
    crop_centered,
    normalize_minmax,
)
from .elasticity import Material, reg_bim, reg_l2grad, stiffness_matrix, strain_energy_density, strain_tensor
from .metrics import asd, dice, evaluate, hausdorff, jaccard, jacobian_det_map, paired_ttest
from .objective import LossConfig, fd_gradient, loss_seg, loss_sim, total_loss
from .phantom import PhantomSpec, endpoint_error, make_pair
from .solver import SolverConfig, adam_step, register
from .warp import warp_image, warp_intensity_jacobian, warp_mask
