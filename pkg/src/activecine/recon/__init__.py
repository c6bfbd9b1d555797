"""Image formation: adjoint baseline, unrolled cascade, conv regularisers."""

from activecine.recon.cascade import (
    CascadeConfig,
    CascadeWeights,
    init_cascade_weights,
    reconstruct_cascade,
    regularizer_apply,
    tv_gradient,
    tv_preset,
)
from activecine.recon.operators import adjoint_operator, dc_step, forward_operator
from activecine.recon.training import TrainingDivergedError, gradient_check, train_cascade

__all__ = [
    "CascadeConfig", "CascadeWeights", "TrainingDivergedError", "adjoint_operator",
    "dc_step", "forward_operator", "gradient_check", "init_cascade_weights",
    "reconstruct_cascade", "regularizer_apply", "train_cascade", "tv_gradient", "tv_preset",
]
