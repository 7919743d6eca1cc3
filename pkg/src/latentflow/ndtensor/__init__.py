"""Dense float64 tensors, seeded RNG streams and reverse-mode autodiff."""

from . import tape as ops
from .gradcheck import NonFiniteLoss, autodiff_grads, finite_difference_grads, grad_check
from .rng import Rng, sample_standard_normal
from .tape import GradientError, ShapeError, Tape, Var, value_of

__all__ = [
    "GradientError",
    "NonFiniteLoss",
    "Rng",
    "ShapeError",
    "Tape",
    "Var",
    "autodiff_grads",
    "finite_difference_grads",
    "grad_check",
    "ops",
    "sample_standard_normal",
    "value_of",
]
