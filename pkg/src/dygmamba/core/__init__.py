from .tensor import (Parameter, Tape, Tensor, active_tape, backward, get_dtype, get_precision,
                     new_tape, no_grad, precision, set_precision)
from .optim import Adam
from .gradcheck import finite_difference_gradient, relative_error
from . import ops

__all__ = [
    "Adam", "Parameter", "Tape", "Tensor", "active_tape", "backward", "finite_difference_gradient",
    "get_dtype", "get_precision", "new_tape", "no_grad", "ops", "precision", "relative_error",
    "set_precision",
]
