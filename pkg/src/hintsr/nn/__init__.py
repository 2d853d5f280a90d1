"""Neural network building blocks: autodiff tensors, layers, and the model."""

from .model import (
    BITS,
    HALF_MAX,
    ConditionedRegressor,
    ModelConfig,
    OutOfRange,
    PayloadMissing,
    float_to_multihot,
    floats_to_multihot,
    points_to_features,
)
from .tensor import Parameter, Tensor, grad_check, no_grad

__all__ = [
    "BITS",
    "HALF_MAX",
    "ConditionedRegressor",
    "ModelConfig",
    "OutOfRange",
    "PayloadMissing",
    "Parameter",
    "Tensor",
    "float_to_multihot",
    "floats_to_multihot",
    "grad_check",
    "no_grad",
    "points_to_features",
]
