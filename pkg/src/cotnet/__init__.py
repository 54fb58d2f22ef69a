"""Contextual Transformer blocks, CoTNet/CoTNeXt backbones and their tooling on a numpy autograd core."""
from .tensor import ConfigError, Parameter, ShapeError, Tensor, no_grad, set_default_dtype

__version__ = "0.1.0"

__all__ = ["ConfigError", "Parameter", "ShapeError", "Tensor", "no_grad", "set_default_dtype"]
