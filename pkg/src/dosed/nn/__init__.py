"""Minimal float64 tensor engine with the operators the detector needs."""
from . import functional
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, as_tensor, parameter

__all__ = ["Adam", "AdamState", "Tensor", "adam_step", "as_tensor", "functional", "parameter"]
