"""Minimal reverse-mode differentiation over numpy arrays."""

from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import FDResult, fd_check, fd_compare
from .kernels import BACKEND
from .node import Node, Parameter, backward, constant, no_grad

__all__ = [
    "BACKEND",
    "FDResult",
    "Node",
    "Parameter",
    "backward",
    "constant",
    "fd_check",
    "fd_compare",
    "load_checkpoint",
    "no_grad",
    "ops",
    "save_checkpoint",
]
