from . import autograd
from .autograd import Tensor, parameter
from .gradcheck import NondeterministicLossError, grad_check
from .layers import (
    Dropout,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    StackConfig,
    TransformerStack,
    dropout_rng,
    forward_stack,
    frozen,
    sinusoidal_pe,
    timestep_embedding,
)
from .optim import AdamW, OptState, adamw_step

__all__ = [
    "AdamW", "Dropout", "LayerNorm", "Linear", "Module", "MultiHeadAttention",
    "NondeterministicLossError", "OptState", "StackConfig", "Tensor", "TransformerStack",
    "adamw_step", "autograd", "dropout_rng", "forward_stack", "frozen", "grad_check", "parameter",
    "sinusoidal_pe", "timestep_embedding",
]
