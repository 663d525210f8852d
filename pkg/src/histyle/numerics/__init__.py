from .tensor import (
    Tensor,
    concat,
    exp,
    gelu,
    layer_norm,
    log,
    matmul,
    mean,
    no_grad,
    relu,
    softmax,
    sqrt,
    tanh,
)
from .optim import AdamState, ParamStore, adam_init, adam_step
from .gradcheck import grad_check
from .rng import Rng
from .checkpoint import FORMAT as CHECKPOINT_FORMAT
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Tensor", "concat", "exp", "gelu", "layer_norm", "log", "matmul", "mean",
    "no_grad", "relu", "softmax", "sqrt", "tanh",
    "AdamState", "ParamStore", "adam_init", "adam_step",
    "grad_check", "Rng",
    "CHECKPOINT_FORMAT", "load_checkpoint", "save_checkpoint",
]
