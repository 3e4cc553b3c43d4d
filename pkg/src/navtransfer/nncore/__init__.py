"""Dense float32 tensors with reverse-mode gradients, optimizers and checks."""

from .autograd import LOG_EPS, Var, backward, cross_entropy, softmax
from .layers import (
    Conv2D,
    Dense,
    Flatten,
    GRUCell,
    LeakyReLU,
    Network,
    Sigmoid,
    Softmax,
    Tanh,
    forward_backward,
    grad_check,
    loss_and_grad,
)
from .optim import OptimState, adam, clip_grad_norm, rmsprop, step as optim_step
from .params import ParamSet, load as load_checkpoint, save as save_checkpoint

__all__ = [
    "LOG_EPS", "Var", "backward", "cross_entropy", "softmax",
    "Conv2D", "Dense", "Flatten", "GRUCell", "LeakyReLU", "Network", "Sigmoid", "Softmax", "Tanh",
    "forward_backward", "grad_check", "loss_and_grad",
    "OptimState", "adam", "clip_grad_norm", "rmsprop", "optim_step",
    "ParamSet", "load_checkpoint", "save_checkpoint",
]
