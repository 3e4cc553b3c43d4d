"""Adam and RMSProp over a :class:`ParamSet`."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import StateError


@dataclass
class OptimState:
    algorithm: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    decay: float = 0.99
    eps: float = 1e-8
    step: int = 0
    moments: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.algorithm not in ("adam", "rmsprop"):
            raise StateError(f"unknown optimizer {self.algorithm!r}")


def adam(lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    return OptimState("adam", lr, beta1=beta1, beta2=beta2, eps=eps)


def rmsprop(lr=7e-4, decay=0.99, eps=1e-8):
    return OptimState("rmsprop", lr, decay=decay, eps=eps)


def clip_grad_norm(params, max_norm):
    """Scale all trainable gradients so their global norm is at most ``max_norm``."""
    norm = params.flat_grad_norm()
    if max_norm and norm > max_norm:
        c = np.float32(max_norm / norm)
        for g in params.grads.values():
            g *= c
    return norm


def step(state, params):
    """Apply one update in place. Frozen parameters are skipped; gradients are left as-is."""
    state.step += 1
    t = state.step
    for name, p in params.params.items():
        if name in params.frozen:
            continue
        g = params.grads[name]
        if name not in state.moments:
            state.moments[name] = tuple(np.zeros_like(p) for _ in range(2 if state.algorithm == "adam" else 1))
        mom = state.moments[name]
        if any(m.shape != p.shape for m in mom):
            raise StateError(f"optimizer moment shape mismatch for {name}")
        if state.algorithm == "adam":
            m, v = mom
            m *= state.beta1
            m += (1 - state.beta1) * g
            v *= state.beta2
            v += (1 - state.beta2) * g * g
            mhat = m / (1 - state.beta1**t)
            vhat = v / (1 - state.beta2**t)
            p -= (state.lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.dtype)
        else:
            (v,) = mom
            v *= state.decay
            v += (1 - state.decay) * g * g
            p -= (state.lr * g / np.sqrt(v + state.eps)).astype(p.dtype)
    return params, state
