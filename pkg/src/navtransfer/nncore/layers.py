"""Layer vocabulary, shape-checked architecture descriptions, and the
forward/backward and finite-difference gradient-check drivers."""

from dataclasses import dataclass

import numpy as np

from ..errors import NumericInputError, ShapeError
from . import autograd as ag
from .params import ParamSet


@dataclass(frozen=True)
class Dense:
    name: str
    n_in: int
    n_out: int


@dataclass(frozen=True)
class Conv2D:
    name: str
    c_in: int
    c_out: int
    kernel: int
    stride: int = 1
    pad: int = 0


@dataclass(frozen=True)
class LeakyReLU:
    slope: float = 0.01


@dataclass(frozen=True)
class Tanh:
    pass


@dataclass(frozen=True)
class Sigmoid:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Softmax:
    pass


@dataclass(frozen=True)
class GRUCell:
    """Gated recurrent cell: update/reset gates, no separate memory cell."""

    name: str
    n_in: int
    n_hidden: int


def conv_output_hw(h, w, layer):
    oh = (h + 2 * layer.pad - layer.kernel) // layer.stride + 1
    ow = (w + 2 * layer.pad - layer.kernel) // layer.stride + 1
    return oh, ow


class Network:
    """A feed-forward stack over the fixed layer vocabulary.

    ``input_shape`` excludes the batch axis. Shapes are checked when the
    network is constructed, so a mismatched stack fails before any data flows.
    """

    def __init__(self, layers, input_shape):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.shapes = self._infer()

    def _infer(self):
        shape = self.input_shape
        shapes = [shape]
        for layer in self.layers:
            if isinstance(layer, Conv2D):
                if len(shape) != 3 or shape[2] != layer.c_in:
                    raise ShapeError(f"{layer.name}: expects (H, W, {layer.c_in}), got {shape}")
                oh, ow = conv_output_hw(shape[0], shape[1], layer)
                if oh < 1 or ow < 1:
                    raise ShapeError(f"{layer.name}: input {shape} too small for kernel {layer.kernel}")
                shape = (oh, ow, layer.c_out)
            elif isinstance(layer, Dense):
                if len(shape) != 1 or shape[0] != layer.n_in:
                    raise ShapeError(f"{layer.name}: expects ({layer.n_in},), got {shape}")
                shape = (layer.n_out,)
            elif isinstance(layer, Flatten):
                shape = (int(np.prod(shape)),)
            elif isinstance(layer, GRUCell):
                raise ShapeError("GRUCell is stepped explicitly, not stacked in a Network")
            shapes.append(shape)
        return shapes

    @property
    def output_shape(self):
        return self.shapes[-1]

    def init_params(self, rng, dtype=np.float32):
        ps = ParamSet()
        for layer in self.layers:
            if isinstance(layer, (Dense, Conv2D, GRUCell)):
                for name, value in init_layer(layer, rng, dtype).items():
                    ps.add(name, value)
        return ps

    def forward(self, leaves, x, upto=None):
        """Run layers ``[0, upto)`` on graph input ``x`` (batch-leading)."""
        if tuple(x.value.shape[1:]) != self.input_shape:
            raise ShapeError(f"input shape {x.value.shape[1:]} != declared {self.input_shape}")
        for layer in self.layers[:upto]:
            x = apply_layer(layer, leaves, x)
        return x


def init_layer(layer, rng, dtype=np.float32):
    """He-style uniform init for weights, zero biases."""
    if isinstance(layer, Dense):
        lim = np.sqrt(6.0 / layer.n_in)
        return {
            f"{layer.name}.w": rng.uniform(-lim, lim, (layer.n_in, layer.n_out)).astype(dtype),
            f"{layer.name}.b": np.zeros(layer.n_out, dtype),
        }
    if isinstance(layer, Conv2D):
        fan_in = layer.kernel * layer.kernel * layer.c_in
        lim = np.sqrt(6.0 / fan_in)
        shape = (layer.kernel, layer.kernel, layer.c_in, layer.c_out)
        return {
            f"{layer.name}.w": rng.uniform(-lim, lim, shape).astype(dtype),
            f"{layer.name}.b": np.zeros(layer.c_out, dtype),
        }
    if isinstance(layer, GRUCell):
        out = {}
        lim_x = np.sqrt(3.0 / layer.n_in)
        lim_h = np.sqrt(3.0 / layer.n_hidden)
        for gate in ("z", "r", "n"):
            out[f"{layer.name}.w{gate}"] = rng.uniform(-lim_x, lim_x, (layer.n_in, layer.n_hidden)).astype(dtype)
            out[f"{layer.name}.u{gate}"] = rng.uniform(-lim_h, lim_h, (layer.n_hidden, layer.n_hidden)).astype(dtype)
            out[f"{layer.name}.b{gate}"] = np.zeros(layer.n_hidden, dtype)
        return out
    raise TypeError(f"layer {layer!r} has no parameters")


def apply_layer(layer, leaves, x):
    if isinstance(layer, Dense):
        return ag.dense(x, leaves[f"{layer.name}.w"], leaves[f"{layer.name}.b"])
    if isinstance(layer, Conv2D):
        return ag.conv2d(x, leaves[f"{layer.name}.w"], leaves[f"{layer.name}.b"], layer.stride, layer.pad)
    if isinstance(layer, LeakyReLU):
        return ag.leaky_relu(x, layer.slope)
    if isinstance(layer, Tanh):
        return ag.tanh(x)
    if isinstance(layer, Sigmoid):
        return ag.sigmoid(x)
    if isinstance(layer, Flatten):
        return ag.reshape(x, (x.value.shape[0], -1))
    if isinstance(layer, Softmax):
        return ag.softmax_var(x)
    raise TypeError(f"unsupported layer {layer!r}")


def gru_input_terms(leaves, name, x):
    """Input-side gate pre-activations; computed once for a whole sequence."""
    return tuple(ag.dense(x, leaves[f"{name}.w{g}"], leaves[f"{name}.b{g}"]) for g in "zrn")


def gru_step(leaves, name, xterms, h):
    """One recurrent step given precomputed input terms ``(xz, xr, xn)``."""
    xz, xr, xn = xterms
    z = ag.sigmoid(xz + ag.matmul(h, leaves[f"{name}.uz"]))
    r = ag.sigmoid(xr + ag.matmul(h, leaves[f"{name}.ur"]))
    n = ag.tanh(xn + ag.matmul(r * h, leaves[f"{name}.un"]))
    return n + z * (h - n)


# ---- drivers ----------------------------------------------------------------

def forward_backward(net, params, x, loss_head):
    """Forward ``x`` through ``net``, apply ``loss_head`` (Var -> scalar Var),
    and fill ``params.grads``. Unreachable or frozen parameters get zeros."""
    params.zero_grad()
    leaves = params.leaves()
    xv = x if isinstance(x, ag.Var) else ag.Var(np.asarray(x, dtype=params.dtype))
    loss = loss_head(net.forward(leaves, xv))
    value = float(loss.value)
    if not np.isfinite(value):
        raise NumericInputError(f"non-finite loss {value}")
    ag.backward(loss)
    params.accumulate(leaves)
    return value


def loss_and_grad(loss_fn, params):
    """Evaluate ``loss_fn(leaves) -> scalar Var`` and fill ``params.grads``."""
    params.zero_grad()
    leaves = params.leaves()
    loss = loss_fn(leaves)
    value = float(loss.value)
    ag.backward(loss)
    params.accumulate(leaves)
    return value


def grad_check(loss_fn, params, eps=1e-3, max_coords=None, seed=0, dtype=np.float64):
    """Max relative error between analytic and central-difference gradients.

    The check runs on a copy of ``params`` cast to ``dtype``; with the default
    float64 the finite-difference truncation error, not rounding, dominates.
    ``max_coords`` limits the number of checked entries per tensor (sampled
    deterministically from ``seed``) for tensors too large to sweep.
    """
    p = params.copy(dtype=dtype)
    loss_and_grad(loss_fn, p)
    analytic = {k: v.copy() for k, v in p.grads.items()}
    rng = np.random.default_rng(seed)
    worst = 0.0

    def value():
        return float(loss_fn(p.leaves()).value)

    for name, arr in p.params.items():
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, max_coords, replace=False))
        for i in idx:
            if name in p.frozen:
                a = 0.0
            else:
                a = float(analytic[name].reshape(-1)[i])
            old = flat[i]
            flat[i] = old + eps
            fp = value()
            flat[i] = old - eps
            fm = value()
            flat[i] = old
            n = (fp - fm) / (2 * eps)
            if name in p.frozen:
                n = 0.0
            err = abs(a - n) / max(1e-6, abs(a) + abs(n))
            worst = max(worst, err)
    return worst
