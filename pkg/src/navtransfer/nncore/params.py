"""Named parameter bundles and the ``JRTCKPT v1`` checkpoint format."""

import hashlib
import io
from collections import OrderedDict

import numpy as np

from ..errors import ShapeError, StateError
from . import autograd as ag

MAGIC = "JRTCKPT v1"


class ParamSet:
    """Ordered name -> array map with a parallel gradient map.

    Names are dotted; the first component is the component prefix (``M``,
    ``G``, ``R``, ``P``, ``V`` for the agent, ``D`` for the discriminator).
    A frozen name never receives a gradient and is never touched by an
    optimizer.
    """

    def __init__(self, params=None, frozen=()):
        self.params = OrderedDict()
        self.grads = OrderedDict()
        self.frozen = set()
        for name, value in (params or {}).items():
            self.add(name, value)
        self.freeze(*frozen)

    def add(self, name, value):
        if name in self.params:
            raise StateError(f"duplicate parameter name {name!r}")
        if " " in name or "\n" in name:
            raise StateError(f"parameter name {name!r} contains whitespace")
        value = np.array(value, order="C")
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def names(self, prefix=""):
        return [n for n in self.params if n.startswith(prefix)]

    @property
    def size(self):
        return sum(v.size for v in self.params.values())

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    # ---- freezing ----------------------------------------------------------

    def freeze(self, *prefixes):
        for prefix in prefixes:
            self.frozen.update(self.names(prefix))

    def unfreeze(self, *prefixes):
        for prefix in prefixes:
            self.frozen.difference_update(self.names(prefix))

    def trainable(self, name):
        return name not in self.frozen

    # ---- graph interface ---------------------------------------------------

    def leaves(self):
        """Fresh graph leaves for one forward pass; frozen names become constants."""
        out = {}
        for name, value in self.params.items():
            if name in self.frozen:
                out[name] = ag.Var(value)
            else:
                out[name] = ag.leaf(value, param=name)
        return out

    def constants(self):
        """Graph inputs that carry no gradient (acting and evaluation)."""
        return {name: ag.Var(value) for name, value in self.params.items()}

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0)

    def accumulate(self, leaves):
        """Add gradients held by ``leaves`` (after ``backward``) into ``self.grads``."""
        for name, v in leaves.items():
            if v.grad is not None and name not in self.frozen:
                if v.grad.shape != self.params[name].shape:
                    raise ShapeError(f"gradient shape {v.grad.shape} != parameter shape for {name}")
                self.grads[name] += v.grad
                v.grad = None

    # ---- copies ------------------------------------------------------------

    def copy(self, dtype=None):
        out = ParamSet()
        for name, value in self.params.items():
            out.add(name, value.astype(dtype) if dtype is not None else value.copy())
        out.frozen = set(self.frozen)
        return out

    def subset(self, *prefixes):
        out = ParamSet()
        for name, value in self.params.items():
            if any(name.startswith(p) for p in prefixes):
                out.add(name, value.copy())
        out.frozen = {n for n in self.frozen if n in out.params}
        return out

    def load_from(self, other, *prefixes):
        """Overwrite values for names under ``prefixes`` with those of ``other``."""
        for name in other.params:
            if prefixes and not any(name.startswith(p) for p in prefixes):
                continue
            if name not in self.params:
                raise StateError(f"unknown parameter {name!r}")
            if other.params[name].shape != self.params[name].shape:
                raise ShapeError(f"shape mismatch for {name}")
            self.params[name] = other.params[name].astype(self.params[name].dtype, copy=True)

    def flat_grad_norm(self):
        return float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in self.grads.values())))

    def checksum(self, prefix=""):
        h = hashlib.sha256()
        for name in self.names(prefix):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name], dtype="<f4").tobytes())
        return h.hexdigest()

    def all_finite(self):
        return all(np.all(np.isfinite(v)) for v in self.params.values())


def to_bytes(params, extra=None):
    """Serialize ``params`` (and optional extra name -> array entries)."""
    entries = list(params.params.items()) + list((extra or {}).items())
    header = [MAGIC]
    payload = io.BytesIO()
    offset = 0
    for name, value in entries:
        data = np.ascontiguousarray(value, dtype="<f4").tobytes()
        header.append(" ".join([name, *map(str, value.shape), str(offset)]))
        payload.write(data)
        offset += len(data)
    return ("\n".join(header) + "\n\n").encode("utf-8") + payload.getvalue()


def from_bytes(blob):
    head, sep, payload = blob.partition(b"\n\n")
    if not sep:
        raise StateError("checkpoint header is not terminated by a blank line")
    lines = head.decode("utf-8").split("\n")
    if lines[0] != MAGIC:
        raise StateError(f"not a checkpoint (magic {lines[0]!r})")
    out = OrderedDict()
    for line in lines[1:]:
        parts = line.split(" ")
        name, dims, offset = parts[0], [int(d) for d in parts[1:-1]], int(parts[-1])
        count = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        out[name] = arr.reshape(dims).astype(np.float32)
    return out


def save(path, params, extra=None):
    with open(path, "wb") as fh:
        fh.write(to_bytes(params, extra))


def load(path):
    """Return ``(ParamSet, extra)``; names under ``meta.`` are returned as extras."""
    with open(path, "rb") as fh:
        tensors = from_bytes(fh.read())
    ps = ParamSet()
    extra = {}
    for name, value in tensors.items():
        if name.startswith("meta."):
            extra[name] = value
        else:
            ps.add(name, value)
    return ps, extra
