"""The closed layer set used by every network of the agent.

Each layer owns no state besides its spec; weights live in a :class:`ParameterSet`
under ``"<layer name>/W"`` and ``"<layer name>/b"``. ``Network`` chains layers,
records a tape of forward caches and replays it backwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .params import ParameterSet

ACTIVATIONS = ("relu", "tanh", "linear", "softmax")
KINDS = ("dense", "conv2d", "transposed-conv2d", "reshape", "recurrent-fixed")


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    in_dim: tuple
    out_dim: tuple
    activation: str = "linear"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def dense(name, n_in, n_out, activation="linear"):
    return LayerSpec(name, "dense", (n_in,), (n_out,), activation)


def conv(name, in_hw, c_in, c_out, activation="linear"):
    h, w = in_hw
    return LayerSpec(name, "conv2d", (h, w, c_in), (h - 2, w - 2, c_out), activation)


def tconv(name, in_hw, c_in, c_out, activation="linear"):
    h, w = in_hw
    return LayerSpec(name, "transposed-conv2d", (h, w, c_in), (h + 2, w + 2, c_out), activation)


def reshape(name, in_dim, out_dim):
    if int(np.prod(in_dim)) != int(np.prod(out_dim)):
        raise ValueError(f"{name}: cannot reshape {in_dim} into {out_dim}")
    return LayerSpec(name, "reshape", tuple(in_dim), tuple(out_dim))


def init_layer(spec: LayerSpec, params: ParameterSet, rng, zero=False):
    if spec.kind == "dense":
        (n_in,), (n_out,) = spec.in_dim, spec.out_dim
        w = np.zeros((n_in, n_out)) if zero else F.glorot_uniform(rng, (n_in, n_out), n_in, n_out)
        params.add(spec.name + "/W", w)
        params.add(spec.name + "/b", np.zeros(n_out))
    elif spec.kind in ("conv2d", "transposed-conv2d"):
        c_in, c_out = spec.in_dim[-1], spec.out_dim[-1]
        if spec.kind == "conv2d":
            shape = (3, 3, c_in, c_out)
        else:
            shape = (3, 3, c_out, c_in)
        w = np.zeros(shape) if zero else F.glorot_uniform(rng, shape, 9 * c_in, 9 * c_out)
        params.add(spec.name + "/W", w)
        params.add(spec.name + "/b", np.zeros(c_out))
    elif spec.kind == "recurrent-fixed":
        raise ValueError("recurrent-fixed layers are built by the echo-state memory, not init_layer")


def _activate(act, z):
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "tanh":
        return np.tanh(z)
    if act == "softmax":
        return F.softmax(z, axis=-1)
    return z


def _activation_backward(act, y, dy):
    if act == "relu":
        return dy * (y > 0)
    if act == "tanh":
        return dy * (1.0 - y * y)
    if act == "softmax":
        return F.softmax_backward(y, dy, axis=-1)
    return dy


def forward(spec: LayerSpec, params: ParameterSet, x: np.ndarray, activate=True):
    """Apply one layer to a batch. Returns ``(output, cache)``."""
    if tuple(x.shape[1:]) != tuple(spec.in_dim):
        raise ShapeError(
            f"layer {spec.name!r} ({spec.kind}) expects input {spec.in_dim}, got {tuple(x.shape[1:])}"
        )
    if spec.kind == "reshape":
        return x.reshape((x.shape[0],) + spec.out_dim), None
    w = params[spec.name + "/W"].value
    b = params[spec.name + "/b"].value
    if spec.kind == "dense":
        z = x @ w + b
    elif spec.kind == "conv2d":
        z = F.conv2d_valid(x, w) + b
    elif spec.kind == "transposed-conv2d":
        z = F.conv2d_transpose(x, w) + b
    else:
        raise ValueError(f"layer kind {spec.kind!r} has no batch forward")
    act = spec.activation if activate else "linear"
    y = _activate(act, z)
    return y, (x, y, act)


def backward(spec: LayerSpec, params: ParameterSet, cache, dy: np.ndarray, accumulate=True, input_grad=True):
    """Backpropagate ``dy`` through one layer; adds parameter gradients when ``accumulate``.

    With ``input_grad=False`` the returned input gradient is ``None``.
    """
    if spec.kind == "reshape":
        return dy.reshape((dy.shape[0],) + spec.in_dim)
    x, y, act = cache
    dz = _activation_backward(act, y, dy)
    w = params[spec.name + "/W"].value
    if spec.kind == "dense":
        if accumulate:
            params[spec.name + "/W"].grad += x.T @ dz
            params[spec.name + "/b"].grad += dz.sum(axis=0)
        return dz @ w.T if input_grad else None
    if spec.kind == "conv2d":
        if accumulate:
            params[spec.name + "/W"].grad += F.conv2d_kernel_grad(x, dz)
            params[spec.name + "/b"].grad += dz.sum(axis=(0, 1, 2))
        return F.conv2d_transpose(dz, w) if input_grad else None
    # transposed conv: out = convT(x, W) so dW follows from the adjoint identity
    if accumulate:
        params[spec.name + "/W"].grad += F.conv2d_kernel_grad(dz, x)
        params[spec.name + "/b"].grad += dz.sum(axis=(0, 1, 2))
    return F.conv2d_valid(dz, w) if input_grad else None


class Network:
    """A chain of layers sharing one ParameterSet."""

    def __init__(self, specs, params: ParameterSet | None = None, rng=None, zero=False):
        self.specs = list(specs)
        for a, b in zip(self.specs, self.specs[1:]):
            if tuple(a.out_dim) != tuple(b.in_dim):
                raise ShapeError(f"layer {b.name!r} input {b.in_dim} does not match {a.name!r} output {a.out_dim}")
        if params is None:
            params = ParameterSet()
            rng = np.random.default_rng(0) if rng is None else rng
            for s in self.specs:
                init_layer(s, params, rng, zero=zero)
        self.params = params
        self._tape = None

    @property
    def in_dim(self):
        return self.specs[0].in_dim

    @property
    def out_dim(self):
        return self.specs[-1].out_dim

    def forward(self, x, final_activation=True, record=True):
        tape = []
        last = len(self.specs) - 1
        for i, s in enumerate(self.specs):
            x, cache = forward(s, self.params, x, activate=final_activation or i != last)
            tape.append(cache)
        self._tape = tape if record else None
        return x

    __call__ = forward

    def backward(self, dy, accumulate=True, input_grad=True):
        """Replay the last recorded forward pass. Returns the gradient w.r.t. the input
        (``None`` when ``input_grad`` is false)."""
        if self._tape is None:
            raise RuntimeError("backward called without a recorded forward pass")
        first = self.specs[0]
        for s, cache in zip(reversed(self.specs), reversed(self._tape)):
            dy = backward(s, self.params, cache, dy, accumulate=accumulate,
                          input_grad=input_grad or s is not first)
        self._tape = None
        return dy
