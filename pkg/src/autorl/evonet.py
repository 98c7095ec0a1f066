"""Evolvable feed-forward networks.

An :class:`EvolvableNet` is an MLP whose architecture is the genome: layer
widths plus a hidden activation. All parameters live in one flat float64
vector; per-layer weight matrices (fan_out x fan_in) and bias vectors are
views into it, so optimiser steps and soft target updates are single passes.

Architecture mutations are Lamarckian: they return a new net in which every
pre-existing parameter is carried over bit-exactly.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .serialization import FORMAT_VERSION, check_header, decode_array, encode_array, read_json, write_json

ACTIVATIONS = ("relu", "tanh", "elu")
_ACT_CODE = {"relu": kernels.RELU, "tanh": kernels.TANH, "elu": kernels.ELU}

DEFAULT_NEW_WEIGHT_SCALE = 1e-2


class ShapeError(ValueError):
    """Input or parameter shapes disagree with a network's spec."""


class NumericError(ArithmeticError):
    """A non-finite value reached an optimiser or loss."""


@dataclass(frozen=True)
class NetSpec:
    """Architecture genome of an MLP.

    ``output_bound`` of ``None`` means an identity output layer; a positive
    value means ``bound * tanh(z)``.
    """

    input_dim: int
    hidden_widths: tuple[int, ...]
    output_dim: int
    activation: str = "relu"
    output_bound: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if not self.hidden_widths:
            raise ValueError("hidden_widths must be non-empty")
        if self.input_dim < 1 or self.output_dim < 1 or min(self.hidden_widths) < 1:
            raise ValueError(f"layer sizes must be positive: {self.layer_sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.output_bound is not None and not self.output_bound > 0:
            raise ValueError("output_bound must be positive")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_widths, self.output_dim)

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum(o * i + o for i, o in zip(s[:-1], s[1:]))

    def replace(self, **changes) -> NetSpec:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_widths": list(self.hidden_widths),
            "output_dim": self.output_dim,
            "activation": self.activation,
            "output_bound": self.output_bound,
        }

    @classmethod
    def from_dict(cls, d: dict) -> NetSpec:
        return cls(d["input_dim"], tuple(d["hidden_widths"]), d["output_dim"], d["activation"], d["output_bound"])


def _views(spec: NetSpec, flat: np.ndarray):
    weights, biases = [], []
    offset = 0
    s = spec.layer_sizes
    for fan_in, fan_out in zip(s[:-1], s[1:]):
        weights.append(flat[offset : offset + fan_out * fan_in].reshape(fan_out, fan_in))
        offset += fan_out * fan_in
        biases.append(flat[offset : offset + fan_out])
        offset += fan_out
    return weights, biases


class Gradient:
    """Partial derivatives of a scalar loss, laid out exactly like a net's parameters."""

    def __init__(self, spec: NetSpec, flat: np.ndarray | None = None):
        self.spec = spec
        self.flat = np.zeros(spec.n_params) if flat is None else flat
        if self.flat.shape != (spec.n_params,):
            raise ShapeError(f"gradient of size {self.flat.size} does not match {spec.n_params} parameters")
        self.weights, self.biases = _views(spec, self.flat)

    def __repr__(self):
        return f"Gradient(widths={list(self.spec.hidden_widths)}, norm={np.linalg.norm(self.flat):.4g})"


def _fan_in_uniform(rng, fan_out, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_out, fan_in)), rng.uniform(-bound, bound, size=fan_out)


class EvolvableNet:
    def __init__(self, spec: NetSpec, params: np.ndarray | None = None):
        self.spec = spec
        if params is None:
            params = np.zeros(spec.n_params)
        params = np.ascontiguousarray(params, dtype=np.float64)
        if params.shape != (spec.n_params,):
            raise ShapeError(f"{params.size} parameters given, spec needs {spec.n_params}")
        self.params = params
        self.weights, self.biases = _views(spec, self.params)
        self._act = _ACT_CODE[spec.activation]
        self._out = kernels.IDENTITY if spec.output_bound is None else kernels.SCALED_TANH
        self._bound = 1.0 if spec.output_bound is None else float(spec.output_bound)

    @classmethod
    def initialize(cls, spec: NetSpec, rng: np.random.Generator) -> EvolvableNet:
        """Fresh net with fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        net = cls(spec)
        for w, b in zip(net.weights, net.biases):
            w[...], b[...] = _fan_in_uniform(rng, *w.shape)
        return net

    def __repr__(self):
        s = self.spec
        return f"EvolvableNet({s.input_dim}->{list(s.hidden_widths)}->{s.output_dim}, {s.activation})"

    @property
    def n_params(self) -> int:
        return self.params.size

    def _as_batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ShapeError(f"expected input of width {self.spec.input_dim}, got shape {x.shape}")
        return np.ascontiguousarray(x), single

    def forward(self, x) -> np.ndarray:
        """Evaluate the net on one input vector or a (batch, input_dim) array."""
        xb, single = self._as_batch(x)
        out, _ = kernels.mlp_forward(self.weights, self.biases, xb, self._act, self._out, self._bound)
        return out[0] if single else out

    __call__ = forward

    def forward_cached(self, x):
        xb, _ = self._as_batch(x)
        return kernels.mlp_forward(self.weights, self.biases, xb, self._act, self._out, self._bound)

    def hidden_activations(self, x) -> list[np.ndarray]:
        _, cache = self.forward_cached(x)
        return cache[1:-1]

    def backward(self, cache, grad_output, input_grad: bool = False):
        """Backpropagate dL/d(output) through a cached batch forward pass.

        Returns ``(Gradient, dL/d input or None)``.
        """
        grad_output = np.asarray(grad_output, dtype=np.float64)
        if grad_output.shape != cache[-1].shape:
            raise ShapeError(f"grad_output shape {grad_output.shape} != output shape {cache[-1].shape}")
        grad = Gradient(self.spec)
        dx = kernels.mlp_backward(
            self.weights, cache, grad_output, self._act, self._out, self._bound,
            grad.weights, grad.biases, input_grad,
        )
        return grad, dx

    def clone(self) -> EvolvableNet:
        return EvolvableNet(self.spec, self.params.copy())

    def copy_from(self, other: EvolvableNet) -> None:
        """Hard-copy another net's parameters into this one (specs must match)."""
        if other.spec != self.spec:
            raise ShapeError(f"cannot copy {other.spec} into {self.spec}")
        self.params[...] = other.params

    def checksum(self) -> str:
        h = hashlib.sha256(repr(self.spec.to_dict()).encode())
        h.update(self.params.tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "format": "autorl.net",
            "version": FORMAT_VERSION,
            "spec": self.spec.to_dict(),
            "params": encode_array(self.params),
        }

    @classmethod
    def from_dict(cls, blob: dict) -> EvolvableNet:
        check_header(blob, "autorl.net")
        return cls(NetSpec.from_dict(blob["spec"]), decode_array(blob["params"]))

    def save(self, path):
        return write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> EvolvableNet:
        return cls.from_dict(read_json(path))


def forward(net: EvolvableNet, x) -> np.ndarray:
    return net.forward(x)


def value_and_grad(net: EvolvableNet, inputs, loss_fn: Callable[[np.ndarray], tuple[float, np.ndarray]]):
    """Loss and parameter gradient for ``loss_fn`` applied to the net's output.

    ``loss_fn`` maps the (batch, output_dim) output to ``(loss, dloss/doutput)``.
    """
    out, cache = net.forward_cached(inputs)
    loss, dout = loss_fn(out)
    if np.ndim(loss) != 0:
        raise ValueError(f"loss must be a scalar, got shape {np.shape(loss)}")
    grad, _ = net.backward(cache, dout)
    return float(loss), grad


def backward(net: EvolvableNet, inputs, loss_fn) -> Gradient:
    return value_and_grad(net, inputs, loss_fn)[1]


def mse_loss(target):
    """Loss function factory: mean squared error against ``target``."""
    target = np.asarray(target, dtype=np.float64)

    def loss_fn(out):
        diff = out - target.reshape(out.shape)
        return float(np.mean(diff * diff)), 2.0 * diff / diff.size

    return loss_fn


@dataclass
class AdamState:
    learning_rate: float
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_net(cls, net: EvolvableNet, learning_rate: float, **kw) -> AdamState:
        return cls(learning_rate, np.zeros(net.n_params), np.zeros(net.n_params), **kw)

    def reset(self, n_params: int | None = None) -> None:
        n = self.first_moment.size if n_params is None else n_params
        self.first_moment = np.zeros(n)
        self.second_moment = np.zeros(n)
        self.step_count = 0

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "step_count": self.step_count,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "first_moment": encode_array(self.first_moment),
            "second_moment": encode_array(self.second_moment),
        }

    @classmethod
    def from_dict(cls, d: dict) -> AdamState:
        return cls(
            d["learning_rate"], decode_array(d["first_moment"]), decode_array(d["second_moment"]),
            d["step_count"], d["beta1"], d["beta2"], d["epsilon"],
        )


def adam_step(net: EvolvableNet, state: AdamState, grad: Gradient):
    """One bias-corrected Adam update, in place. Returns ``(net, state)``."""
    n = net.n_params
    if grad.flat.size != n or state.first_moment.size != n or state.second_moment.size != n:
        raise ShapeError(
            f"adam shapes disagree: params {n}, grad {grad.flat.size}, moments {state.first_moment.size}"
        )
    if not kernels.all_finite(grad.flat):
        raise NumericError("non-finite gradient entries")
    state.step_count += 1
    kernels.adam_update(
        net.params, grad.flat, state.first_moment, state.second_moment,
        state.learning_rate, state.beta1, state.beta2, state.epsilon, state.step_count,
    )
    return net, state


# -- architecture mutations -------------------------------------------------


def grow_nodes(
    net: EvolvableNet,
    layer_index: int,
    count: int,
    rng: np.random.Generator,
    init_scale: float = DEFAULT_NEW_WEIGHT_SCALE,
) -> EvolvableNet:
    """Widen hidden layer ``layer_index`` by ``count`` units.

    Old weights form the top-left sub-blocks of the new matrices. New incoming
    rows, biases and outgoing columns are drawn from U(-init_scale, init_scale).
    """
    widths = list(net.spec.hidden_widths)
    if not 0 <= layer_index < len(widths):
        raise IndexError(f"layer_index {layer_index} out of range for {len(widths)} hidden layers")
    if count < 1:
        raise ValueError("count must be positive")
    widths[layer_index] += count
    new = EvolvableNet(net.spec.replace(hidden_widths=tuple(widths)))
    for i, (w_old, b_old) in enumerate(zip(net.weights, net.biases)):
        w_new, b_new = new.weights[i], new.biases[i]
        rows, cols = w_old.shape
        if i == layer_index:
            w_new[:rows, :] = w_old
            w_new[rows:, :] = rng.uniform(-init_scale, init_scale, size=(count, cols))
            b_new[:rows] = b_old
            b_new[rows:] = rng.uniform(-init_scale, init_scale, size=count)
        elif i == layer_index + 1:
            w_new[:, :cols] = w_old
            w_new[:, cols:] = rng.uniform(-init_scale, init_scale, size=(rows, count))
            b_new[...] = b_old
        else:
            w_new[...] = w_old
            b_new[...] = b_old
    return new


def grow_layer(net: EvolvableNet, rng: np.random.Generator) -> EvolvableNet:
    """Append a hidden layer with the width of the current last one.

    The new layer gets fresh fan-in scaled weights; every earlier layer and the
    output layer keep their parameters.
    """
    widths = net.spec.hidden_widths
    new = EvolvableNet(net.spec.replace(hidden_widths=(*widths, widths[-1])))
    n_old = len(net.weights)
    for i in range(n_old - 1):
        new.weights[i][...] = net.weights[i]
        new.biases[i][...] = net.biases[i]
    new.weights[n_old - 1][...], new.biases[n_old - 1][...] = _fan_in_uniform(rng, widths[-1], widths[-1])
    new.weights[-1][...] = net.weights[-1]
    new.biases[-1][...] = net.biases[-1]
    return new


def perturb_weights(
    net: EvolvableNet, std: float, subset_fraction: float, rng: np.random.Generator
) -> EvolvableNet:
    """Add N(0, std^2) noise to a random ``subset_fraction`` of the parameters."""
    if not std > 0:
        raise ValueError("std must be positive")
    if not 0 < subset_fraction <= 1:
        raise ValueError("subset_fraction must lie in (0, 1]")
    new = net.clone()
    if subset_fraction == 1:
        new.params += rng.normal(0.0, std, size=new.n_params)
    else:
        idx = np.flatnonzero(rng.random(new.n_params) < subset_fraction)
        new.params[idx] += rng.normal(0.0, std, size=idx.size)
    return new


def swap_activation(net: EvolvableNet, rng: np.random.Generator | None = None,
                    activation: str | None = None) -> EvolvableNet:
    """Switch the hidden activation to ``activation`` or, if not given, to a
    uniformly chosen different one."""
    if activation is None:
        choices = [a for a in ACTIVATIONS if a != net.spec.activation]
        activation = choices[rng.integers(len(choices))]
    elif activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    act = activation
    return EvolvableNet(net.spec.replace(activation=act), net.params.copy())


def count_hidden_nodes(spec: NetSpec) -> int:
    return sum(spec.hidden_widths)


def make_spec(input_dim: int, hidden: Sequence[int], output_dim: int, activation="relu", bound=None) -> NetSpec:
    return NetSpec(input_dim, tuple(hidden), output_dim, activation, bound)
