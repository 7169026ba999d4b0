"""A small fully connected network with hand-derived gradients and Adam.

Hidden layers apply ``tanh`` (default) or ``relu``; the last layer is linear.
Everything is float64 and every function is pure: parameters and optimizer
state are returned as new objects rather than mutated.

Serialization format (``to_dict`` / ``from_dict``, stored as JSON)::

    {"format": "drcit-mlp", "version": 1,
     "layer_sizes": [d_in, h_1, ..., d_out], "activation": "tanh",
     "values": [W_1 row-major, b_1, W_2 row-major, b_2, ...]}

Floats are written with ``repr`` so a save/load cycle is bitwise exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingError, UsageError

ACTIVATIONS = ("tanh", "relu")
FORMAT_NAME = "drcit-mlp"
FORMAT_VERSION = 1

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class MlpParams:
    weights: list  # each (out, in)
    biases: list  # each (out,)
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise UsageError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise UsageError("need one bias per weight matrix and at least one layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise UsageError(f"layer {i}: weight {W.shape} and bias {b.shape} do not agree")
            if i > 0 and W.shape[1] != self.weights[i - 1].shape[0]:
                raise UsageError(f"layer {i} expects width {W.shape[1]}, previous layer gives {self.weights[i - 1].shape[0]}")

    @property
    def layer_sizes(self) -> list:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def arrays(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def with_arrays(self, arrays) -> "MlpParams":
        return MlpParams(list(arrays[0::2]), list(arrays[1::2]), self.activation)

    def copy(self) -> "MlpParams":
        return self.with_arrays([a.copy() for a in self.arrays()])


@dataclass
class OptState:
    first: list
    second: list
    step: int = 0


@dataclass
class ForwardCache:
    inputs: list = field(default_factory=list)  # input to each layer
    pre: list = field(default_factory=list)  # pre-activation of each layer
    shapes: tuple = ()


def init(layer_sizes, activation: str = "tanh", seed=None) -> MlpParams:
    """Glorot-uniform weights, zero biases; deterministic for a given seed."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise UsageError(f"need at least two layer sizes, all >= 1; got {layer_sizes!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, activation)


def _act(activation, x):
    return np.tanh(x) if activation == "tanh" else np.maximum(x, 0.0)


def _act_grad(activation, pre, post):
    if activation == "tanh":
        return 1.0 - post * post
    return (pre > 0).astype(np.float64)


def forward(params: MlpParams, batch):
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise UsageError(f"batch must have shape (b, {params.input_dim}), got {x.shape}")
    cache = ForwardCache(shapes=tuple(W.shape for W in params.weights))
    h = x
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        cache.inputs.append(h)
        a = h @ W.T + b
        cache.pre.append(a)
        h = a if i == last else _act(params.activation, a)
    return h, cache


def backward(params: MlpParams, cache: ForwardCache, out_grad):
    """Gradients of ``sum(output * out_grad)`` w.r.t. parameters and input.

    Returns ``(grads, input_grad)`` with ``grads`` a list aligned with
    ``params.arrays()``.
    """
    if cache.shapes != tuple(W.shape for W in params.weights):
        raise UsageError("cache does not belong to these parameters")
    g = np.asarray(out_grad, dtype=np.float64)
    if g.shape != cache.pre[-1].shape:
        raise UsageError(f"out_grad shape {g.shape} does not match output {cache.pre[-1].shape}")
    n_layers = len(params.weights)
    grads = [None] * (2 * n_layers)
    for i in range(n_layers - 1, -1, -1):
        if i < n_layers - 1:
            post = cache.inputs[i + 1]
            g = g * _act_grad(params.activation, cache.pre[i], post)
        grads[2 * i] = g.T @ cache.inputs[i]
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ params.weights[i]
    return grads, g


def init_state(params: MlpParams) -> OptState:
    zeros = [np.zeros_like(a) for a in params.arrays()]
    return OptState(zeros, [z.copy() for z in zeros], 0)


def adam_step(params: MlpParams, grads, state: OptState, lr: float):
    arrays = params.arrays()
    if len(grads) != len(arrays) or any(g.shape != a.shape for g, a in zip(grads, arrays)):
        raise UsageError("gradient shapes do not match parameters")
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise TrainingError("non-finite gradient", step=state.step + 1)
    t = state.step + 1
    first, second, new = [], [], []
    c1 = 1.0 - BETA1**t
    c2 = 1.0 - BETA2**t
    for a, g, m, v in zip(arrays, grads, state.first, state.second):
        m = BETA1 * m + (1.0 - BETA1) * g
        v = BETA2 * v + (1.0 - BETA2) * g * g
        new.append(a - lr * (m / c1) / (np.sqrt(v / c2) + EPS))
        first.append(m)
        second.append(v)
    return params.with_arrays(new), OptState(first, second, t)


def to_dict(params: MlpParams) -> dict:
    values = np.concatenate([a.reshape(-1) for a in params.arrays()])
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "layer_sizes": params.layer_sizes,
        "activation": params.activation,
        "values": values.tolist(),
    }


def from_dict(doc: dict) -> MlpParams:
    if doc.get("format") != FORMAT_NAME or doc.get("version") != FORMAT_VERSION:
        raise UsageError(f"not a {FORMAT_NAME} v{FORMAT_VERSION} record")
    sizes = [int(s) for s in doc["layer_sizes"]]
    values = np.asarray(doc["values"], dtype=np.float64)
    expected = sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:]))
    if values.shape != (expected,):
        raise UsageError(f"expected {expected} parameter values, found {values.size}")
    weights, biases, pos = [], [], 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(values[pos : pos + fan_in * fan_out].reshape(fan_out, fan_in).copy())
        pos += fan_in * fan_out
        biases.append(values[pos : pos + fan_out].copy())
        pos += fan_out
    return MlpParams(weights, biases, doc["activation"])


def save(params: MlpParams, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_dict(params), fh)


def load(path) -> MlpParams:
    with open(path, encoding="utf-8") as fh:
        return from_dict(json.load(fh))
