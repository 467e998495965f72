"""Small dense-network engine in NumPy.

Batches are row-major: ``(batch, features)``. A dense layer computes
``u = x @ W.T + b`` with ``W`` of shape ``(out, in)``, then ``y = f(u)``.
An optional dropout attachment multiplies ``y`` by a mask before it
feeds the next layer. :func:`forward` records every mask it applies and
:func:`backward` pushes gradients through exactly those masks.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dropout import DropoutAttachment, Mode
from .exceptions import ConfigurationError, NumericError

__all__ = [
    "LayerSpec",
    "Layer",
    "NetworkParams",
    "ForwardTrace",
    "OptimizerState",
    "init_network",
    "forward",
    "loss_bce",
    "loss_nll",
    "compute_loss",
    "backward",
    "sgd_step",
]

EPS = 1e-12

ACTIVATIONS = ("relu", "sigmoid", "softmax", "identity")


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    activation: str = "relu"
    dropout: DropoutAttachment | None = None

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ConfigurationError(
                f"layer dims must be >= 1, got {self.input_dim}->{self.output_dim}"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.dropout is not None:
            self.dropout.check_width(self.output_dim)


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    spec: LayerSpec


@dataclass
class NetworkParams:
    layers: list[Layer]

    def __post_init__(self):
        _check_chain([layer.spec for layer in self.layers])

    @property
    def specs(self) -> list[LayerSpec]:
        return [layer.spec for layer in self.layers]

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            [Layer(l.weight.copy(), l.bias.copy(), l.spec) for l in self.layers]
        )

    def without_dropout(self) -> "NetworkParams":
        """Same weights, every dropout attachment removed."""
        return NetworkParams(
            [Layer(l.weight, l.bias, replace(l.spec, dropout=None)) for l in self.layers]
        )

    def arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out


@dataclass
class ForwardTrace:
    """Everything a forward call computed.

    ``pre[l]`` and ``post[l]`` are the pre- and post-activation of layer
    ``l``; ``masks[l]`` is the mask multiplied into ``post[l]`` (``None``
    for no dropout) and ``outputs[l]`` is what fed layer ``l + 1``.
    """

    inputs: np.ndarray
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)
    masks: list[np.ndarray | None] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)
    mode: Mode = Mode.TRAIN

    @property
    def probs(self) -> np.ndarray:
        return self.outputs[-1]


@dataclass
class OptimizerState:
    learning_rate: float
    momentum: float = 0.0
    velocity: list[np.ndarray] | None = None

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigurationError("learning rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError("momentum must lie in [0, 1)")

    @classmethod
    def for_params(cls, params: NetworkParams, learning_rate, momentum=0.0):
        return cls(learning_rate, momentum, [np.zeros_like(a) for a in params.arrays()])


def _check_chain(specs):
    if not specs:
        raise ConfigurationError("network needs at least one layer")
    for i in range(1, len(specs)):
        if specs[i].input_dim != specs[i - 1].output_dim:
            raise ConfigurationError(
                f"layer {i} expects {specs[i].input_dim} inputs but layer {i - 1} "
                f"emits {specs[i - 1].output_dim}"
            )
    for i, spec in enumerate(specs[:-1]):
        if spec.activation == "softmax":
            raise ConfigurationError(f"softmax is only allowed on the final layer (layer {i})")
    if specs[-1].dropout is not None:
        raise ConfigurationError("dropout cannot be attached to the output layer")


def init_network(specs, seed=None) -> NetworkParams:
    """Uniform ``[-sqrt(6/fan_in), sqrt(6/fan_in)]`` weights, zero biases."""
    specs = list(specs)
    _check_chain(specs)
    rng = np.random.default_rng(seed)
    layers = []
    for spec in specs:
        bound = np.sqrt(6.0 / spec.input_dim)
        w = rng.uniform(-bound, bound, size=(spec.output_dim, spec.input_dim))
        layers.append(Layer(w, np.zeros(spec.output_dim), spec))
    return NetworkParams(layers)


def _activate(u, name):
    if name == "relu":
        return np.maximum(u, 0.0)
    if name == "sigmoid":
        # split by sign so exp never overflows
        out = np.empty_like(u)
        pos = u >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
        e = np.exp(u[~pos])
        out[~pos] = e / (1.0 + e)
        return out
    if name == "softmax":
        shifted = u - u.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)
    return u


def _activation_grad(grad_y, u, y, name):
    """Back-propagate `grad_y` through ``y = f(u)``."""
    if name == "relu":
        return grad_y * (u > 0)
    if name == "sigmoid":
        return grad_y * y * (1.0 - y)
    if name == "softmax":
        inner = (grad_y * y).sum(axis=1, keepdims=True)
        return y * (grad_y - inner)
    return grad_y


def forward(params: NetworkParams, batch, mode=Mode.TRAIN, rng=None, *, masks=None,
            per_example=True) -> ForwardTrace:
    """Run a batch through the network.

    Parameters
    ----------
    params : NetworkParams
    batch : array-like of shape (n, input_dim)
    mode : Mode or str
        ``train`` and ``eval_mc`` apply dropout, ``eval_deterministic``
        does not.
    rng : numpy.random.Generator, optional
        Source of dropout masks; required whenever a mask is drawn.
    masks : list, optional
        Per-layer masks to use instead of drawing (``None`` entries keep
        the layer unmasked). Used to replay a recorded trace.
    per_example : bool
        One mask per row (default) or one per call.

    Raises
    ------
    NumericError
        If any layer output is non-finite; ``err.layer`` names the layer.
    """
    mode = Mode(mode)
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    first = params.layers[0].spec
    if x.shape[1] != first.input_dim:
        raise ConfigurationError(
            f"batch has {x.shape[1]} features, network expects {first.input_dim}"
        )
    if masks is not None and len(masks) != len(params.layers):
        raise ConfigurationError("need one mask entry per layer")

    trace = ForwardTrace(inputs=x, mode=mode)
    h = x
    for i, layer in enumerate(params.layers):
        u = h @ layer.weight.T + layer.bias
        y = _activate(u, layer.spec.activation)
        if not (np.isfinite(u).all() and np.isfinite(y).all()):
            raise NumericError(f"non-finite activation in layer {i}", layer=i)
        mask = None
        out = y
        if masks is not None:
            mask = masks[i]
            if mask is not None:
                out = y * mask
        elif layer.spec.dropout is not None and mode.stochastic:
            if rng is None:
                raise ConfigurationError("a random generator is required to draw dropout masks")
            out, mask = layer.spec.dropout.apply(y, mode, rng, per_example)
        trace.pre.append(u)
        trace.post.append(y)
        trace.masks.append(mask)
        trace.outputs.append(out)
        h = out
    return trace


def loss_bce(probs, labels) -> float:
    """Mean binary cross-entropy with probabilities clamped to ``[EPS, 1-EPS]``."""
    p = np.asarray(probs, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise ConfigurationError(f"{p.size} probabilities for {y.size} labels")
    p = np.clip(p, EPS, 1.0 - EPS)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def loss_nll(probabilities, labels) -> float:
    """Mean negative log-likelihood of integer `labels` under softmax rows."""
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels)
    if p.ndim != 2 or p.shape[0] != y.shape[0]:
        raise ConfigurationError(f"probabilities {p.shape} do not match {y.shape[0]} labels")
    if y.size and (y.min() < 0 or y.max() >= p.shape[1]):
        raise ConfigurationError(f"labels must lie in [0, {p.shape[1]})")
    if not np.allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-9):
        raise ConfigurationError("probability rows must sum to 1")
    picked = np.clip(p[np.arange(y.shape[0]), y.astype(int)], EPS, 1.0)
    return float(-np.mean(np.log(picked)))


def compute_loss(probs, labels, loss_kind) -> float:
    if loss_kind == "bce":
        return loss_bce(probs, labels)
    if loss_kind == "nll":
        return loss_nll(probs, labels)
    raise ConfigurationError(f"unknown loss {loss_kind!r}")


def _output_delta(trace, spec, labels, loss_kind):
    """d(loss)/d(pre-activation) of the output layer, already batch-averaged."""
    p = trace.post[-1]
    n = p.shape[0]
    labels = np.asarray(labels)
    if loss_kind == "bce":
        y = labels.astype(np.float64).reshape(p.shape)
        if spec.activation == "sigmoid":
            return (p - y) / n
        pc = np.clip(p, EPS, 1.0 - EPS)
        grad_p = (pc - y) / (pc * (1.0 - pc)) / n
        grad_p *= (p > EPS) & (p < 1.0 - EPS)
        return _activation_grad(grad_p, trace.pre[-1], p, spec.activation)
    if loss_kind == "nll":
        onehot = np.zeros_like(p)
        onehot[np.arange(n), labels.astype(int)] = 1.0
        if spec.activation == "softmax":
            return (p - onehot) / n
        pc = np.clip(p, EPS, None)
        grad_p = -onehot / pc / n * (p > EPS)
        return _activation_grad(grad_p, trace.pre[-1], p, spec.activation)
    raise ConfigurationError(f"unknown loss {loss_kind!r}")


def backward(trace: ForwardTrace, params: NetworkParams, labels, loss_kind):
    """Exact gradients of the mean loss for the masks stored in `trace`.

    Returns a list ``[(grad_W0, grad_b0), (grad_W1, grad_b1), ...]``
    matching ``params.layers``.
    """
    if len(trace.pre) != len(params.layers):
        raise ConfigurationError("trace and params have different depth")
    for layer, u in zip(params.layers, trace.pre):
        if u.shape[1] != layer.spec.output_dim:
            raise ConfigurationError("trace was not produced by these params")

    grads = [None] * len(params.layers)
    delta = _output_delta(trace, params.layers[-1].spec, labels, loss_kind)
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        h_in = trace.inputs if i == 0 else trace.outputs[i - 1]
        grads[i] = (delta.T @ h_in, delta.sum(axis=0))
        if i == 0:
            break  # input gradient is never needed
        grad_h = delta @ layer.weight
        prev_mask = trace.masks[i - 1]
        if prev_mask is not None:
            grad_h = grad_h * prev_mask
        prev = params.layers[i - 1]
        delta = _activation_grad(grad_h, trace.pre[i - 1], trace.post[i - 1], prev.spec.activation)
    return grads


def sgd_step(params: NetworkParams, grads, state: OptimizerState):
    """Classical momentum SGD, in place: ``v = m*v + g; w -= lr*v``.

    Returns ``(params, state)`` for convenience.
    """
    arrays = params.arrays()
    flat = [g for pair in grads for g in pair]
    if len(flat) != len(arrays) or any(g.shape != a.shape for g, a in zip(flat, arrays)):
        raise ConfigurationError("gradient shapes do not match parameters")
    if state.velocity is None:
        state.velocity = [np.zeros_like(a) for a in arrays]
    if len(state.velocity) != len(arrays):
        raise ConfigurationError("optimizer state does not match parameters")
    for a, g, v in zip(arrays, flat, state.velocity):
        if v.shape != a.shape:
            raise ConfigurationError("optimizer state does not match parameters")
        v *= state.momentum
        v += g
        a -= state.learning_rate * v
    return params, state
