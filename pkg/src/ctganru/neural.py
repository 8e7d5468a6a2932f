"""A small feed-forward network engine with hand-written backprop.

Only the layer kinds the tabular GAN needs are provided: dense, batch norm,
dropout, elementwise activations, a concatenating skip block and a mixed
tanh / Gumbel-softmax output head. Everything runs in float64 on numpy.

A training-mode ``forward`` caches what ``backward`` needs and ``backward``
consumes it, so a second ``backward`` without a new ``forward`` raises.
Eval-mode ``forward`` leaves layers untouched and is safe to share.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, NonFiniteError

BN_MOMENTUM = 0.9
BN_EPS = 1e-8


class StaleCacheError(RuntimeError):
    pass


def glorot_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def sample_gumbel(rng, shape):
    u = rng.random(shape)
    return -np.log(-np.log(np.clip(u, 1e-300, 1.0 - 1e-16)))


def gumbel_softmax(logits, temperature, rng=None, noise=None):
    """``softmax((logits + g) / temperature)`` with ``g`` standard Gumbel noise.

    Pass ``noise`` to fix ``g`` (gradient checks); with neither ``rng`` nor
    ``noise`` the plain tempered softmax is returned.
    """
    if temperature <= 0:
        raise ConfigError("Gumbel temperature must be positive")
    logits = np.asarray(logits, dtype=float)
    if noise is None:
        noise = 0.0 if rng is None else sample_gumbel(rng, logits.shape)
    return softmax((logits + noise) / temperature)


def softmax_backward(p, grad, temperature=1.0):
    """Vector-Jacobian product of ``p = softmax(x / temperature)``."""
    return p * (grad - (grad * p).sum(axis=-1, keepdims=True)) / temperature


class Layer:
    kind = "layer"

    def __init__(self):
        self._cache = None
        self.params = {}
        self.grads = {}

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def _pop_cache(self):
        if self._cache is None:
            raise StaleCacheError(f"{self.kind}: backward called without a matching forward")
        cache, self._cache = self._cache, None
        return cache

    def spec(self) -> dict:
        return {"kind": self.kind}

    def buffers(self) -> dict:
        """Non-trainable state that must be serialized (batch-norm running stats)."""
        return {}

    def sublayers(self):
        return []

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_dim, out_dim, rng):
        super().__init__()
        self.in_dim, self.out_dim = int(in_dim), int(out_dim)
        self.params = {"W": glorot_uniform(rng, self.in_dim, self.out_dim), "b": np.zeros(self.out_dim)}
        self.zero_grad()

    def forward(self, x, training=False, rng=None):
        if x.shape[-1] != self.in_dim:
            raise ConfigError(f"dense layer expects width {self.in_dim}, got {x.shape[-1]}")
        if training:
            self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, grad):
        x = self._pop_cache()
        self.grads["W"] = x.T @ grad
        self.grads["b"] = grad.sum(axis=0)
        return grad @ self.params["W"].T

    def spec(self):
        return {"kind": self.kind, "in_dim": self.in_dim, "out_dim": self.out_dim}


class BatchNorm(Layer):
    kind = "batch_norm"

    def __init__(self, dim, momentum=BN_MOMENTUM, eps=BN_EPS):
        super().__init__()
        self.dim = int(dim)
        self.momentum = momentum
        self.eps = eps
        self.params = {"scale": np.ones(self.dim), "shift": np.zeros(self.dim)}
        self.running_mean = np.zeros(self.dim)
        self.running_var = np.ones(self.dim)
        self.zero_grad()

    def forward(self, x, training=False, rng=None):
        if x.shape[-1] != self.dim:
            raise ConfigError(f"batch norm expects width {self.dim}, got {x.shape[-1]}")
        if training:
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mu
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
        else:
            mu, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        if training:
            self._cache = (xhat, inv)
        return self.params["scale"] * xhat + self.params["shift"]

    def backward(self, grad):
        xhat, inv = self._pop_cache()
        self.grads["scale"] = (grad * xhat).sum(axis=0)
        self.grads["shift"] = grad.sum(axis=0)
        g = grad * self.params["scale"]
        n = grad.shape[0]
        return inv / n * (n * g - g.sum(axis=0) - xhat * (g * xhat).sum(axis=0))

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def spec(self):
        return {"kind": self.kind, "in_dim": self.dim, "out_dim": self.dim, "momentum": self.momentum}


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigError("dropout rate must lie in [0, 1)")
        self.rate = float(rate)

    def forward(self, x, training=False, rng=None):
        if not training or self.rate == 0.0:
            if training:
                self._cache = 1.0
            return x
        if rng is None:
            raise ConfigError("dropout in training mode needs an rng")
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        self._cache = mask
        return x * mask

    def backward(self, grad):
        return grad * self._pop_cache()

    def spec(self):
        return {"kind": self.kind, "rate": self.rate}


class Activation(Layer):
    kind = "activation"

    def __init__(self, name, slope=0.2):
        super().__init__()
        if name not in ("relu", "leaky_relu", "tanh", "sigmoid", "identity"):
            raise ConfigError(f"unknown activation {name!r}")
        self.name = name
        self.slope = float(slope)

    def forward(self, x, training=False, rng=None):
        if self.name == "relu":
            y = np.maximum(x, 0.0)
        elif self.name == "leaky_relu":
            y = np.where(x > 0, x, self.slope * x)
        elif self.name == "tanh":
            y = np.tanh(x)
        elif self.name == "sigmoid":
            y = 0.5 * (1.0 + np.tanh(0.5 * x))
        else:
            y = x
        if training:
            self._cache = (x, y)
        return y

    def backward(self, grad):
        x, y = self._pop_cache()
        if self.name == "relu":
            return grad * (x > 0)
        if self.name == "leaky_relu":
            return grad * np.where(x > 0, 1.0, self.slope)
        if self.name == "tanh":
            return grad * (1.0 - y * y)
        if self.name == "sigmoid":
            return grad * y * (1.0 - y)
        return grad

    def spec(self):
        return {"kind": self.kind, "name": self.name, "slope": self.slope}


class Sequential(Layer):
    kind = "sequential"

    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x, training=False, rng=None):
        for layer in self.layers:
            x = layer.forward(x, training, rng)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def sublayers(self):
        return self.layers

    def spec(self):
        return {"kind": self.kind, "layers": [l.spec() for l in self.layers]}


class ConcatSkip(Layer):
    """``y = x (+) block(x)`` -- the input is carried alongside the block output."""

    kind = "concat_skip"

    def __init__(self, block):
        super().__init__()
        self.block = block

    def forward(self, x, training=False, rng=None):
        if training:
            self._cache = x.shape[-1]
        return np.concatenate([x, self.block.forward(x, training, rng)], axis=-1)

    def backward(self, grad):
        d = self._pop_cache()
        return grad[:, :d] + self.block.backward(grad[:, d:])

    def sublayers(self):
        return [self.block]

    def spec(self):
        return {"kind": self.kind, "block": self.block.spec()}


class MixedOutput(Layer):
    """Per-segment output activation: ``tanh`` units and Gumbel-softmax blocks.

    ``segments`` is a list of ``(activation, size)`` with activation in
    ``{"tanh", "gumbel"}``. Gumbel noise is drawn whenever an ``rng`` is
    given; ``fixed_noise`` (same width as the input) overrides it.
    """

    kind = "mixed_output"

    def __init__(self, segments, temperature=0.2):
        super().__init__()
        if temperature <= 0:
            raise ConfigError("Gumbel temperature must be positive")
        self.segments = [(str(a), int(s)) for a, s in segments]
        for a, s in self.segments:
            if a not in ("tanh", "gumbel") or s < 1:
                raise ConfigError(f"bad output segment {(a, s)}")
        self.temperature = float(temperature)
        self.width = sum(s for _, s in self.segments)
        self.fixed_noise = None

    def forward(self, x, training=False, rng=None):
        if x.shape[-1] != self.width:
            raise ConfigError(f"output head expects width {self.width}, got {x.shape[-1]}")
        y = np.empty_like(x)
        pos = 0
        for act, size in self.segments:
            sl = slice(pos, pos + size)
            if act == "tanh":
                y[:, sl] = np.tanh(x[:, sl])
            else:
                if self.fixed_noise is not None:
                    noise = self.fixed_noise[:, sl]
                elif rng is not None:
                    noise = sample_gumbel(rng, (x.shape[0], size))
                else:
                    noise = None
                y[:, sl] = gumbel_softmax(x[:, sl], self.temperature, noise=noise)
            pos += size
        if training:
            self._cache = y
        return y

    def backward(self, grad):
        y = self._pop_cache()
        out = np.empty_like(grad)
        pos = 0
        for act, size in self.segments:
            sl = slice(pos, pos + size)
            if act == "tanh":
                out[:, sl] = grad[:, sl] * (1.0 - y[:, sl] ** 2)
            else:
                out[:, sl] = softmax_backward(y[:, sl], grad[:, sl], self.temperature)
            pos += size
        return out

    def spec(self):
        return {"kind": self.kind, "segments": [list(s) for s in self.segments], "temperature": self.temperature}


def iter_layers(layer):
    """Depth-first walk over a layer tree, parents before children."""
    yield layer
    for sub in layer.sublayers():
        yield from iter_layers(sub)


class Network:
    """A named layer tree with flat, ordered access to its parameters."""

    def __init__(self, root: Layer, name: str = "net"):
        self.root = root
        self.name = name

    def forward(self, x, training=False, rng=None):
        return self.root.forward(np.asarray(x, dtype=float), training, rng)

    def backward(self, grad):
        return self.root.backward(grad)

    def _leaves(self):
        return [l for l in iter_layers(self.root) if l.params or l.buffers()]

    def named_parameters(self):
        out = []
        for i, layer in enumerate(self._leaves()):
            for k in layer.params:
                out.append((f"{self.name}.{i}.{layer.kind}.{k}", layer, k))
        return out

    def parameters(self):
        return [layer.params[k] for _, layer, k in self.named_parameters()]

    def gradients(self):
        return [layer.grads[k] for _, layer, k in self.named_parameters()]

    def parameter_names(self):
        return [n for n, _, _ in self.named_parameters()]

    def state_dict(self) -> dict:
        """Every trainable array and buffer in a stable order."""
        state = {}
        for i, layer in enumerate(self._leaves()):
            for k, v in layer.params.items():
                state[f"{self.name}.{i}.{layer.kind}.{k}"] = v
            for k, v in layer.buffers().items():
                state[f"{self.name}.{i}.{layer.kind}.{k}"] = v
        return state

    def load_state_dict(self, state: dict) -> None:
        for i, layer in enumerate(self._leaves()):
            for k in list(layer.params):
                key = f"{self.name}.{i}.{layer.kind}.{k}"
                arr = np.asarray(state[key], dtype=float)
                if arr.shape != layer.params[k].shape:
                    raise ConfigError(f"shape mismatch for {key}: {arr.shape} vs {layer.params[k].shape}")
                layer.params[k] = arr.copy()
            if isinstance(layer, BatchNorm):
                layer.running_mean = np.asarray(state[f"{self.name}.{i}.{layer.kind}.running_mean"], dtype=float).copy()
                layer.running_var = np.asarray(state[f"{self.name}.{i}.{layer.kind}.running_var"], dtype=float).copy()
        self.zero_grad()

    def zero_grad(self):
        for layer in self._leaves():
            layer.zero_grad()

    def spec(self):
        return self.root.spec()


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **kw) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kw)


def adam_step(params, grads, state: AdamState, names=None) -> AdamState:
    """One in-place Adam update with bias correction; ``state.t`` advances by one.

    A non-finite gradient aborts before any parameter is touched; the error
    names the offending parameter when ``names`` is given.
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ConfigError("params, grads and Adam moments must align")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ConfigError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient", where=names[i] if names else f"parameter {i}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


class Adam:
    """Adam bound to one :class:`Network`; arrays are updated in place."""

    def __init__(self, network: Network, lr=1e-3, beta1=0.5, beta2=0.9, eps=1e-8):
        self.network = network
        self.state = AdamState.for_params(network.parameters(), lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self):
        adam_step(
            self.network.parameters(),
            self.network.gradients(),
            self.state,
            names=self.network.parameter_names(),
        )
