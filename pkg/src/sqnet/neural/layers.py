"""Layers with hand-written forward and backward passes.

Layers never own their parameters. The enclosing :class:`~sqnet.neural.Mlp`
keeps one flat parameter vector and hands each layer a dict of views into it
(``P``), plus a matching dict of gradient views (``G``) on the backward pass.
Whatever a layer needs from the forward pass goes in the ``cache`` it returns.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import DimensionError

# tanh approximation of GELU
GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715


class Layer:
    name = "layer"

    def param_shapes(self) -> list[tuple[str, tuple]]:
        return []

    def init_params(self, P: dict, rng: np.random.Generator) -> None:
        pass

    def forward(self, x, P, train):
        raise NotImplementedError

    def backward(self, gy, cache, P, G):
        raise NotImplementedError

    def describe(self) -> str:
        return self.name

    # layers holding running statistics override these
    def buffers(self) -> dict:
        return {}

    def load_buffers(self, state: dict) -> None:
        pass


class Linear(Layer):
    name = "linear"

    def __init__(self, d_in: int, d_out: int, bias: bool = True):
        self.d_in, self.d_out, self.bias = int(d_in), int(d_out), bool(bias)

    def param_shapes(self):
        shapes = [("W", (self.d_out, self.d_in))]
        if self.bias:
            shapes.append(("b", (self.d_out,)))
        return shapes

    def init_params(self, P, rng):
        bound = math.sqrt(1.0 / self.d_in)
        P["W"][...] = rng.uniform(-bound, bound, size=P["W"].shape)
        if self.bias:
            P["b"][...] = rng.uniform(-bound, bound, size=P["b"].shape)

    def forward(self, x, P, train):
        if x.shape[-1] != self.d_in:
            raise DimensionError(f"linear layer expects width {self.d_in}, got {x.shape[-1]}")
        y = x @ P["W"].T
        if self.bias:
            y = y + P["b"]
        return y, x

    def backward(self, gy, cache, P, G):
        x = cache
        G["W"] += gy.T @ x
        if self.bias:
            G["b"] += gy.sum(axis=0)
        return gy @ P["W"]

    def describe(self):
        return f"linear({self.d_in},{self.d_out}{'' if self.bias else ',nobias'})"


class BatchNorm(Layer):
    """Batch normalisation over the batch axis.

    Train mode normalises with batch statistics and updates the running
    estimates; eval mode uses the frozen running estimates, so the layer is a
    fixed per-sample affine map.
    """

    name = "batchnorm"

    def __init__(self, width: int, eps: float = 1e-5, momentum: float = 0.1):
        self.width, self.eps, self.momentum = int(width), float(eps), float(momentum)
        self.running_mean = np.zeros(self.width)
        self.running_var = np.ones(self.width)

    def param_shapes(self):
        return [("gamma", (self.width,)), ("beta", (self.width,))]

    def init_params(self, P, rng):
        P["gamma"][...] = 1.0
        P["beta"][...] = 0.0

    def forward(self, x, P, train):
        if x.shape[-1] != self.width:
            raise DimensionError(f"batchnorm expects width {self.width}, got {x.shape[-1]}")
        if train:
            if x.shape[0] < 2:
                raise DimensionError("batch normalisation in train mode needs a batch of at least 2")
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mu
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            mu, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        return P["gamma"] * xhat + P["beta"], (xhat, inv, train)

    def backward(self, gy, cache, P, G):
        xhat, inv, train = cache
        G["gamma"] += (gy * xhat).sum(axis=0)
        G["beta"] += gy.sum(axis=0)
        gxhat = gy * P["gamma"]
        if not train:
            return gxhat * inv
        n = gy.shape[0]
        return (inv / n) * (
            n * gxhat - gxhat.sum(axis=0) - xhat * (gxhat * xhat).sum(axis=0)
        )

    def describe(self):
        return f"batchnorm({self.width})"

    def buffers(self):
        return {"running_mean": self.running_mean.copy(), "running_var": self.running_var.copy()}

    def load_buffers(self, state):
        self.running_mean = np.array(state["running_mean"], dtype=float)
        self.running_var = np.array(state["running_var"], dtype=float)


class LayerNorm(Layer):
    name = "layernorm"

    def __init__(self, width: int, eps: float = 1e-5):
        self.width, self.eps = int(width), float(eps)

    def param_shapes(self):
        return [("gamma", (self.width,)), ("beta", (self.width,))]

    def init_params(self, P, rng):
        P["gamma"][...] = 1.0
        P["beta"][...] = 0.0

    def forward(self, x, P, train):
        if x.shape[-1] != self.width:
            raise DimensionError(f"layernorm expects width {self.width}, got {x.shape[-1]}")
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        return P["gamma"] * xhat + P["beta"], (xhat, inv)

    def backward(self, gy, cache, P, G):
        xhat, inv = cache
        G["gamma"] += (gy * xhat).sum(axis=0)
        G["beta"] += gy.sum(axis=0)
        gxhat = gy * P["gamma"]
        k = self.width
        return (inv / k) * (
            k * gxhat
            - gxhat.sum(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True)
        )

    def describe(self):
        return f"layernorm({self.width})"


class ReLU(Layer):
    name = "relu"

    def forward(self, x, P, train):
        mask = x > 0
        return x * mask, mask

    def backward(self, gy, cache, P, G):
        return gy * cache


class GELU(Layer):
    """``0.5 x (1 + tanh(c (x + a x^3)))`` with c = sqrt(2/pi), a = 0.044715."""

    name = "gelu"

    def forward(self, x, P, train):
        x2 = x * x
        u = GELU_C * x * (1.0 + GELU_A * x2)
        t = np.tanh(u)
        return 0.5 * x * (1.0 + t), (x, t)

    def backward(self, gy, cache, P, G):
        x, t = cache
        du = GELU_C * (1.0 + 3.0 * GELU_A * x * x)
        return gy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


class Tanh(Layer):
    name = "tanh"

    def forward(self, x, P, train):
        y = np.tanh(x)
        return y, y

    def backward(self, gy, cache, P, G):
        return gy * (1.0 - cache * cache)


class Sigmoid(Layer):
    name = "sigmoid"

    def forward(self, x, P, train):
        y = 0.5 * (1.0 + np.tanh(0.5 * x))
        return y, y

    def backward(self, gy, cache, P, G):
        return gy * cache * (1.0 - cache)


class Cos(Layer):
    name = "cos"

    def forward(self, x, P, train):
        return np.cos(x), x

    def backward(self, gy, cache, P, G):
        return -gy * np.sin(cache)


class CosRelu(Layer):
    """Cosine on even channels, ReLU on odd channels."""

    name = "cosrelu"

    def forward(self, x, P, train):
        even = (np.arange(x.shape[-1]) % 2) == 0
        y = np.where(even, np.cos(x), np.maximum(x, 0.0))
        return y, (x, even)

    def backward(self, gy, cache, P, G):
        x, even = cache
        return gy * np.where(even, -np.sin(x), (x > 0).astype(float))


class Scale(Layer):
    name = "scale"

    def __init__(self, factor: float):
        self.factor = float(factor)

    def forward(self, x, P, train):
        return self.factor * x, None

    def backward(self, gy, cache, P, G):
        return self.factor * gy

    def describe(self):
        return f"scale({self.factor!r})"


ACTIVATIONS = {
    "relu": ReLU,
    "gelu": GELU,
    "tanh": Tanh,
    "sigmoid": Sigmoid,
    "cos": Cos,
    "cosrelu": CosRelu,
}


class Residual(Layer):
    """``x + f(x)`` for an inner stack of layers."""

    name = "residual"

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def describe(self):
        return "residual[" + ",".join(layer.describe() for layer in self.layers) + "]"
