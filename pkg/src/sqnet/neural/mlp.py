"""Residual fully-connected networks over a flat parameter vector."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, ParseError, StateError
from ..rng import make_rng
from .layers import (
    ACTIVATIONS,
    BatchNorm,
    GELU,
    Layer,
    LayerNorm,
    Linear,
    ReLU,
    Residual,
)

STYLES = ("resnet", "transformer")


def _norm_act(style: str, width: int, norm: bool) -> list[Layer]:
    if style == "resnet":
        return ([BatchNorm(width)] if norm else []) + [ReLU()]
    return ([LayerNorm(width)] if norm else []) + [GELU()]


def residual_block(style: str, width: int, norm: bool = True) -> Residual:
    """One residual block.

    ``resnet``:      x + Linear(ReLU(BatchNorm(Linear(x))))
    ``transformer``: x + Linear(GELU(Linear(LayerNorm(x))))
    """
    if style == "resnet":
        inner = [Linear(width, width)] + _norm_act(style, width, norm) + [Linear(width, width)]
    elif style == "transformer":
        inner = ([LayerNorm(width)] if norm else []) + [Linear(width, width), GELU(), Linear(width, width)]
    else:
        raise ValueError(f"unknown style {style!r}; expected one of {STYLES}")
    return Residual(inner)


class Mlp:
    """A stack of layers whose parameters live in one flat vector ``params``.

    The default architecture is ``Linear(d_in, hidden)``, ``blocks`` residual
    blocks, a norm/activation, ``Linear(hidden, d_out)`` and an optional
    terminal ``sigmoid``/``tanh``. With ``hidden=None`` it is a single linear
    layer plus the optional terminal activation.
    """

    def __init__(
        self,
        d_in: int,
        d_out: int,
        hidden: int | None = None,
        blocks: int = 0,
        style: str = "resnet",
        out_act: str | None = None,
        norm: bool = True,
        bias: bool = True,
        seed: int = 0,
        layers: list[Layer] | None = None,
    ):
        if style not in STYLES:
            raise ValueError(f"unknown style {style!r}; expected one of {STYLES}")
        self.d_in, self.d_out = int(d_in), int(d_out)
        self.style = style
        if layers is None:
            layers = []
            if hidden is None:
                if blocks:
                    raise ValueError("residual blocks need a hidden width")
                layers.append(Linear(d_in, d_out, bias=bias))
            else:
                layers.append(Linear(d_in, hidden, bias=bias))
                layers.extend(residual_block(style, hidden, norm) for _ in range(blocks))
                layers.extend(_norm_act(style, hidden, norm))
                layers.append(Linear(hidden, d_out, bias=bias))
            if out_act is not None:
                layers.append(ACTIVATIONS[out_act]())
        self.layers = list(layers)
        self._build_layout()
        self.params = np.zeros(self.n_params)
        rng = make_rng(seed, "mlp-init")
        for path, layer in self._walk():
            layer.init_params(self._views(self.params, path, layer), rng)
        self._version = 0
        self._cache = None

    @classmethod
    def from_layers(cls, layers: list[Layer], d_in: int, d_out: int, seed: int = 0, style: str = "resnet"):
        return cls(d_in, d_out, layers=layers, seed=seed, style=style)

    # -- layout ------------------------------------------------------------

    def _walk(self, layers=None, prefix=""):
        layers = self.layers if layers is None else layers
        for i, layer in enumerate(layers):
            path = f"{prefix}{i}"
            if isinstance(layer, Residual):
                yield from self._walk(layer.layers, path + ".")
            else:
                yield path, layer

    def _build_layout(self):
        self.layout = []  # (path, name, offset, shape)
        offset = 0
        for path, layer in self._walk():
            for name, shape in layer.param_shapes():
                size = int(np.prod(shape))
                self.layout.append((path, name, offset, tuple(shape)))
                offset += size
        self.n_params = offset
        self._by_path = {}
        for path, name, off, shape in self.layout:
            self._by_path.setdefault(path, []).append((name, off, shape))

    def _views(self, flat, path, layer=None):
        return {
            name: flat[off : off + int(np.prod(shape))].reshape(shape)
            for name, off, shape in self._by_path.get(path, [])
        }

    def param_view(self, path: str, name: str) -> np.ndarray:
        """Writable view of one named parameter, e.g. ``param_view("0", "W")``."""
        for p, n, off, shape in self.layout:
            if p == path and n == name:
                return self.params[off : off + int(np.prod(shape))].reshape(shape)
        raise KeyError(f"no parameter {name!r} at {path!r}")

    def set_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_params,):
            raise DimensionError(f"expected {self.n_params} parameters, got {flat.shape}")
        self.params = flat.copy()
        self._version += 1

    def touch(self) -> None:
        """Mark parameters as modified in place (invalidates the forward cache)."""
        self._version += 1

    def describe(self) -> str:
        return "|".join(layer.describe() for layer in self.layers)

    # -- forward / backward --------------------------------------------------

    def _forward_stack(self, layers, x, prefix, train):
        caches = []
        for i, layer in enumerate(layers):
            path = f"{prefix}{i}"
            if isinstance(layer, Residual):
                inner, c = self._forward_stack(layer.layers, x, path + ".", train)
                if inner.shape != x.shape:
                    raise DimensionError("residual block must preserve width")
                x = x + inner
            else:
                x, c = layer.forward(x, self._views(self.params, path), train)
            caches.append(c)
        return x, caches

    def _backward_stack(self, layers, gy, caches, prefix, grad):
        for i in range(len(layers) - 1, -1, -1):
            layer = layers[i]
            path = f"{prefix}{i}"
            if isinstance(layer, Residual):
                gy = gy + self._backward_stack(layer.layers, gy, caches[i], path + ".", grad)
            else:
                gy = layer.backward(
                    gy, caches[i], self._views(self.params, path), self._views(grad, path)
                )
        return gy

    def forward(self, x, train: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.ndim != 2 or X.shape[1] != self.d_in:
            raise DimensionError(f"network expects inputs of width {self.d_in}, got shape {x.shape}")
        y, caches = self._forward_stack(self.layers, X, "", train)
        self._cache = (X, self._version, caches)
        return y[0] if single else y

    def __call__(self, x, train: bool = False):
        return self.forward(x, train)

    def backward_full(self, x, upstream) -> tuple[np.ndarray, np.ndarray]:
        """Gradients of ``<upstream, forward(x)>`` w.r.t. parameters and input."""
        if self._cache is None:
            raise StateError("backward called before forward")
        X, version, caches = self._cache
        x = np.asarray(x, dtype=float)
        x2 = x[None, :] if x.ndim == 1 else x
        if version != self._version or not (x2 is X or (x2.shape == X.shape and np.array_equal(x2, X))):
            raise StateError("forward cache is stale: call forward on the same input first")
        g = np.asarray(upstream, dtype=float)
        g = g[None, :] if g.ndim == 1 else g
        if g.shape != (X.shape[0], self.d_out):
            raise DimensionError(f"upstream gradient must be {X.shape[0]}x{self.d_out}, got {g.shape}")
        grad = np.zeros(self.n_params)
        gx = self._backward_stack(self.layers, g, caches, "", grad)
        return grad, (gx[0] if x.ndim == 1 else gx)

    def backward(self, x, upstream) -> np.ndarray:
        return self.backward_full(x, upstream)[0]

    # -- checkpoints --------------------------------------------------------

    def buffers(self) -> dict:
        return {path: layer.buffers() for path, layer in self._walk() if layer.buffers()}

    def load_buffers(self, state: dict) -> None:
        layers = dict(self._walk())
        for path, buf in state.items():
            layers[path].load_buffers(buf)

    def to_bytes(self) -> bytes:
        from ..serialize import dumps_document

        buffers = {p: {k: v.tolist() for k, v in b.items()} for p, b in self.buffers().items()}
        return dumps_document(
            "mlp",
            self.params,
            architecture=self.describe(),
            d_in=self.d_in,
            d_out=self.d_out,
            layout=[[p, n, o, list(s)] for p, n, o, s in self.layout],
            buffers=buffers,
        )

    def load_bytes(self, data) -> None:
        from ..serialize import loads_document

        doc, values = loads_document(data, kind="mlp")
        if doc.get("architecture") != self.describe():
            raise ParseError("checkpoint architecture does not match this network", "architecture")
        self.set_params(values)
        self.load_buffers(doc.get("buffers") or {})

    def clone(self) -> "Mlp":
        import copy

        other = copy.deepcopy(self)
        other._cache = None
        return other

