"""Dataset sketches: per-sample feature maps, pooling, merge and removal.

A sketch summarises a whole dataset as a pooled vector of per-sample
projections. Sketches built with the same feature map and pooling can be
merged (new data added) and, except for max pooling, split again (data
removed) without touching the raw samples.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import (
    CompatibilityError,
    DimensionError,
    InvalidRemoval,
    UnsupportedMap,
    UnsupportedPooling,
)
from .rng import make_rng

__all__ = [
    "FeatureMap",
    "IdentityMap",
    "LinearMap",
    "TernaryLinearMap",
    "RffMap",
    "OuterProductMap",
    "NeuralMap",
    "ConcatMap",
    "Pooling",
    "MEAN",
    "SUM",
    "MAX",
    "LSE",
    "DPInfo",
    "Sketch",
    "apply_feature_map",
    "compute_sketch",
    "empty_sketch",
    "merge",
    "remove",
    "projection_norms",
]


# --------------------------------------------------------------------------
# feature maps
# --------------------------------------------------------------------------


def _hash_arrays(kind: str, dims, seed, arrays, extra: str = "") -> str:
    h = hashlib.blake2b(digest_size=8)
    h.update(f"{kind}|{','.join(str(int(x)) for x in dims)}|{seed}|{extra}".encode())
    for a in arrays:
        a = np.ascontiguousarray(a, dtype="<f8")
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


class FeatureMap:
    """Per-sample projection ``R^d -> R^m``.

    Subclasses implement :meth:`_apply` on a batch and, when differentiable,
    :meth:`vjp` (vector-Jacobian product with respect to the input).
    """

    kind = "abstract"
    input_dim: int
    output_dim: int
    seed: int | None = None

    def __call__(self, x):
        return self.apply(x)

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise DimensionError(
                f"{self.kind} map expects inputs of length {self.input_dim}, got shape {x.shape}"
            )
        out = self._apply(X)
        return out[0] if single else out

    def _apply(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def vjp(self, X: np.ndarray, G: np.ndarray) -> np.ndarray:
        """Return ``J(x_i)^T g_i`` for each row (shape N x d)."""
        raise UnsupportedMap(f"{self.kind} map is not differentiable with respect to its input")

    @property
    def differentiable(self) -> bool:
        return type(self).vjp is not FeatureMap.vjp

    @property
    def fingerprint(self) -> str:
        fp = getattr(self, "_fingerprint", None)
        if fp is None:
            fp = self._compute_fingerprint()
            self._fingerprint = fp
        return fp

    def _compute_fingerprint(self) -> str:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}(d={self.input_dim}, m={self.output_dim}, fp={self.fingerprint})"


class IdentityMap(FeatureMap):
    kind = "identity"

    def __init__(self, d: int):
        self.input_dim = self.output_dim = int(d)

    def _apply(self, X):
        return X.copy()

    def vjp(self, X, G):
        return np.asarray(G, dtype=float).copy()

    def _compute_fingerprint(self):
        return _hash_arrays(self.kind, (self.input_dim,), None, ())


class LinearMap(FeatureMap):
    """``phi(x) = W x + b``."""

    kind = "linear"

    def __init__(self, W, b=None, seed=None):
        self.W = np.array(W, dtype=float)
        if self.W.ndim != 2:
            raise DimensionError("W must be a matrix")
        self.output_dim, self.input_dim = self.W.shape
        self.b = np.zeros(self.output_dim) if b is None else np.array(b, dtype=float)
        if self.b.shape != (self.output_dim,):
            raise DimensionError("b must have length m")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ValueError("map parameters must be finite")
        self.seed = seed

    def _apply(self, X):
        return X @ self.W.T + self.b

    def vjp(self, X, G):
        return np.asarray(G, dtype=float) @ self.W

    def _compute_fingerprint(self):
        return _hash_arrays(self.kind, self.W.shape, self.seed, (self.W, self.b))


class TernaryLinearMap(FeatureMap):
    """Linear projection whose weights are restricted to {-1, 0, 1}."""

    kind = "ternary"

    def __init__(self, W, seed=None):
        W = np.array(W, dtype=float)
        if W.ndim != 2:
            raise DimensionError("W must be a matrix")
        if not np.all(np.isin(W, (-1.0, 0.0, 1.0))):
            raise ValueError("ternary weights must be in {-1, 0, 1}")
        self.W = W
        self.output_dim, self.input_dim = W.shape
        self.seed = seed

    @classmethod
    def random(cls, d: int, m: int, seed: int, density: float = 1 / 3) -> "TernaryLinearMap":
        rng = make_rng(seed, "ternary")
        mask = rng.random((m, d)) < density
        signs = rng.choice((-1.0, 1.0), size=(m, d))
        return cls(np.where(mask, signs, 0.0), seed=seed)

    def _apply(self, X):
        return X @ self.W.T

    def _compute_fingerprint(self):
        return _hash_arrays(self.kind, self.W.shape, self.seed, (self.W,))


class RffMap(FeatureMap):
    """Random Fourier features ``scale * cos(Omega x + phase)``."""

    kind = "rff"

    def __init__(self, Omega, phase, scale=None, seed=None):
        self.Omega = np.array(Omega, dtype=float)
        if self.Omega.ndim != 2:
            raise DimensionError("Omega must be a matrix")
        self.output_dim, self.input_dim = self.Omega.shape
        self.phase = np.array(phase, dtype=float)
        if self.phase.shape != (self.output_dim,):
            raise DimensionError("phase must have length m")
        self.scale = math.sqrt(2.0 / self.output_dim) if scale is None else float(scale)
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if not (np.all(np.isfinite(self.Omega)) and np.all(np.isfinite(self.phase))):
            raise ValueError("map parameters must be finite")
        self.seed = seed

    @classmethod
    def random(cls, d: int, m: int, sigma: float, seed: int) -> "RffMap":
        """Frequencies i.i.d. N(0, 1/sigma^2), phases uniform on [0, 2 pi)."""
        rng = make_rng(seed, "rff")
        Omega = rng.standard_normal((m, d)) / sigma
        phase = rng.uniform(0.0, 2.0 * np.pi, size=m)
        return cls(Omega, phase, seed=seed)

    def norm_bound(self) -> float:
        return self.scale * math.sqrt(self.output_dim)

    def _apply(self, X):
        return self.scale * np.cos(X @ self.Omega.T + self.phase)

    def vjp(self, X, G):
        U = np.asarray(X, dtype=float) @ self.Omega.T + self.phase
        return (-self.scale * np.sin(U) * G) @ self.Omega

    def _compute_fingerprint(self):
        return _hash_arrays(
            self.kind, self.Omega.shape, self.seed, (self.Omega, self.phase), extra=repr(self.scale)
        )


def outer_features(X: np.ndarray, weighted: bool = False) -> np.ndarray:
    """Row-wise packed lower triangle of ``x x^T`` (off-diagonals doubled if weighted)."""
    X = np.asarray(X, dtype=float)
    rows, cols = np.tril_indices(X.shape[-1])
    F = X[..., rows] * X[..., cols]
    if weighted:
        F = F * np.where(rows == cols, 1.0, 2.0)
    return F


class OuterProductMap(FeatureMap):
    """``phi(x) = A vec_lt(x x^T) + b``.

    With ``weighted=True`` the off-diagonal products are doubled, so row ``a``
    of ``A`` acts as the quadratic form ``x^T unvec_lt(a) x``. The bias is
    zero unless given (learned maps carry one).
    """

    kind = "outer"

    def __init__(self, A, weighted: bool = False, seed=None, b=None):
        self.A = np.array(A, dtype=float)
        if self.A.ndim != 2:
            raise DimensionError("A must be a matrix")
        D = self.A.shape[1]
        d = int((math.isqrt(8 * D + 1) - 1) // 2)
        if d * (d + 1) // 2 != D:
            raise DimensionError(f"A has {D} columns, which is not d(d+1)/2")
        self.input_dim = d
        self.output_dim = self.A.shape[0]
        self.weighted = bool(weighted)
        self.b = None if b is None else np.array(b, dtype=float)
        if self.b is not None and self.b.shape != (self.output_dim,):
            raise DimensionError("b must have length m")
        if not np.all(np.isfinite(self.A)):
            raise ValueError("map parameters must be finite")
        self.seed = seed

    @classmethod
    def random(cls, d: int, m: int, seed: int, weighted: bool = False) -> "OuterProductMap":
        """Gaussian projection with i.i.d. N(0, 1/m) entries."""
        rng = make_rng(seed, "outer")
        D = d * (d + 1) // 2
        return cls(rng.standard_normal((m, D)) / math.sqrt(m), weighted=weighted, seed=seed)

    def _apply(self, X):
        out = outer_features(X, self.weighted) @ self.A.T
        return out if self.b is None else out + self.b

    def _compute_fingerprint(self):
        arrays = (self.A,) if self.b is None else (self.A, self.b)
        return _hash_arrays(
            self.kind, self.A.shape, self.seed, arrays, extra="w" if self.weighted else ""
        )


class NeuralMap(FeatureMap):
    """Feature map backed by a :class:`sqnet.neural.Mlp` evaluated in eval mode."""

    kind = "neural"

    def __init__(self, net, seed=None):
        self.net = net
        self.input_dim = net.d_in
        self.output_dim = net.d_out
        self.seed = seed

    def _apply(self, X):
        return self.net.forward(X, train=False)

    def vjp(self, X, G):
        self.net.forward(X, train=False)
        _, gx = self.net.backward_full(X, G)
        return gx

    @property
    def fingerprint(self) -> str:
        # the wrapped network may keep training, so key the cache on its version
        cached = getattr(self, "_fp_version", None)
        if cached is None or cached[0] != self.net._version:
            fp = _hash_arrays(
                self.kind, (self.input_dim, self.output_dim), self.seed, (self.net.params,),
                extra=self.net.describe(),
            )
            self._fp_version = (self.net._version, fp)
        return self._fp_version[1]


class ConcatMap(FeatureMap):
    """Stacks the outputs of several maps over the same input."""

    kind = "concat"

    def __init__(self, maps):
        self.maps = list(maps)
        if not self.maps:
            raise ValueError("need at least one map")
        dims = {mp.input_dim for mp in self.maps}
        if len(dims) != 1:
            raise DimensionError("all maps must share the input dimension")
        self.input_dim = dims.pop()
        self.output_dim = sum(mp.output_dim for mp in self.maps)

    def _apply(self, X):
        return np.hstack([mp.apply(X) for mp in self.maps])

    def vjp(self, X, G):
        G = np.asarray(G, dtype=float)
        out = np.zeros((G.shape[0], self.input_dim))
        start = 0
        for mp in self.maps:
            out += mp.vjp(X, G[:, start : start + mp.output_dim])
            start += mp.output_dim
        return out

    @property
    def differentiable(self) -> bool:
        return all(mp.differentiable for mp in self.maps)

    def _compute_fingerprint(self):
        return _hash_arrays(self.kind, (self.input_dim, self.output_dim), None, (),
                            extra=",".join(mp.fingerprint for mp in self.maps))


def apply_feature_map(fmap: FeatureMap, x) -> np.ndarray:
    return fmap.apply(x)


def projection_norms(fmap: FeatureMap, X) -> np.ndarray:
    return np.linalg.norm(fmap.apply(np.atleast_2d(np.asarray(X, dtype=float))), axis=1)


# --------------------------------------------------------------------------
# pooling and sketches
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Pooling:
    kind: str
    p: float | None = None

    _KINDS = ("mean", "sum", "max", "pnorm", "lse")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown pooling {self.kind!r}")
        if self.kind == "pnorm":
            if self.p is None or not self.p >= 1:
                raise ValueError("p-norm pooling needs p >= 1")
        elif self.p is not None:
            raise ValueError(f"{self.kind} pooling takes no p")

    @classmethod
    def pnorm(cls, p: float) -> "Pooling":
        return cls("pnorm", float(p))

    @property
    def removable(self) -> bool:
        return self.kind != "max"

    def __str__(self):
        return f"pnorm({self.p:g})" if self.kind == "pnorm" else self.kind


MEAN = Pooling("mean")
SUM = Pooling("sum")
MAX = Pooling("max")
LSE = Pooling("lse")


@dataclass(frozen=True)
class DPInfo:
    epsilon: float
    delta: float


@dataclass(frozen=True, eq=False)
class Sketch:
    """Immutable pooled summary of a dataset."""

    values: np.ndarray
    count: float
    pooling: Pooling
    map_fingerprint: str
    dp: DPInfo | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "count", float(self.count))
        if self.count < 0:
            raise ValueError("count must be non-negative")
        if self.count > 0 and not np.all(np.isfinite(values)):
            raise ValueError("non-empty sketch values must be finite")

    @property
    def m(self) -> int:
        return self.values.size

    def combinable_with(self, other: "Sketch") -> bool:
        return (
            self.pooling == other.pooling
            and self.map_fingerprint == other.map_fingerprint
            and self.m == other.m
        )

    def __eq__(self, other):
        if not isinstance(other, Sketch):
            return NotImplemented
        return (
            self.pooling == other.pooling
            and self.map_fingerprint == other.map_fingerprint
            and self.count == other.count
            and self.dp == other.dp
            and self.values.shape == other.values.shape
            and bool(np.array_equal(self.values, other.values))
        )

    def __repr__(self):
        return (
            f"Sketch(m={self.m}, count={self.count:g}, pooling={self.pooling}, "
            f"fp={self.map_fingerprint}, dp={self.dp})"
        )


def _neutral(pooling: Pooling, m: int) -> np.ndarray:
    if pooling.kind in ("max", "lse"):
        return np.full(m, -np.inf)
    return np.zeros(m)


def empty_sketch(fmap_or_fingerprint, m: int | None = None, pooling: Pooling = MEAN) -> Sketch:
    if isinstance(fmap_or_fingerprint, FeatureMap):
        fp, m = fmap_or_fingerprint.fingerprint, fmap_or_fingerprint.output_dim
    else:
        fp = str(fmap_or_fingerprint)
        if m is None:
            raise ValueError("m is required when only a fingerprint is given")
    return Sketch(_neutral(pooling, m), 0.0, pooling, fp)


# Accumulators: sum for mean/sum, running max, sum of |.|^p, log-sum-exp.
def _leaf_acc(F: np.ndarray, pooling: Pooling) -> np.ndarray:
    kind = pooling.kind
    if kind in ("mean", "sum"):
        return F.sum(axis=0)
    if kind == "max":
        return F.max(axis=0)
    if kind == "pnorm":
        return (np.abs(F) ** pooling.p).sum(axis=0)
    return logsumexp(F, axis=0)


def _combine_acc(a: np.ndarray, b: np.ndarray, pooling: Pooling) -> np.ndarray:
    kind = pooling.kind
    if kind == "max":
        return np.maximum(a, b)
    if kind == "lse":
        return np.logaddexp(a, b)
    return a + b


def _tree_reduce(accs: list, pooling: Pooling) -> np.ndarray:
    # Balanced binary tree; the topology depends only on the number of leaves.
    if len(accs) == 1:
        return accs[0]
    mid = (len(accs) + 1) // 2
    return _combine_acc(_tree_reduce(accs[:mid], pooling), _tree_reduce(accs[mid:], pooling), pooling)


def compute_sketch(
    data,
    fmap: FeatureMap,
    pooling: Pooling = MEAN,
    *,
    leaf_size: int = 1024,
    workers: int = 1,
) -> Sketch:
    """Pool ``fmap`` over the rows of ``data``.

    Rows are split into fixed-size leaves, each leaf is reduced on its own and
    the leaves are combined by a balanced tree. With ``workers > 1`` leaves are
    mapped in parallel; the reduction topology is unchanged so the result is
    bit-identical to the sequential run.
    """
    X = np.asarray(data, dtype=float)
    if X.ndim == 1 and X.size == 0:
        X = X.reshape(0, fmap.input_dim)
    if X.ndim != 2 or X.shape[1] != fmap.input_dim:
        raise DimensionError(f"data must be N x {fmap.input_dim}, got shape {X.shape}")
    N = X.shape[0]
    m = fmap.output_dim
    if N == 0:
        return Sketch(_neutral(pooling, m), 0.0, pooling, fmap.fingerprint)

    starts = range(0, N, leaf_size)

    def leaf(start):
        return _leaf_acc(fmap.apply(X[start : start + leaf_size]), pooling)

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            accs = list(pool.map(leaf, starts))
    else:
        accs = [leaf(s) for s in starts]
    acc = _tree_reduce(accs, pooling)

    kind = pooling.kind
    if kind == "mean":
        values = acc / N
    elif kind == "pnorm":
        values = acc ** (1.0 / pooling.p)
    else:
        values = acc
    return Sketch(values, float(N), pooling, fmap.fingerprint)


def _check_combinable(a: Sketch, b: Sketch):
    if not a.combinable_with(b):
        raise CompatibilityError(
            f"cannot combine sketches ({a.pooling}, {a.map_fingerprint}, m={a.m}) "
            f"and ({b.pooling}, {b.map_fingerprint}, m={b.m})"
        )
    if a.dp is not None or b.dp is not None:
        raise CompatibilityError("differentially private sketches cannot be merged or split")


def merge(a: Sketch, b: Sketch) -> Sketch:
    """Sketch of the union of the two underlying datasets."""
    _check_combinable(a, b)
    kind = a.pooling.kind
    n = a.count + b.count
    za, zb = a.values, b.values
    if kind == "mean":
        values = np.zeros(a.m) if n == 0 else (a.count * za + b.count * zb) / n
    elif kind == "sum":
        values = za + zb
    elif kind == "max":
        values = np.maximum(za, zb)
    elif kind == "pnorm":
        p = a.pooling.p
        values = (za**p + zb**p) ** (1.0 / p)
    else:
        values = np.logaddexp(za, zb)
    return Sketch(values, n, a.pooling, a.map_fingerprint)


def remove(a: Sketch, b: Sketch) -> Sketch:
    """Sketch of ``a``'s dataset with ``b``'s samples taken out.

    p-norm and log-sum-exp removal cancel large terms and lose precision when
    ``b`` dominates ``a``.
    """
    _check_combinable(a, b)
    kind = a.pooling.kind
    if kind == "max":
        raise UnsupportedPooling("max pooling does not support removal")
    if b.count > a.count:
        raise InvalidRemoval(f"cannot remove {b.count:g} samples from a sketch of {a.count:g}")
    n = a.count - b.count
    za, zb = a.values, b.values
    if n == 0:
        if kind in ("mean", "sum", "pnorm"):
            return Sketch(np.zeros(a.m) if kind != "sum" else za - zb, 0.0, a.pooling, a.map_fingerprint)
        return Sketch(_neutral(a.pooling, a.m), 0.0, a.pooling, a.map_fingerprint)
    if kind == "mean":
        values = (a.count * za - b.count * zb) / n
    elif kind == "sum":
        values = za - zb
    elif kind == "pnorm":
        p = a.pooling.p
        diff = za**p - zb**p
        slack = 1e-12 * np.maximum(za**p, 1e-300)
        if np.any(diff < -slack):
            raise InvalidRemoval("p-norm removal needs z_a^p >= z_b^p elementwise")
        values = np.maximum(diff, 0.0) ** (1.0 / p)
    else:
        if np.any(~(za > zb)):
            raise InvalidRemoval("log-sum-exp removal needs exp(z_a) > exp(z_b) elementwise")
        values = za + np.log(-np.expm1(zb - za))
    return Sketch(values, n, a.pooling, a.map_fingerprint)
