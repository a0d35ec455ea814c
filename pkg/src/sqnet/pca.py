"""Compressive PCA and ridge regression from second-moment sketches.

A dataset (assumed standardized) is summarised by ``z = A vec_lt(R)`` with
``R`` its second-moment matrix. The covariance is decoded either with the
pseudo-inverse of ``A`` or with a meta-learned query network, and PCA bases
or ridge weights are read off the estimate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import CompatibilityError, DimensionError, EmptyDataset, MetricError, SingularError
from .linalg import (
    default_ridge,
    dim_from_packed,
    jacobi_eigh,
    min_norm_solve,
    packed_size,
    spd_solve,
    unvec_lt,
    vec_lt,
)
from .neural.mlp import Mlp
from .neural.train import TrainConfig, l1_loss, meta_train
from .rng import make_rng
from .sketch import MEAN, OuterProductMap, Sketch, compute_sketch, outer_features

__all__ = [
    "CovarianceEstimate",
    "RidgeSplit",
    "empirical_covariance",
    "random_projection",
    "cpca_sketch",
    "decode_covariance_random",
    "pca_from_cov",
    "ridge_from_cov",
    "pca_recon_error",
    "ridge_error",
    "lre",
    "l1_cov_error",
    "CovFamily",
    "CovSqnet",
    "meta_train_cov_sqnet",
    "decode_covariance_sqnet",
]

SOURCES = ("empirical", "random", "sqnet")


@dataclass(frozen=True, eq=False)
class CovarianceEstimate:
    d: int
    values: np.ndarray
    source: str = "empirical"

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size != packed_size(self.d):
            raise DimensionError(f"d={self.d} needs {packed_size(self.d)} values, got {v.size}")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def dense(self) -> np.ndarray:
        return unvec_lt(self.values, self.d)

    def to_bytes(self) -> bytes:
        from .serialize import dumps_document

        return dumps_document("cov", self.values, d=self.d, source=self.source)

    @classmethod
    def from_bytes(cls, data) -> "CovarianceEstimate":
        from .errors import ParseError
        from .serialize import loads_document

        doc, values = loads_document(data, kind="cov")
        d = doc.get("d")
        if not isinstance(d, int) or isinstance(d, bool):
            raise ParseError("field 'd' must be an integer", "d")
        try:
            return cls(d, values, doc.get("source", "empirical"))
        except (DimensionError, ValueError) as exc:
            raise ParseError(str(exc), "values") from None


@dataclass(frozen=True)
class RidgeSplit:
    """Which coordinates are targets (``label_dims``) and which are inputs.

    ``lam=None`` selects ``||R22||_F``.
    """

    label_dims: tuple
    feature_dims: tuple
    lam: float | None = None

    def __post_init__(self):
        y = tuple(int(i) for i in self.label_dims)
        x = tuple(int(i) for i in self.feature_dims)
        if set(y) & set(x):
            raise DimensionError("label and feature dimensions overlap")
        if len(set(y)) != len(y) or len(set(x)) != len(x):
            raise DimensionError("repeated dimension index")
        if not y or not x:
            raise DimensionError("need at least one label and one feature dimension")
        if self.lam is not None and not self.lam >= 0:
            raise ValueError("lambda must be non-negative")
        object.__setattr__(self, "label_dims", y)
        object.__setattr__(self, "feature_dims", x)

    def check(self, d: int) -> None:
        if sorted(self.label_dims + self.feature_dims) != list(range(d)):
            raise DimensionError(f"split must cover the coordinates 0..{d - 1} exactly")


def _check_data(data) -> np.ndarray:
    X = np.asarray(data, dtype=float)
    if X.ndim != 2:
        raise DimensionError("data must be an N x d matrix")
    if X.shape[0] == 0:
        raise EmptyDataset("need at least one sample")
    return X


def empirical_covariance(data, standardized: bool = True) -> CovarianceEstimate:
    """Second-moment matrix ``(1/N) sum x x^T`` in packed form."""
    X = _check_data(data)
    if standardized and X.shape[0] > 1 and np.any(np.abs(X.mean(axis=0)) >= 0.1):
        warnings.warn("data does not look standardized (|column mean| >= 0.1)", stacklevel=2)
    d = X.shape[1]
    return CovarianceEstimate(d, vec_lt((X.T @ X) / X.shape[0]), "empirical")


def random_projection(d: int, m: int, seed: int) -> OuterProductMap:
    """Gaussian ``A`` with N(0, 1/m) entries acting on ``vec_lt(x x^T)``."""
    if not 1 <= m:
        raise DimensionError("m must be positive")
    return OuterProductMap.random(d, m, seed)


def _as_map(A) -> OuterProductMap:
    if isinstance(A, OuterProductMap):
        return A
    return OuterProductMap(A)


def cpca_sketch(data, A) -> Sketch:
    """Mean sketch of the outer products, i.e. ``A vec_lt(R)``."""
    fmap = _as_map(A)
    X = np.asarray(data, dtype=float)
    if X.ndim != 2 or X.shape[1] != fmap.input_dim:
        raise DimensionError(f"data must be N x {fmap.input_dim}")
    return compute_sketch(X, fmap, MEAN)


def decode_covariance_random(z: Sketch, A, ridge: float | None = None) -> CovarianceEstimate:
    """``vec(R_hat) = A^+ z``.

    ``ridge=None`` first tries the exact pseudo-inverse and falls back to the
    default ridge when ``A A^T`` is numerically singular.
    """
    fmap = _as_map(A)
    if z.map_fingerprint != fmap.fingerprint:
        raise CompatibilityError("sketch was not computed with this projection")
    if fmap.weighted or fmap.b is not None:
        raise CompatibilityError("pseudo-inverse decoding needs the plain random projection")
    if ridge is None:
        try:
            v = min_norm_solve(fmap.A, z.values, 0.0)
        except SingularError:
            v = min_norm_solve(fmap.A, z.values, default_ridge(fmap.A))
    else:
        v = min_norm_solve(fmap.A, z.values, ridge)
    return CovarianceEstimate(fmap.input_dim, v, "random")


def _dense(R) -> np.ndarray:
    if isinstance(R, CovarianceEstimate):
        return R.dense()
    return np.asarray(R, dtype=float)


def pca_from_cov(R, r: int) -> np.ndarray:
    """Top-``r`` eigenvectors (d x r) of the covariance estimate."""
    M = _dense(R)
    d = M.shape[0]
    if not 1 <= r <= d:
        raise DimensionError(f"r must lie in [1, {d}]")
    return jacobi_eigh(M).eigvecs[:, :r].copy()


def ridge_from_cov(R, split: RidgeSplit) -> np.ndarray:
    """``theta = R12 (R22 + lam I)^-1`` with shape |y| x |x|."""
    M = _dense(R)
    split.check(M.shape[0])
    y, x = list(split.label_dims), list(split.feature_dims)
    R12 = M[np.ix_(y, x)]
    R22 = M[np.ix_(x, x)]
    lam = np.linalg.norm(R22) if split.lam is None else split.lam
    return spd_solve(R22 + lam * np.eye(len(x)), R12.T).T


def pca_recon_error(data, R) -> float:
    """Reconstruction error averaged over r = 1..d.

    ``(1/d) sum_r ||X - X theta_r theta_r^T||_F^2`` where ``theta_r`` holds
    the top-r eigenvectors of ``R``. Evaluated through the data second
    moments: ``||X (I - P)||^2 = N (tr R_emp - tr(theta^T R_emp theta))``.
    """
    X = _check_data(data)
    N, d = X.shape
    Q = jacobi_eigh(_dense(R)).eigvecs
    if Q.shape[0] != d:
        raise DimensionError("covariance size does not match the data")
    XQ = X @ Q
    captured = np.cumsum((XQ * XQ).sum(axis=0))
    total = float((X * X).sum())
    errs = np.maximum(total - captured, 0.0)
    return float(errs.mean())


def ridge_error(data, theta, split: RidgeSplit) -> float:
    """``||Y - X theta^T||_F^2`` on the given rows."""
    X = _check_data(data)
    split.check(X.shape[1])
    Y = X[:, list(split.label_dims)]
    F = X[:, list(split.feature_dims)]
    res = Y - F @ np.asarray(theta, dtype=float).T
    return float((res * res).sum())


def lre(err_hat: float, err_ref: float) -> float:
    """Log ratio of a method's error to the reference error."""
    if not err_ref > 0:
        raise MetricError("reference error must be positive")
    if not err_hat > 0:
        raise MetricError("error must be positive for a log ratio")
    return math.log(err_hat / err_ref)


def l1_cov_error(R_hat, R_ref) -> float:
    """Mean absolute difference over the packed entries."""
    a = R_hat.values if isinstance(R_hat, CovarianceEstimate) else np.asarray(R_hat, dtype=float)
    b = R_ref.values if isinstance(R_ref, CovarianceEstimate) else np.asarray(R_ref, dtype=float)
    return float(np.mean(np.abs(a - b)))


# --------------------------------------------------------------------------
# synthetic covariance family and learned sketches
# --------------------------------------------------------------------------


def _standardize(X: np.ndarray) -> np.ndarray:
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (X - mu) / sd


@dataclass
class CovFamily:
    """Datasets drawn from random factor-model correlation matrices.

    Each dataset picks ``1..max_factors`` latent factors with Gaussian
    loadings plus diagonal noise, samples ``n`` rows from the resulting
    Gaussian and standardizes them.
    """

    d: int = 16
    n: int = 256
    max_factors: int = 4
    noise: tuple = (0.1, 1.0)

    def correlation(self, rng) -> np.ndarray:
        k = int(rng.integers(1, self.max_factors + 1))
        F = rng.standard_normal((self.d, k))
        C = F @ F.T + np.diag(rng.uniform(*self.noise, size=self.d))
        s = np.sqrt(np.diag(C))
        return C / np.outer(s, s)

    def sample(self, rng, n: int | None = None) -> np.ndarray:
        n = self.n if n is None else n
        L = np.linalg.cholesky(self.correlation(rng))
        X = rng.standard_normal((n, self.d)) @ L.T
        return _standardize(X)


@dataclass
class CovSqnet:
    fmap: OuterProductMap
    query_net: Mlp
    losses: list = field(default_factory=list)


def meta_train_cov_sqnet(family: CovFamily, m: int, config: TrainConfig, batch: int = 16) -> CovSqnet:
    """Learn ``phi(x) = W vec_lt_w(x x^T) + b`` and ``psi(z) = tanh(W' z + b')``.

    Minimises the mean absolute error between ``psi(mean phi)`` and the
    packed empirical covariance of each sampled dataset.
    """
    d = family.d
    D = packed_size(d)
    if not 1 <= m <= D:
        raise DimensionError(f"m must lie in [1, {D}]")
    sketch_net = Mlp(D, m, seed=config.seed * 2 + 1)
    query_net = Mlp(m, D, out_act="tanh", seed=config.seed * 2 + 2)

    def sampler(rng):
        sets = np.empty((batch, family.n, D))
        target = np.empty((batch, D))
        for i in range(batch):
            X = family.sample(rng)
            sets[i] = outer_features(X, weighted=True)
            target[i] = vec_lt((X.T @ X) / X.shape[0])
        return sets, target

    result = meta_train(sketch_net, query_net, l1_loss, sampler, config)
    W = sketch_net.param_view("0", "W").copy()
    b = sketch_net.param_view("0", "b").copy()
    fmap = OuterProductMap(W, weighted=True, seed=config.seed, b=b)
    return CovSqnet(fmap, result.query_net, result.losses)


def decode_covariance_sqnet(z: Sketch, model: CovSqnet) -> CovarianceEstimate:
    if z.map_fingerprint != model.fmap.fingerprint:
        raise CompatibilityError("sketch was not computed with this learned map")
    out = model.query_net.forward(z.values, train=False)
    d = dim_from_packed(out.size)
    return CovarianceEstimate(d, np.clip(out, -1.0, 1.0), "sqnet")
