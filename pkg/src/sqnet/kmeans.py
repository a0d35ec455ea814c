"""Compressive k-means.

Centroids are decoded from a mean sketch ``z`` by running a fixed number of
optimizer steps on ``||(1/k) sum_j phi(theta_j) - z||^2``. Lloyd's algorithm
and a Hungarian matching loss are provided as baselines and evaluation tools.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DecodeError, DimensionError, EmptyDataset, UnsupportedMap
from .rng import make_rng
from .sketch import FeatureMap, IdentityMap, LinearMap, NeuralMap, RffMap, Sketch

__all__ = [
    "CentroidSet",
    "DecoderConfig",
    "kmeans_loss",
    "lloyd",
    "kmeans_pp",
    "ckm_decode",
    "sketch_loss",
    "hungarian_match",
    "hungarian_loss",
]


@dataclass
class CentroidSet:
    centroids: np.ndarray
    # per-iteration loss trace (Lloyd) or best sketch loss (decoder)
    losses: list = field(default_factory=list)
    sketch_loss: float | None = None

    def __post_init__(self):
        C = np.array(self.centroids, dtype=float)
        if C.ndim != 2:
            raise DimensionError("centroids must be a k x d matrix")
        if not np.all(np.isfinite(C)):
            raise DecodeError("centroids must be finite")
        self.centroids = C

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


@dataclass(frozen=True)
class DecoderConfig:
    steps: int = 300
    optimizer: str = "adam"  # or "sgd"
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    init_mean: float = 0.5
    init_std: float = 0.25
    restarts: int = 5
    seed: int = 0
    clamp: tuple | None = (0.0, 1.0)

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("decoder needs at least one step")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown inner optimizer {self.optimizer!r}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.restarts < 1:
            raise ValueError("need at least one restart")
        if not self.init_std >= 0:
            raise ValueError("init_std must be non-negative")

    def with_(self, **kw) -> "DecoderConfig":
        return replace(self, **kw)


def _as_centroids(c) -> np.ndarray:
    C = c.centroids if isinstance(c, CentroidSet) else np.asarray(c, dtype=float)
    C = np.atleast_2d(C)
    if C.shape[0] == 0:
        raise DimensionError("need at least one centroid")
    return C


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    D = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(D, 0.0)


def kmeans_loss(data, c) -> float:
    """Mean over samples of the squared distance to the nearest centroid."""
    X = np.asarray(data, dtype=float)
    C = _as_centroids(c)
    if X.ndim != 2 or X.shape[1] != C.shape[1]:
        raise DimensionError("data and centroid dimensions differ")
    if X.shape[0] == 0:
        raise EmptyDataset("no samples")
    return float(_sq_dists(X, C).min(axis=1).mean())


def kmeans_pp(X: np.ndarray, k: int, rng) -> np.ndarray:
    N = X.shape[0]
    C = [X[rng.integers(N)]]
    d2 = ((X - C[0]) ** 2).sum(1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.integers(N) if total <= 0 else rng.choice(N, p=d2 / total)
        C.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(1))
    return np.array(C)


def lloyd(data, k: int, seed: int = 0, max_iter: int = 300, init=None) -> CentroidSet:
    """Lloyd iterations from k-means++ seeding.

    A cluster that loses all its points is re-seeded at the point farthest
    from its assigned centroid.
    """
    X = np.asarray(data, dtype=float)
    if X.ndim != 2:
        raise DimensionError("data must be N x d")
    N = X.shape[0]
    if k < 1:
        raise DimensionError("k must be positive")
    if N < k:
        raise EmptyDataset(f"need at least k={k} samples, got {N}")
    rng = make_rng(seed, "lloyd")
    C = kmeans_pp(X, k, rng) if init is None else np.array(init, dtype=float)
    losses = []
    assign = None
    for _ in range(max_iter):
        D = _sq_dists(X, C)
        new_assign = D.argmin(axis=1)
        losses.append(float(D[np.arange(N), new_assign].mean()))
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(C)
        np.add.at(sums, assign, X)
        nonempty = counts > 0
        C = C.copy()
        C[nonempty] = sums[nonempty] / counts[nonempty, None]
        for j in np.flatnonzero(~nonempty):
            far = int(D[np.arange(N), assign].argmax())
            C[j] = X[far]
            assign[far] = j
    return CentroidSet(C, losses)


# --------------------------------------------------------------------------
# sketch decoding
# --------------------------------------------------------------------------

_DIFFERENTIABLE = (RffMap, LinearMap, IdentityMap, NeuralMap)


def _sketch_residual(fmap: FeatureMap, Theta: np.ndarray, z: np.ndarray):
    # Theta: R x k x d -> residual R x m of mean_j phi(theta_j) - z
    R, k, d = Theta.shape
    F = fmap.apply(Theta.reshape(R * k, d)).reshape(R, k, -1)
    return F.mean(axis=1) - z


def sketch_loss(fmap: FeatureMap, centroids, z) -> float:
    """``||(1/k) sum_j phi(theta_j) - z||^2``."""
    C = _as_centroids(centroids)
    zv = z.values if isinstance(z, Sketch) else np.asarray(z, dtype=float)
    r = _sketch_residual(fmap, C[None], zv)[0]
    return float(r @ r)


def ckm_decode(z: Sketch, fmap: FeatureMap, k: int, cfg: DecoderConfig = DecoderConfig(), init=None) -> CentroidSet:
    """Decode ``k`` centroids from a mean sketch by unrolled gradient descent.

    All restarts run together. Each restart keeps the best iterate it visits
    (including its starting point), and the restart with the lowest sketch
    loss wins; ties go to the lowest restart index. ``init`` (k x d, or
    restarts x k x d) replaces the random initialisation.
    """
    if not isinstance(fmap, _DIFFERENTIABLE) or not fmap.differentiable:
        raise UnsupportedMap(f"{fmap.kind} map has no input gradient for decoding")
    if z.pooling.kind != "mean":
        raise DimensionError("compressive k-means needs a mean-pooled sketch")
    if z.map_fingerprint != fmap.fingerprint:
        from .errors import CompatibilityError

        raise CompatibilityError("sketch was not computed with this feature map")
    if k < 1:
        raise DimensionError("k must be positive")
    d = fmap.input_dim
    zv = np.asarray(z.values, dtype=float)
    if init is None:
        rng = make_rng(cfg.seed, "ckm-init")
        Theta = cfg.init_mean + cfg.init_std * rng.standard_normal((cfg.restarts, k, d))
    else:
        Theta = np.array(init, dtype=float)
        if Theta.ndim == 2:
            Theta = Theta[None]
        if Theta.shape[1:] != (k, d):
            raise DimensionError(f"init must be k x d = {k} x {d}")
    if cfg.clamp is not None:
        Theta = np.clip(Theta, *cfg.clamp)
    R = Theta.shape[0]

    m1 = np.zeros_like(Theta)
    v1 = np.zeros_like(Theta)
    r = _sketch_residual(fmap, Theta, zv)
    loss = (r * r).sum(axis=1)
    best_loss = loss.copy()
    best = Theta.copy()
    trace = [float(loss.min())]
    for t in range(1, cfg.steps + 1):
        G = np.repeat((2.0 / k) * r, k, axis=0)
        grad = fmap.vjp(Theta.reshape(R * k, d), G).reshape(R, k, d)
        if cfg.optimizer == "adam":
            m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * grad
            v1 = cfg.beta2 * v1 + (1.0 - cfg.beta2) * grad * grad
            mhat = m1 / (1.0 - cfg.beta1**t)
            vhat = v1 / (1.0 - cfg.beta2**t)
            Theta = Theta - cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)
        else:
            Theta = Theta - cfg.lr * grad
        if cfg.clamp is not None:
            Theta = np.clip(Theta, *cfg.clamp)
        if not np.all(np.isfinite(Theta)):
            raise DecodeError(f"decoder diverged at step {t}; try a smaller learning rate")
        r = _sketch_residual(fmap, Theta, zv)
        loss = (r * r).sum(axis=1)
        improved = loss < best_loss
        best_loss = np.where(improved, loss, best_loss)
        best[improved] = Theta[improved]
        trace.append(float(loss.min()))
    j = int(np.argmin(best_loss))
    return CentroidSet(best[j], trace, float(best_loss[j]))


# --------------------------------------------------------------------------
# assignment
# --------------------------------------------------------------------------


def hungarian_match(cost) -> tuple[np.ndarray, float]:
    """Minimum-cost perfect matching, O(n^3) shortest augmenting paths.

    Returns ``perm`` with row ``i`` matched to column ``perm[i]`` and the
    total cost.
    """
    C = np.asarray(cost, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise DimensionError("cost matrix must be square")
    if not np.all(np.isfinite(C)):
        raise ValueError("costs must be finite")
    n = C.shape[0]
    if n == 0:
        return np.zeros(0, dtype=int), 0.0
    INF = math.inf
    # 1-based potentials; column 0 is a virtual start
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, dtype=int)  # owner[j] = row matched to column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            delta, j1 = INF, 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = C[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta, j1 = minv[j], j
            for j in range(n + 1):
                if used[j]:
                    u[owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while True:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
            if j0 == 0:
                break
    perm = np.zeros(n, dtype=int)
    for j in range(1, n + 1):
        perm[owner[j] - 1] = j - 1
    return perm, float(C[np.arange(n), perm].sum())


def hungarian_loss(points, centroids) -> tuple[float, np.ndarray]:
    """``min_pi sum_i ||x_i - theta_pi(i)||^2`` between equal-size point sets."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    C = _as_centroids(centroids)
    if P.shape != C.shape:
        raise DimensionError("point sets must have the same shape")
    perm, total = hungarian_match(_sq_dists(P, C))
    return total, perm
