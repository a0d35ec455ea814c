"""Count-Min, Count-Sketch and Bloom filters over binary feature streams.

Each structure is a fixed linear (or boolean) sketch of the stream: row
``r`` sends feature ``j`` to cell ``h_r(j)`` of a width-``N_w`` table, with a
sign ``s_r(j)`` for Count-Sketch. Decoding reads the ``N_d`` cells of a
feature and combines them (min for Count-Min and Bloom, mean or median for
Count-Sketch). Frequencies are normalized by the number of inserted samples.

Hashing is splitmix64 over ``(row << 32) | feature`` mixed with the seed::

    h_r(j) = splitmix64(seed ^ splitmix64((r << 32) | j)) mod N_w
    s_r(j) = +1 if splitmix64(seed' ^ splitmix64((r << 32) | j)) is even else -1

with ``seed' = splitmix64(seed + 1)``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import CompatibilityError, DimensionError, EmptyDataset, KindError, ParseError
from .rng import make_rng

__all__ = [
    "KINDS",
    "splitmix64",
    "StreamSketch",
    "ZipfConfig",
    "zipf_probs",
    "zipf_sample",
    "insert",
    "decode_frequency",
    "decode_membership",
    "merge_stream",
    "divisor_pairs",
    "StreamEvalConfig",
    "GridResult",
    "grid_search",
    "stream_error",
    "true_frequency",
    "true_membership",
    "mse",
    "train_linear_stream_sqnet",
]

KINDS = ("countmin", "countsketch", "bloom")


def splitmix64(x):
    """Vectorised splitmix64 finaliser on uint64 values."""
    z = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _keys(N_d: int, d: int) -> np.ndarray:
    r = np.arange(N_d, dtype=np.uint64)[:, None]
    j = np.arange(d, dtype=np.uint64)[None, :]
    return splitmix64((r << np.uint64(32)) | j)


class StreamSketch:
    """A Count-Min, Count-Sketch or Bloom table of shape ``N_d x N_w``.

    ``injective=True`` replaces the hash by a seeded permutation per row,
    which needs ``N_w >= d`` and gives collision-free tables.
    """

    def __init__(self, kind: str, N_w: int, N_d: int, d: int, seed: int = 0, injective: bool = False):
        if kind not in KINDS:
            raise KindError(f"unknown stream sketch kind {kind!r}; expected one of {KINDS}")
        if N_w < 1 or N_d < 1 or d < 1:
            raise DimensionError("N_w, N_d and d must be positive")
        if injective and N_w < d:
            raise DimensionError("injective hashing needs N_w >= d")
        self.kind, self.N_w, self.N_d, self.d = kind, int(N_w), int(N_d), int(d)
        self.seed, self.injective = int(seed), bool(injective)
        self.tables = np.zeros((self.N_d, self.N_w), dtype=bool if kind == "bloom" else float)
        self.inserted_count = 0.0
        self._build_hashes()

    def _build_hashes(self):
        keys = _keys(self.N_d, self.d)
        seed = np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF)
        if self.injective:
            rng = make_rng(self.seed, "stream-perm")
            self.index = np.stack([rng.permutation(self.N_w)[: self.d] for _ in range(self.N_d)])
        else:
            self.index = (splitmix64(seed ^ keys) % np.uint64(self.N_w)).astype(np.int64)
        with np.errstate(over="ignore"):
            seed2 = splitmix64(seed + np.uint64(1))
        self.signs = np.where(splitmix64(seed2 ^ keys) & np.uint64(1), -1.0, 1.0)

    @property
    def m(self) -> int:
        return self.N_w * self.N_d

    def copy(self) -> "StreamSketch":
        return copy.deepcopy(self)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X)
        X2 = X[None, :] if X.ndim == 1 else X
        if X2.ndim != 2 or X2.shape[1] != self.d:
            raise DimensionError(f"stream samples must have length {self.d}, got shape {X.shape}")
        if not np.all((X2 == 0) | (X2 == 1)):
            raise DimensionError("stream samples must be binary")
        return X2.astype(float)

    def insert(self, x, weight: float = 1.0) -> "StreamSketch":
        """Add one sample (or a batch of rows). ``weight=-1`` undoes an insert for CM/CS."""
        X = self._check(x)
        counts = X.sum(axis=0)  # occurrences per feature in this batch
        if self.kind == "bloom":
            if weight < 0:
                raise KindError("Bloom filters do not support deletion")
            active = counts > 0
            for r in range(self.N_d):
                self.tables[r, self.index[r, active]] = True
        else:
            w = counts * weight
            for r in range(self.N_d):
                vals = w if self.kind == "countmin" else w * self.signs[r]
                np.add.at(self.tables[r], self.index[r], vals)
        self.inserted_count += weight * X.shape[0]
        return self

    def weight_matrix(self) -> np.ndarray:
        """The fixed ``m x d`` projection ``W`` with ``z = W x`` (row-major over tables)."""
        W = np.zeros((self.m, self.d))
        cols = np.arange(self.d)
        for r in range(self.N_d):
            vals = self.signs[r] if self.kind == "countsketch" else 1.0
            W[r * self.N_w + self.index[r], cols] = vals
        return W

    def cells(self) -> np.ndarray:
        """``N_d x d`` table entries read for each feature (sign-corrected for CS)."""
        T = self.tables.astype(float)
        out = np.take_along_axis(T, self.index, axis=1)
        if self.kind == "countsketch":
            out = out * self.signs
        return out

    def to_bytes(self) -> bytes:
        from .serialize import dumps_document

        return dumps_document(
            "stream", self.tables.astype(float), sketch_kind=self.kind, N_w=self.N_w, N_d=self.N_d,
            d=self.d, seed=self.seed, injective=self.injective, inserted_count=self.inserted_count,
        )

    @classmethod
    def from_bytes(cls, data) -> "StreamSketch":
        from .serialize import loads_document

        doc, values = loads_document(data, kind="stream")
        try:
            sk = cls(doc["sketch_kind"], doc["N_w"], doc["N_d"], doc["d"], doc["seed"], bool(doc.get("injective")))
        except KeyError as exc:
            raise ParseError(f"missing field {exc.args[0]!r}", exc.args[0]) from None
        except (TypeError, ValueError) as exc:
            raise ParseError(str(exc), "sketch_kind") from None
        if values.size != sk.m:
            raise ParseError(f"expected {sk.m} table values, got {values.size}", "values")
        T = values.reshape(sk.N_d, sk.N_w)
        sk.tables = T.astype(bool) if sk.kind == "bloom" else T
        sk.inserted_count = float(doc.get("inserted_count", 0.0))
        return sk

    def __repr__(self):
        return f"StreamSketch({self.kind}, N_w={self.N_w}, N_d={self.N_d}, d={self.d}, n={self.inserted_count:g})"


def insert(sk: StreamSketch, x, weight: float = 1.0) -> StreamSketch:
    return sk.insert(x, weight)


def decode_frequency(sk: StreamSketch, combine: str | None = None) -> np.ndarray:
    """Normalized frequency estimate per feature.

    ``combine`` defaults to ``min`` for Count-Min and Bloom and ``mean`` for
    Count-Sketch; ``median`` is also accepted.
    """
    if sk.inserted_count <= 0:
        raise EmptyDataset("no samples inserted")
    C = sk.cells()
    combine = combine or ("mean" if sk.kind == "countsketch" else "min")
    if combine == "min":
        est = C.min(axis=0)
    elif combine == "mean":
        est = C.mean(axis=0)
    elif combine == "median":
        est = np.median(C, axis=0)
    else:
        raise ValueError(f"unknown combine rule {combine!r}")
    return est / sk.inserted_count


def decode_membership(sk: StreamSketch) -> np.ndarray:
    """1 where every row's bit for the feature is set."""
    if sk.kind != "bloom":
        raise KindError("membership queries need a Bloom filter")
    return sk.cells().min(axis=0).astype(np.int8)


def merge_stream(a: StreamSketch, b: StreamSketch) -> StreamSketch:
    """Sketch of the concatenated streams (sum for CM/CS, OR for Bloom)."""
    same = (a.kind, a.N_w, a.N_d, a.d, a.seed, a.injective) == (b.kind, b.N_w, b.N_d, b.d, b.seed, b.injective)
    if not same:
        raise CompatibilityError("stream sketches differ in kind, shape or hashing")
    out = a.copy()
    out.tables = (a.tables | b.tables) if a.kind == "bloom" else a.tables + b.tables
    out.inserted_count = a.inserted_count + b.inserted_count
    return out


# --------------------------------------------------------------------------
# Zipf streams and evaluation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ZipfConfig:
    alpha: float
    beta: float
    d: int

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError("alpha must be non-negative")
        if not 0 <= self.beta <= 1:
            raise ValueError("beta must lie in [0, 1]")
        if self.d < 1:
            raise ValueError("d must be positive")


def zipf_probs(cfg: ZipfConfig) -> np.ndarray:
    """``p_j = beta^max(1 - alpha, 0) * j^-alpha`` for j = 1..d."""
    j = np.arange(1, cfg.d + 1, dtype=float)
    return cfg.beta ** max(1.0 - cfg.alpha, 0.0) * j ** (-cfg.alpha)


def zipf_sample(cfg: ZipfConfig, n: int, seed: int) -> np.ndarray:
    """``n`` independent binary rows with feature ``j`` active w.p. ``p_j``."""
    rng = make_rng(seed, "zipf")
    return (rng.random((n, cfg.d)) < zipf_probs(cfg)).astype(np.int8)


def true_frequency(data) -> np.ndarray:
    return np.asarray(data, dtype=float).mean(axis=0)


def true_membership(data) -> np.ndarray:
    return np.asarray(data).any(axis=0).astype(np.int8)


def mse(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionError("shapes differ")
    return float(np.mean((a - b) ** 2))


def divisor_pairs(m: int) -> list[tuple[int, int]]:
    """All ``(N_w, N_d)`` with ``N_w * N_d = m``, ordered by increasing N_d."""
    if m < 1:
        raise DimensionError("m must be positive")
    pairs = []
    for N_d in range(1, m + 1):
        if m % N_d == 0:
            pairs.append((m // N_d, N_d))
    return pairs


@dataclass(frozen=True)
class StreamEvalConfig:
    zipf: ZipfConfig
    n: int = 100


@dataclass
class GridResult:
    N_w: int
    N_d: int
    mse: float
    table: dict = field(default_factory=dict)  # (N_w, N_d) -> mean mse
    note: str = ""

    def __iter__(self):
        yield self.N_w
        yield self.N_d
        yield self.mse


def stream_error(kind: str, N_w: int, N_d: int, data, hash_seed: int, **kw) -> float:
    """MSE of one sketch on one stream (frequency, or membership for Bloom)."""
    X = np.asarray(data)
    sk = StreamSketch(kind, N_w, N_d, X.shape[1], hash_seed, **kw).insert(X)
    if kind == "bloom":
        return mse(decode_membership(sk), true_membership(X))
    return mse(decode_frequency(sk), true_frequency(X))


def grid_search(kind: str, m: int, cfg: StreamEvalConfig, seeds) -> GridResult:
    """Pick ``(N_w, N_d)`` minimizing the mean MSE over one stream per seed.

    Ties go to the larger ``N_w``.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    streams = [zipf_sample(cfg.zipf, cfg.n, s) for s in seeds]
    table = {}
    for N_w, N_d in divisor_pairs(m):
        errs = [stream_error(kind, N_w, N_d, X, s) for X, s in zip(streams, seeds)]
        table[(N_w, N_d)] = float(np.mean(errs))
    best = min(table, key=lambda p: (table[p], -p[0]))
    note = ""
    if len(table) <= 2 and m > 1:
        note = f"m={m} is prime; only (m, 1) and (1, m) are available"
    return GridResult(best[0], best[1], table[best], table, note)


def train_linear_stream_sqnet(cfg: ZipfConfig, m: int, n: int, config, batch: int = 8):
    """Meta-train the linear stream sketch ``z = mean W x`` with a sigmoid query.

    The query ``sigmoid(V z + c)`` is fitted to the normalized feature
    frequencies of each sampled stream with binary cross-entropy.
    """
    from .neural.mlp import Mlp
    from .neural.train import bce_loss, meta_train

    sketch_net = Mlp(cfg.d, m, bias=False, seed=config.seed * 2 + 1)
    query_net = Mlp(m, cfg.d, out_act="sigmoid", seed=config.seed * 2 + 2)
    p = zipf_probs(cfg)

    def sampler(rng):
        sets = (rng.random((batch, n, cfg.d)) < p).astype(float)
        return sets, sets.mean(axis=1)

    return meta_train(sketch_net, query_net, bce_loss, sampler, config)
