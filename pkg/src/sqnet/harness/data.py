"""Datasets, CSV ingestion, preprocessing and synthetic generators."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import DimensionError, InsufficientData, IoError, ParseError
from ..rng import make_rng

log = logging.getLogger(__name__)

__all__ = [
    "Dataset",
    "load_csv",
    "standardize",
    "unstandardize",
    "minmax_normalize",
    "invert_minmax",
    "zero_pad",
    "binarize",
    "select_features",
    "make_gmm",
    "load_manifest",
]

_MISSING = {"", "na", "nan", "null", "none", "?"}


@dataclass(frozen=True, eq=False)
class Dataset:
    """A named N x d matrix with optional labels.

    ``preprocessing`` is the ordered list of transforms applied so far; each
    record holds what is needed to invert or re-apply it.
    """

    name: str
    X: np.ndarray
    labels: np.ndarray | None = None
    preprocessing: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim != 2:
            raise DimensionError("dataset matrix must be 2-D")
        if np.isnan(X).any():
            raise ParseError("dataset contains NaN", self.name)
        object.__setattr__(self, "X", X)
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=int)
            if y.shape != (X.shape[0],):
                raise DimensionError("one label per row required")
            object.__setattr__(self, "labels", y)

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def with_matrix(self, X, record: dict | None = None) -> "Dataset":
        pre = self.preprocessing + ((record,) if record else ())
        return replace(self, X=X, preprocessing=pre)


def _cell(text: str, line: int, col: int) -> float:
    t = text.strip()
    if t.lower() in _MISSING:
        return math.nan
    try:
        return float(t)
    except ValueError:
        raise ParseError(f"non-numeric cell {text!r}", f"line {line}, column {col + 1}") from None


def load_csv(path, has_header: bool = True, label_column=None, name: str | None = None) -> Dataset:
    """Read a rectangular numeric CSV file.

    ``label_column`` is a header name or a 0-based index. Rows with missing
    values are dropped and the count is logged.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot open {path}: {exc.strerror}") from None
    with fh:
        try:
            rows = list(csv.reader(fh))
        except (UnicodeDecodeError, csv.Error) as exc:
            raise ParseError(f"unreadable CSV: {exc}", str(path)) from None
    start = 0
    header = None
    if has_header:
        if not rows:
            raise ParseError("missing header", "line 1")
        header = [h.strip() for h in rows[0]]
        start = 1
    body = [(i + 1, r) for i, r in enumerate(rows) if i >= start and any(c.strip() for c in r)]
    width = len(header) if header is not None else (len(body[0][1]) if body else 0)

    label_idx = None
    if label_column is not None:
        if isinstance(label_column, str) and not label_column.isdigit():
            if header is None or label_column not in header:
                raise ParseError(f"no column named {label_column!r}", "header")
            label_idx = header.index(label_column)
        else:
            label_idx = int(label_column)
            if not 0 <= label_idx < width:
                raise ParseError(f"label column {label_idx} out of range", "header")

    values, raw_labels, dropped = [], [], 0
    for line, r in body:
        if len(r) != width:
            raise ParseError(f"expected {width} fields, found {len(r)}", f"line {line}")
        row = [_cell(c, line, j) for j, c in enumerate(r) if j != label_idx]
        if any(math.isnan(v) for v in row):
            dropped += 1
            continue
        values.append(row)
        if label_idx is not None:
            raw_labels.append(r[label_idx].strip())
    if dropped:
        log.warning("%s: dropped %d rows with missing values", path, dropped)
    d = width - (label_idx is not None)
    X = np.array(values, dtype=float).reshape(len(values), d)
    labels = None
    if label_idx is not None:
        try:
            labels = np.array([int(float(v)) for v in raw_labels], dtype=int)
        except ValueError:
            classes = sorted(set(raw_labels))
            labels = np.array([classes.index(v) for v in raw_labels], dtype=int)
    log.info("%s: %d rows, %d columns", path, X.shape[0], d)
    return Dataset(name or os.path.basename(str(path)), X, labels, meta={"dropped_rows": dropped})


def standardize(ds: Dataset) -> Dataset:
    """Zero mean, unit (population) variance per column; constant columns map to 0."""
    if ds.N < 2:
        raise InsufficientData("standardization needs at least two rows")
    mu = ds.X.mean(axis=0)
    sd = ds.X.std(axis=0)
    zero = sd == 0
    X = (ds.X - mu) / np.where(zero, 1.0, sd)
    X[:, zero] = 0.0
    rec = {"kind": "standardized", "mu": mu, "sigma": sd, "zero_variance": np.flatnonzero(zero)}
    return ds.with_matrix(X, rec)


def unstandardize(ds: Dataset) -> Dataset:
    if not ds.preprocessing or ds.preprocessing[-1]["kind"] != "standardized":
        raise ValueError("last transform is not a standardization")
    rec = ds.preprocessing[-1]
    sd = np.where(rec["sigma"] == 0, 1.0, rec["sigma"])
    X = ds.X * sd + rec["mu"]
    X[:, rec["zero_variance"]] = rec["mu"][rec["zero_variance"]]
    return replace(ds, X=X, preprocessing=ds.preprocessing[:-1])


def minmax_normalize(ds: Dataset) -> Dataset:
    """Scale each column to [0, 1]; constant columns map to 0."""
    lo = ds.X.min(axis=0) if ds.N else np.zeros(ds.d)
    hi = ds.X.max(axis=0) if ds.N else np.ones(ds.d)
    span = hi - lo
    X = (ds.X - lo) / np.where(span > 0, span, 1.0)
    X[:, span == 0] = 0.0
    return ds.with_matrix(X, {"kind": "minmax", "lo": lo, "hi": hi})


def invert_minmax(ds: Dataset) -> Dataset:
    if not ds.preprocessing or ds.preprocessing[-1]["kind"] != "minmax":
        raise ValueError("last transform is not a min-max normalization")
    rec = ds.preprocessing[-1]
    X = ds.X * (rec["hi"] - rec["lo"]) + rec["lo"]
    return replace(ds, X=X, preprocessing=ds.preprocessing[:-1])


def zero_pad(ds: Dataset, target_d: int) -> Dataset:
    """Append trailing zero columns up to ``target_d``."""
    if target_d < ds.d:
        raise DimensionError(f"cannot pad {ds.d} columns down to {target_d}")
    X = np.hstack([ds.X, np.zeros((ds.N, target_d - ds.d))])
    return ds.with_matrix(X, {"kind": "zero_pad", "from_d": ds.d})


def binarize(ds: Dataset, threshold: float = 0.5) -> Dataset:
    return ds.with_matrix((ds.X > threshold).astype(float), {"kind": "binarized", "threshold": threshold})


def select_features(ds: Dataset, n: int, seed: int) -> Dataset:
    """Fixed random subset of ``n`` columns, derived from the seed and dataset name."""
    if ds.d <= n:
        return ds
    rng = make_rng(seed, "features", ds.name)
    cols = np.sort(rng.choice(ds.d, size=n, replace=False))
    return ds.with_matrix(ds.X[:, cols], {"kind": "features", "columns": cols})


def _simplex(k: int, dim: int) -> np.ndarray:
    # k points with unit pairwise distances in the first k-1 coordinates
    E = np.eye(k) / math.sqrt(2.0)
    E = E - E.mean(axis=0)
    if k == 1:
        return np.zeros((1, dim))
    Q, _ = np.linalg.qr(E.T)
    P = E @ Q[:, : k - 1]
    return np.hstack([P, np.zeros((k, dim - (k - 1)))])


def make_gmm(k: int, d: int, n_per_cluster: int, separation: float, seed: int, normalize: bool = True) -> Dataset:
    """``k`` unit-variance Gaussian blobs whose means are ``separation`` apart.

    Means sit on a regular simplex when ``k <= d + 1`` and on a grid
    otherwise. The result is min-max normalized to [0, 1] unless
    ``normalize=False``.
    """
    if not separation > 0:
        raise ValueError("separation must be positive")
    if k < 1 or d < 1:
        raise DimensionError("k and d must be positive")
    rng = make_rng(seed, "gmm")
    if k <= d + 1:
        means = separation * _simplex(k, d)
    else:
        side = math.ceil(k ** (1.0 / d))
        grid = np.stack(np.meshgrid(*[np.arange(side)] * d, indexing="ij"), -1).reshape(-1, d)
        means = separation * grid[:k].astype(float)
    means = means @ np.linalg.qr(rng.standard_normal((d, d)))[0] if d > 1 else means
    labels = np.repeat(np.arange(k), n_per_cluster)
    X = means[labels] + rng.standard_normal((k * n_per_cluster, d))
    perm = rng.permutation(X.shape[0])
    ds = Dataset(f"gmm-k{k}-d{d}-s{seed}", X[perm], labels[perm], meta={"means": means})
    return minmax_normalize(ds) if normalize else ds


def load_manifest(path) -> dict:
    """Read ``{"train": [paths], "test": [paths]}``; relative paths resolve next to the manifest."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot open manifest {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed manifest: {exc.msg}", exc.pos) from None
    base = os.path.dirname(os.path.abspath(path))
    out = {}
    for split in ("train", "test"):
        paths = doc.get(split, [])
        if not isinstance(paths, list) or not all(isinstance(p, str) for p in paths):
            raise ParseError(f"{split} must be a list of paths", split)
        out[split] = [p if os.path.isabs(p) else os.path.join(base, p) for p in paths]
    return out
