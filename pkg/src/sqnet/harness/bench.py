"""Benchmark runner: task x dataset x sketch size x seed grids.

Each cell is an independent job. Rows are assembled in cell-key order so
the report does not depend on how many workers ran the cells.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .. import kmeans as km
from .. import pca
from .. import stream
from ..errors import ConfigError
from ..linalg import packed_size
from ..privacy import ClipSpec, PrivacyBudget, private_sketch
from ..rng import derive_seed, make_rng
from ..sketch import RffMap, compute_sketch
from .config import validate_config
from .data import Dataset, binarize, load_csv, make_gmm, minmax_normalize, select_features, standardize, zero_pad

__all__ = ["BenchReport", "run_benchmark", "CSV_COLUMNS"]

CSV_COLUMNS = ("task", "dataset", "N", "m", "seed", "metric", "value", "seconds")


@dataclass
class BenchReport:
    task: str
    config: dict
    rows: list = field(default_factory=list)
    seeds: list = field(default_factory=list)
    timing: dict | None = None

    def metrics(self, metric: str, **match) -> list:
        return [r["value"] for r in self.rows
                if r["metric"] == metric and all(r.get(k) == v for k, v in match.items())]

    def to_dict(self) -> dict:
        return {"task": self.task, "config": self.config, "seeds": self.seeds,
                "rows": self.rows, "timing": self.timing}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=_jsonable)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.get(c, "") if r.get(c) is not None else "" for c in CSV_COLUMNS])
        return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _row(task, dataset, m, seed, metric, value, seconds=None, N=None):
    return {"task": task, "dataset": dataset, "N": N, "m": m, "seed": seed,
            "metric": metric, "value": float(value), "seconds": seconds}


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------

_DEFAULT_DATASETS = {
    "pca": [{"synthetic": "cov", "d": 16, "n": 1024}],
    "ridge": [{"synthetic": "cov", "d": 8, "n": 1024}],
    "kmeans": [{"synthetic": "gmm", "k": 3, "d": 2, "n_per_cluster": 300, "separation": 5.0}],
    "freq": [{"synthetic": "zipf", "alpha": 2.0, "beta": 1.0, "d": 1000, "n": 100}],
    "member": [{"synthetic": "zipf", "alpha": 1.0, "beta": 1.0, "d": 1000, "n": 100}],
    "ae": [{"synthetic": "binary", "d": 64}],
}


def _load_dataset(spec: dict, index: int, task: str, seed: int, N: int | None = None):
    if not isinstance(spec, dict):
        raise ConfigError("each dataset entry must be an object")
    dseed = derive_seed(seed, "dataset", index)
    kind = spec.get("synthetic")
    if kind is None:
        if "path" not in spec:
            raise ConfigError("dataset entry needs 'path' or 'synthetic'")
        ds = load_csv(spec["path"], spec.get("has_header", True), spec.get("label_column"), spec.get("name"))
        if "features" in spec:
            ds = select_features(ds, int(spec["features"]), dseed)
    elif kind == "cov":
        fam = pca.CovFamily(d=int(spec.get("d", 16)), n=int(N or spec.get("n", 1024)))
        ds = Dataset(f"cov-d{fam.d}-{index}", fam.sample(make_rng(dseed, "cov")))
    elif kind == "gmm":
        k = int(spec.get("k", 3))
        npc = -(-int(N) // k) if N else int(spec.get("n_per_cluster", 300))
        ds = make_gmm(k, int(spec.get("d", 2)), npc, float(spec.get("separation", 5.0)), dseed)
        if N:  # rows are shuffled, so truncation keeps every blob
            ds = replace(ds, X=ds.X[:N], labels=None if ds.labels is None else ds.labels[:N])
    elif kind == "zipf":
        cfg = stream.ZipfConfig(float(spec.get("alpha", 1.0)), float(spec.get("beta", 1.0)), int(spec.get("d", 1000)))
        return ("zipf", cfg, int(N or spec.get("n", 100)), f"zipf-a{cfg.alpha:g}-b{cfg.beta:g}-{index}")
    elif kind == "binary":
        from ..neural.ae import BinaryFamily

        fam = BinaryFamily(d=int(spec.get("d", 64)), max_classes=int(spec.get("max_classes", 4)),
                           free=int(spec.get("free", 12)), flip=float(spec.get("flip", 0.0)))
        return ("binary", fam, None, f"binary-d{fam.d}-{index}")
    else:
        raise ConfigError(f"unknown synthetic dataset {kind!r}")

    if task in ("pca", "ridge"):
        ds = standardize(ds)
        if "pad_to" in spec:
            ds = zero_pad(ds, int(spec["pad_to"]))
    elif task == "kmeans":
        if not ds.preprocessing or ds.preprocessing[-1]["kind"] != "minmax":
            ds = minmax_normalize(ds)
    elif task in ("freq", "member"):
        if not np.all((ds.X == 0) | (ds.X == 1)):
            ds = binarize(minmax_normalize(ds), float(spec.get("threshold", 0.5)))
    return ("matrix", ds, ds.N, ds.name)


def _sizes(cfg: dict, D: int, default_frac) -> list[int]:
    sweep = cfg.get("sweep") or {}
    if "m" in sweep:
        return [int(v) for v in sweep["m"]]
    fracs = sweep.get("m_frac", default_frac)
    return [max(1, int(round(f * D))) for f in fracs]


# --------------------------------------------------------------------------
# task cells
# --------------------------------------------------------------------------


def _pca_cell(task, ds, m, s, cseed, section):
    X = ds.X
    t0 = time.perf_counter()
    A = pca.random_projection(ds.d, m, cseed)
    z = pca.cpca_sketch(X, A)
    R_hat = pca.decode_covariance_random(z, A)
    secs = time.perf_counter() - t0
    R = pca.empirical_covariance(X, standardized=False)
    rows = [_row(task, ds.name, m, s, "cov_max_err", np.max(np.abs(R_hat.values - R.values)), secs, ds.N)]
    if task == "pca":
        val = pca.lre(pca.pca_recon_error(X, R_hat), pca.pca_recon_error(X, R))
        rows.append(_row(task, ds.name, m, s, "lre_pca", val, secs, ds.N))
    else:
        y = [int(i) for i in section.get("label_dims", [0])]
        split = pca.RidgeSplit(tuple(y), tuple(i for i in range(ds.d) if i not in y), section.get("lam"))
        e_hat = pca.ridge_error(X, pca.ridge_from_cov(R_hat, split), split)
        e_ref = pca.ridge_error(X, pca.ridge_from_cov(R, split), split)
        rows.append(_row(task, ds.name, m, s, "lre_reg", pca.lre(e_hat, e_ref), secs, ds.N))
    return rows


def _decoder_cfg(section: dict, cseed: int) -> km.DecoderConfig:
    dec = dict(section.get("decoder", {}))
    dec.setdefault("seed", cseed)
    if "clamp" in dec and dec["clamp"] is not None:
        dec["clamp"] = tuple(dec["clamp"])
    try:
        return km.DecoderConfig(**dec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad decoder config: {exc}") from None


def _median_time(fn, repeats: int):
    times, out = [], None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return out, float(np.median(times))


def _kmeans_cell(task, ds, m, s, cseed, section):
    k = int(section.get("k", len(np.unique(ds.labels)) if ds.labels is not None else 3))
    sigma = float(section.get("sigma", 0.25))
    repeats = int(section.get("timing_repeats", 1))
    fmap = RffMap.random(ds.d, m, sigma, derive_seed(cseed, "rff"))
    dp = section.get("dp")
    t0 = time.perf_counter()
    if dp:
        budget = PrivacyBudget.split(float(dp.get("epsilon", 1.0)), float(dp.get("delta", 1e-5)),
                                     float(dp.get("split", 0.9)))
        z = private_sketch(ds.X, fmap, budget, ClipSpec(math.sqrt(2.0)), derive_seed(cseed, "dp"))
    else:
        z = compute_sketch(ds.X, fmap)
    t_sketch = time.perf_counter() - t0
    dec = _decoder_cfg(section, cseed)
    C, t_dec = _median_time(lambda: km.ckm_decode(z, fmap, k, dec), repeats)
    L, t_lloyd = _median_time(lambda: km.lloyd(ds.X, k, cseed), repeats)
    mse_c, mse_l = km.kmeans_loss(ds.X, C), km.kmeans_loss(ds.X, L)
    n, name = ds.N, ds.name
    return [
        _row(task, name, m, s, "mse_ckm", mse_c, t_dec, n),
        _row(task, name, m, s, "mse_lloyd", mse_l, t_lloyd, n),
        _row(task, name, m, s, "mse_ratio", mse_c / mse_l if mse_l > 0 else math.inf, None, n),
        _row(task, name, m, s, "sketch_seconds", t_sketch, t_sketch, n),
        _row(task, name, m, s, "decode_seconds", t_dec, t_dec, n),
        _row(task, name, m, s, "lloyd_seconds", t_lloyd, t_lloyd, n),
    ]


def _stream_cell(task, item, m, s, cseed, section):
    _, zcfg, n, name = item
    kind = section.get("kind", "countmin" if task == "freq" else "bloom")
    if task == "member" and kind != "bloom":
        raise ConfigError("membership benchmarks need kind = 'bloom'")
    t0 = time.perf_counter()
    if section.get("grid", True):
        n_streams = int(section.get("streams", 5))
        seeds = [derive_seed(cseed, "stream", i) for i in range(n_streams)]
        res = stream.grid_search(kind, m, stream.StreamEvalConfig(zcfg, n), seeds)
        N_w, N_d, err = res
    else:
        N_w, N_d = int(section["N_w"]), int(section["N_d"])
        X = stream.zipf_sample(zcfg, n, cseed)
        err = stream.stream_error(kind, N_w, N_d, X, cseed)
    secs = time.perf_counter() - t0
    return [
        _row(task, name, m, s, "mse", err, secs, n),
        _row(task, name, m, s, "N_w", N_w, None, n),
        _row(task, name, m, s, "N_d", N_d, None, n),
    ]


def _ae_cell(task, item, s, cseed, section):
    from ..neural.ae import AETrainConfig, SketchConditionalAE, evaluate_ae, train_ae

    _, fam, _, name = item
    rows = []
    for variant in section.get("variants", ["ae", "ms", "msk"]):
        model = SketchConditionalAE(d=fam.d, variant=variant, seed=cseed % (1 << 20),
                                    hidden=int(section.get("hidden", 128)),
                                    bottleneck=int(section.get("bottleneck", 16)),
                                    blocks=int(section.get("blocks", 2)))
        t0 = time.perf_counter()
        train_ae(model, fam, AETrainConfig(int(section.get("steps", 3000)), float(section.get("lr", 2e-3)), cseed))
        acc = evaluate_ae(model, fam, int(section.get("eval_distributions", 30)), derive_seed(cseed, "eval"))
        rows.append(_row(task, name, None, s, f"bacc_{variant}", acc, time.perf_counter() - t0))
    return rows


def run_benchmark(config: dict, workers: int = 1) -> BenchReport:
    """Execute every cell of the configured grid and collect a report."""
    cfg = validate_config(config)
    task = cfg["task"]
    seed = int(cfg.get("seed", 0))
    seeds = list(cfg.get("seeds", [0]))
    section = dict(cfg.get(task, {}))
    specs = cfg.get("datasets") or _DEFAULT_DATASETS[task]
    sweep = cfg.get("sweep") or {}
    Ns = sweep.get("N", [None])

    jobs = []  # (key, callable)
    for di, spec in enumerate(specs):
        for N in Ns:
            item = _load_dataset(spec, di, task, seed, N)
            for s in seeds:
                base = (di, N or 0)
                if task == "ae":
                    cseed = derive_seed(seed, task, di, s)
                    jobs.append((base + (0, s), lambda it=item, s=s, c=cseed: _ae_cell(task, it, s, c, section)))
                    continue
                if item[0] == "zipf":
                    sizes = _sizes(cfg, 100, [1.0])
                    fn = _stream_cell
                else:
                    ds = item[1]
                    if task in ("pca", "ridge"):
                        sizes = _sizes(cfg, packed_size(ds.d), [0.01, 0.05, 0.1, 0.5, 1.0])
                        fn = _pca_cell
                    elif task == "kmeans":
                        k = int(section.get("k", 3))
                        sizes = _sizes(cfg, 1, [20 * k * ds.d])
                        fn = _kmeans_cell
                    else:
                        raise ConfigError(f"task {task!r} needs a zipf dataset or a binary CSV")
                for m in sizes:
                    if m < 1:
                        raise ConfigError("sketch sizes must be positive")
                    cseed = derive_seed(seed, task, di, m, s)
                    payload = item if item[0] == "zipf" else item[1]
                    jobs.append((base + (m, s), lambda p=payload, m=m, s=s, c=cseed, f=fn: f(task, p, m, s, c, section)))
    if not jobs:
        raise ConfigError("the configured sweep is empty")
    jobs.sort(key=lambda kv: kv[0])
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(lambda kv: kv[1](), jobs))
    else:
        results = [fn() for _, fn in jobs]
    rows = [r for rs in results for r in rs]
    report = BenchReport(task, cfg, rows, seeds)
    if task == "kmeans" and len(Ns) > 1:
        report.timing = _timing_summary(rows)
    return report


def _timing_summary(rows) -> dict:
    Ns = sorted({r["N"] for r in rows if r["N"] is not None})
    med = lambda metric, N: float(np.median([r["value"] for r in rows if r["metric"] == metric and r["N"] == N]))
    dec = [med("decode_seconds", N) for N in Ns]
    llo = [med("lloyd_seconds", N) for N in Ns]
    return {
        "N": Ns,
        "decode_seconds": dec,
        "lloyd_seconds": llo,
        "decode_ratio": max(dec) / min(dec),
        "lloyd_growth": llo[-1] / llo[0],
    }
