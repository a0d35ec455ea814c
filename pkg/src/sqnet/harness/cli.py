"""Command-line entry point.

Exit codes: 0 on success, 2 for configuration problems, 3 for data problems.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from ..errors import CalibrationError, ConfigError, SqnetError
from ..serialize import deserialize_sketch, serialize_sketch
from .config import TASKS, load_config, validate_config

log = logging.getLogger("sqnet")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON or TOML config file")
    p.add_argument("--seed", type=int, default=None, help="top-level seed (overrides the config)")
    p.add_argument("--out", help="output file (stdout when omitted)")
    p.add_argument("--format", choices=("json", "csv"), default="json")


def _map_flags(p: argparse.ArgumentParser):
    p.add_argument("--map", choices=("identity", "rff", "ternary", "outer"), default="rff")
    p.add_argument("--m", type=int, default=None, help="sketch size")
    p.add_argument("--sigma", type=float, default=0.25, help="RFF bandwidth")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqnet", description="Dataset sketches and compressive learning.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sk = sub.add_parser("sketch", help="compute, merge, remove or privatize sketches")
    sk.add_argument("op", choices=("compute", "merge", "remove", "privatize"))
    sk.add_argument("inputs", nargs="*", help="CSV file (compute/privatize) or two sketch files")
    sk.add_argument("--pooling", default="mean")
    sk.add_argument("--p", type=float, default=None, help="exponent for pnorm pooling")
    sk.add_argument("--label-column", default=None)
    sk.add_argument("--no-header", action="store_true")
    sk.add_argument("--epsilon", type=float, default=1.0)
    sk.add_argument("--delta", type=float, default=1e-5)
    sk.add_argument("--clip", type=float, default=None, help="sensitivity S (default: map norm bound)")
    _map_flags(sk)
    _common(sk)

    for task in TASKS:
        tp = sub.add_parser(task, help=f"run the {task} task")
        tp.add_argument("data", nargs="?", help="CSV input (omit to run the config benchmark)")
        tp.add_argument("--label-column", default=None)
        tp.add_argument("--no-header", action="store_true")
        tp.add_argument("--k", type=int, default=3)
        tp.add_argument("--kind", choices=("countmin", "countsketch", "bloom"), default=None)
        tp.add_argument("--label-dims", default="0", help="comma separated label columns (ridge)")
        _map_flags(tp)
        _common(tp)

    mt = sub.add_parser("meta-train", help="meta-train a sketch/query pair")
    mt.add_argument("target", choices=("cov", "ckm", "stream"))
    mt.add_argument("--steps", type=int, default=None)
    mt.add_argument("--m", type=int, default=None)
    _common(mt)

    b = sub.add_parser("bench", help="run a benchmark described by --config")
    b.add_argument("--workers", type=int, default=1)
    _common(b)
    return parser


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _write(args, text: str):
    if args.out:
        from ..errors import IoError

        try:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            raise IoError(f"cannot write {args.out}: {exc.strerror}") from None
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _emit(args, doc: dict, rows=None):
    """Write ``doc`` as JSON, or ``rows`` (list of dicts) as CSV."""
    if args.format == "csv" and rows is not None:
        import csv
        import io

        buf = io.StringIO()
        cols = list(rows[0].keys()) if rows else []
        w = csv.DictWriter(buf, cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        _write(args, buf.getvalue())
    else:
        _write(args, json.dumps(doc, indent=2, default=_plain))


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(type(obj).__name__)


def _read_bytes(path):
    from ..errors import IoError

    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror}") from None


def _seed(args, cfg=None) -> int:
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 1 << 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        return args.seed
    return int((cfg or {}).get("seed", 0))


def _load(args):
    from .data import load_csv

    return load_csv(args.data if hasattr(args, "data") and args.data else args.inputs[0],
                    not args.no_header, args.label_column)


def _build_map(args, d: int, seed: int):
    from ..rng import derive_seed
    from ..sketch import IdentityMap, OuterProductMap, RffMap, TernaryLinearMap

    m = args.m
    if args.map == "identity":
        return IdentityMap(d)
    if m is None or m < 1:
        raise ConfigError("--m must be a positive sketch size")
    mseed = derive_seed(seed, "map")
    if args.map == "rff":
        return RffMap.random(d, m, args.sigma, mseed)
    if args.map == "ternary":
        return TernaryLinearMap.random(d, m, mseed)
    return OuterProductMap.random(d, m, mseed)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def _cmd_sketch(args) -> int:
    from ..privacy import ClipSpec, PrivacyBudget, private_sketch
    from ..sketch import Pooling, compute_sketch, merge, remove

    seed = _seed(args)
    if args.op in ("merge", "remove"):
        if len(args.inputs) != 2:
            raise ConfigError(f"sketch {args.op} needs exactly two sketch files")
        a, b = (deserialize_sketch(_read_bytes(p)) for p in args.inputs)
        out = merge(a, b) if args.op == "merge" else remove(a, b)
        _write(args, serialize_sketch(out).decode())
        return EXIT_OK
    if len(args.inputs) != 1:
        raise ConfigError(f"sketch {args.op} needs one CSV file")
    ds = _load(args)
    fmap = _build_map(args, ds.d, seed)
    if args.op == "compute":
        try:
            pooling = Pooling(args.pooling, args.p)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        out = compute_sketch(ds.X, fmap, pooling)
    else:
        S = args.clip
        if S is None and hasattr(fmap, "norm_bound"):
            S = fmap.norm_bound()
        if S is None:
            raise ConfigError("privatize needs --clip for this map")
        out = private_sketch(ds.X, fmap, PrivacyBudget.split(args.epsilon, args.delta), ClipSpec(float(S)), seed)
    _write(args, serialize_sketch(out).decode())
    return EXIT_OK


def _cmd_task(args) -> int:
    task = args.command
    if args.config or not args.data:
        cfg = load_config(args.config) if args.config else {}
        cfg = dict(cfg)
        cfg["task"] = task
        if args.seed is not None:
            cfg["seed"] = _seed(args)
        return _run_bench(args, cfg)
    ds = _load(args)
    seed = _seed(args)
    fn = {"pca": _single_pca, "ridge": _single_pca, "kmeans": _single_kmeans,
          "freq": _single_stream, "member": _single_stream}.get(task)
    if fn is None:
        raise ConfigError(f"task {task!r} needs --config")
    doc = fn(args, ds, seed)
    doc["input"] = {"path": args.data, "N": ds.N, "d": ds.d, "seed": seed}
    _emit(args, doc, doc.get("rows"))
    return EXIT_OK


def _single_pca(args, ds, seed):
    from .. import pca
    from ..linalg import packed_size
    from ..rng import derive_seed
    from .data import standardize

    ds = standardize(ds)
    m = args.m or packed_size(ds.d)
    A = pca.random_projection(ds.d, m, derive_seed(seed, "map"))
    R_hat = pca.decode_covariance_random(pca.cpca_sketch(ds.X, A), A)
    if args.command == "pca":
        from ..linalg import jacobi_eigh

        eig = jacobi_eigh(R_hat.dense())
        rows = [{"index": i, "eigenvalue": float(v)} for i, v in enumerate(eig.eigvals)]
        return {"task": "pca", "m": m, "eigenvalues": eig.eigvals, "eigenvectors": eig.eigvecs,
                "covariance": R_hat.dense(), "rows": rows}
    y = tuple(int(s) for s in args.label_dims.split(",") if s.strip())
    split = pca.RidgeSplit(y, tuple(i for i in range(ds.d) if i not in y))
    theta = pca.ridge_from_cov(R_hat, split)
    rows = [{"label": y[i], "feature": split.feature_dims[j], "weight": float(theta[i, j])}
            for i in range(theta.shape[0]) for j in range(theta.shape[1])]
    return {"task": "ridge", "m": m, "weights": theta, "rows": rows}


def _single_kmeans(args, ds, seed):
    from ..kmeans import DecoderConfig, ckm_decode, kmeans_loss
    from ..sketch import RffMap, compute_sketch
    from ..rng import derive_seed
    from .data import minmax_normalize

    ds = minmax_normalize(ds)
    m = args.m or 20 * args.k * ds.d
    fmap = RffMap.random(ds.d, m, args.sigma, derive_seed(seed, "map"))
    C = ckm_decode(compute_sketch(ds.X, fmap), fmap, args.k, DecoderConfig(seed=seed))
    rows = [dict({"cluster": j}, **{f"x{i}": float(v) for i, v in enumerate(c)})
            for j, c in enumerate(C.centroids)]
    return {"task": "kmeans", "m": m, "k": args.k, "centroids": C.centroids,
            "mse": kmeans_loss(ds.X, C.centroids), "rows": rows}


def _single_stream(args, ds, seed):
    from .. import stream

    X = ds.X
    if not np.all((X == 0) | (X == 1)):
        from .data import binarize, minmax_normalize

        X = binarize(minmax_normalize(ds)).X
    kind = args.kind or ("countmin" if args.command == "freq" else "bloom")
    m = args.m or 100
    pairs = stream.divisor_pairs(m)
    N_w, N_d = pairs[0]
    sk = stream.StreamSketch(kind, N_w, N_d, X.shape[1], seed=seed).insert(X)
    est = stream.decode_membership(sk) if args.command == "member" else stream.decode_frequency(sk)
    rows = [{"feature": j, "estimate": float(v)} for j, v in enumerate(est)]
    return {"task": args.command, "kind": kind, "N_w": N_w, "N_d": N_d, "estimates": est,
            "sketch": json.loads(sk.to_bytes()), "rows": rows}


def _run_bench(args, cfg) -> int:
    from .bench import run_benchmark

    report = run_benchmark(validate_config(cfg), workers=getattr(args, "workers", 1))
    _write(args, report.to_csv() if args.format == "csv" else report.to_json())
    return EXIT_OK


def _cmd_bench(args) -> int:
    if not args.config:
        raise ConfigError("bench needs --config")
    cfg = dict(load_config(args.config))
    if args.seed is not None:
        cfg["seed"] = _seed(args)
    return _run_bench(args, cfg)


def _cmd_meta_train(args) -> int:
    cfg = dict(load_config(args.config)) if args.config else {}
    seed = _seed(args, cfg)
    section = dict(cfg.get("meta_train", {}))
    if args.steps is not None:
        section["steps"] = args.steps
    if args.m is not None:
        section["m"] = args.m
    from ..neural.train import TrainConfig

    tc = TrainConfig(steps=int(section.get("steps", 500)), lr=float(section.get("lr", 1e-3)), seed=seed)
    if args.target == "cov":
        from ..linalg import packed_size
        from ..pca import CovFamily, meta_train_cov_sqnet

        fam = CovFamily(d=int(section.get("d", 16)), n=int(section.get("n", 256)))
        m = int(section.get("m", round(0.1 * packed_size(fam.d))))
        model = meta_train_cov_sqnet(fam, m, tc)
        doc = {"target": "cov", "m": m, "final_loss": model.losses[-1] if model.losses else None,
               "sketch_map": json.loads(_map_doc(model.fmap)),
               "query_net": json.loads(model.query_net.to_bytes())}
    elif args.target == "stream":
        from ..stream import ZipfConfig, train_linear_stream_sqnet

        z = ZipfConfig(float(section.get("alpha", 1.0)), float(section.get("beta", 1.0)), int(section.get("d", 100)))
        res = train_linear_stream_sqnet(z, int(section.get("m", 20)), int(section.get("n", 100)), tc)
        doc = {"target": "stream", "final_loss": res.losses[-1] if res.losses else None,
               "sketch_net": json.loads(res.sketch_net.to_bytes()),
               "query_net": json.loads(res.query_net.to_bytes())}
    else:
        from ..es import ESConfig, es_meta_train_ckm
        from .data import make_gmm

        k, d = int(section.get("k", 3)), int(section.get("d", 2))
        m = int(section.get("m", 20 * k * d))
        es_cfg = ESConfig(generations=int(section.get("generations", 10)), seed=seed)
        sep = float(section.get("separation", 5.0))

        def family(rng):
            return make_gmm(k, d, int(section.get("n_per_cluster", 100)), sep, int(rng.integers(1 << 31))).X

        res = es_meta_train_ckm(family, k, m, es_cfg)
        g = res.genome
        doc = {"target": "ckm", "m": m, "initial_fitness": res.initial_fitness, "best_fitness": res.best_fitness,
               "history": res.history, "activation": g.act, "optimizer": g.optimizer,
               "lr": float(np.exp(g.log_lr)), "init_std": float(np.exp(g.log_init_std)),
               "W": g.W, "b": g.b}
    doc["config"] = cfg
    _write(args, json.dumps(doc, indent=2, default=_plain))
    return EXIT_OK


def _map_doc(fmap) -> bytes:
    from ..serialize import dumps_document

    return dumps_document("map", np.concatenate([fmap.A.ravel(), fmap.b if fmap.b is not None else []]),
                          map_kind=fmap.kind, shape=list(fmap.A.shape), weighted=fmap.weighted,
                          fingerprint=fmap.fingerprint)


_DISPATCH = {"sketch": _cmd_sketch, "bench": _cmd_bench, "meta-train": _cmd_meta_train}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    fn = _DISPATCH.get(args.command, _cmd_task)
    try:
        return fn(args)
    except (ConfigError, CalibrationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SqnetError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
