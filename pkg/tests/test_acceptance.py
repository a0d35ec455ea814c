"""End-to-end acceptance checks; each prints one PASS/FAIL line."""

import itertools
import math
import time

import numpy as np
import pytest

from acceptance_log import record
from gradcheck import check_instance, combinations
from sqnet.harness.data import make_gmm
from sqnet.kmeans import DecoderConfig, ckm_decode, hungarian_match, kmeans_loss, lloyd
from sqnet.linalg import packed_size
from sqnet.neural.ae import AETrainConfig, BinaryFamily, SketchConditionalAE, evaluate_ae, train_ae
from sqnet.neural.train import TrainConfig
from sqnet.pca import (
    CovFamily,
    cpca_sketch,
    decode_covariance_random,
    decode_covariance_sqnet,
    empirical_covariance,
    l1_cov_error,
    lre,
    meta_train_cov_sqnet,
    pca_recon_error,
    random_projection,
)
from sqnet.privacy import (
    ClipSpec,
    PrivacyBudget,
    calibrate_gaussian_sigma,
    classical_gaussian_sigma,
    private_sketch,
)
from sqnet.rng import make_rng
from sqnet.sketch import MEAN, SUM, LinearMap, RffMap, compute_sketch, merge, remove
from sqnet.stream import (
    StreamSketch,
    StreamEvalConfig,
    ZipfConfig,
    decode_frequency,
    decode_membership,
    divisor_pairs,
    grid_search,
    true_frequency,
    true_membership,
    zipf_sample,
)

D_COV = 16
N_COV = 1024


def cov_dataset(seed=0):
    return CovFamily(d=D_COV, n=N_COV).sample(make_rng(seed, "acceptance-cov"))


def cpca_lre(X, R, m, seed):
    A = random_projection(D_COV, m, seed)
    R_hat = decode_covariance_random(cpca_sketch(X, A), A)
    return R_hat, lre(pca_recon_error(X, R_hat), pca_recon_error(X, R))


def test_criterion_01_exact_cpca_recovery():
    t0 = time.perf_counter()
    D = packed_size(D_COV)
    X = cov_dataset()
    R = empirical_covariance(X)
    R_hat, score = cpca_lre(X, R, D, seed=1)
    err = float(np.abs(R_hat.values - R.values).max())
    secs = time.perf_counter() - t0
    ok = err <= 1e-6 and score <= 1e-6 and secs < 10
    assert record(1, ok, f"D={D}, max|R_hat-R|={err:.2e}, LRE={score:.2e}", secs)


def test_criterion_02_sketch_size_monotone():
    t0 = time.perf_counter()
    D = packed_size(D_COV)
    X = cov_dataset()
    R = empirical_covariance(X)
    medians = []
    for frac in (0.01, 0.05, 0.10, 0.50, 1.0):
        m = max(1, round(frac * D))
        medians.append(float(np.median([cpca_lre(X, R, m, 100 + s)[1] for s in range(10)])))
    secs = time.perf_counter() - t0
    ok = all(b <= a for a, b in zip(medians, medians[1:])) and secs < 120
    assert record(2, ok, "median LRE " + " >= ".join(f"{v:.3g}" for v in medians), secs)


def test_criterion_03_meta_learned_beats_random():
    t0 = time.perf_counter()
    D = packed_size(D_COV)
    m = round(0.1 * D)
    train_family = CovFamily(d=D_COV, n=256)
    wins, pairs = 0, []
    for seed in range(10):
        model = meta_train_cov_sqnet(train_family, m, TrainConfig(steps=1000, lr=1e-3, seed=seed))
        A = random_projection(D_COV, m, seed)
        rng = make_rng(seed, "heldout")
        learned, rand = [], []
        for _ in range(20):
            X = train_family.sample(rng, N_COV)
            R = empirical_covariance(X)
            learned.append(l1_cov_error(decode_covariance_sqnet(compute_sketch(X, model.fmap), model), R))
            rand.append(l1_cov_error(decode_covariance_random(cpca_sketch(X, A), A), R))
        a, b = float(np.mean(learned)), float(np.mean(rand))
        wins += a < b
        pairs.append(f"{a:.3f}/{b:.3f}")
    secs = time.perf_counter() - t0
    ok = wins >= 8 and secs < 600
    assert record(3, ok, f"m={m}, learned<random in {wins}/10 seeds (L1 learned/random: {' '.join(pairs)})", secs)


def test_criterion_04_ckm_quality():
    t0 = time.perf_counter()
    k, d = 3, 2
    m = 20 * k * d
    ratios = []
    for seed in range(10):
        ds = make_gmm(k, d, 300, 5.0, seed)
        fmap = RffMap.random(d, m, 0.25, seed)
        C = ckm_decode(compute_sketch(ds.X, fmap), fmap, k, DecoderConfig(steps=300, restarts=5, seed=seed))
        ratios.append(kmeans_loss(ds.X, C) / kmeans_loss(ds.X, lloyd(ds.X, k, seed)))
    good = sum(r <= 1.2 for r in ratios)
    secs = time.perf_counter() - t0
    ok = good >= 8 and secs < 300
    assert record(4, ok, f"MSE ratio <= 1.2 in {good}/10 seeds, ratios {np.round(ratios, 3).tolist()}", secs)


def _median_seconds(fn, repeats=5):
    fn()  # warm-up, untimed
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return float(np.median(times))


def test_criterion_05_timing_profile():
    t0 = time.perf_counter()
    k, d = 3, 2
    m = 20 * k * d
    dec, lly = [], []
    for N in (10**3, 10**4, 10**5):
        ds = make_gmm(k, d, -(-N // k), 5.0, 0)
        X = ds.X[:N]
        fmap = RffMap.random(d, m, 0.25, 0)
        z = compute_sketch(X, fmap)
        dec.append(_median_seconds(lambda: ckm_decode(z, fmap, k, DecoderConfig(seed=0))))
        lly.append(_median_seconds(lambda: lloyd(X, k, 0)))
    dec_ratio = max(dec) / min(dec)
    growth = lly[-1] / lly[0]
    secs = time.perf_counter() - t0
    ok = dec_ratio < 2 and growth > 5 and secs < 300
    assert record(5, ok, f"decode max/min={dec_ratio:.2f}, Lloyd growth={growth:.1f}x "
                         f"(decode {np.round(dec, 3).tolist()} s, Lloyd {np.round(lly, 4).tolist()} s)", secs)


def test_criterion_06_dp_convergence():
    t0 = time.perf_counter()
    d, m = 4, 64
    budget = PrivacyBudget.split(1.0, 1e-5)
    medians = []
    for N in (10**2, 10**3, 10**4):
        dist = []
        for trial in range(20):
            rng = make_rng(trial, "dp-data", N)
            X = rng.normal(size=(N, d))
            fmap = RffMap.random(d, m, 1.0, trial)
            z = compute_sketch(X, fmap).values
            z_dp = private_sketch(X, fmap, budget, ClipSpec(fmap.norm_bound()), seed=trial).values
            dist.append(np.linalg.norm(z_dp - z) / np.linalg.norm(z))
        medians.append(float(np.median(dist)))
    secs = time.perf_counter() - t0
    ok = all(b < a for a, b in zip(medians, medians[1:])) and secs < 60
    assert record(6, ok, "median relative distortion " + " > ".join(f"{v:.3g}" for v in medians), secs)


def test_criterion_07_dp_calibration():
    t0 = time.perf_counter()
    delta = 1e-5
    below = all(calibrate_gaussian_sigma(1.0, e, delta) <= classical_gaussian_sigma(1.0, e, delta)
                for e in (0.1, 0.5, 1.0))
    sig = [calibrate_gaussian_sigma(1.0, e, delta) for e in (0.1, 1.0, 10.0)]
    secs = time.perf_counter() - t0
    ok = below and sig[0] > sig[1] > sig[2] and secs < 1
    assert record(7, ok, f"analytic <= classical: {below}; sigma at eps 0.1/1/10 = "
                         + "/".join(f"{s:.4g}" for s in sig), secs)


def test_criterion_08_streaming_properties():
    t0 = time.perf_counter()
    d, n, m = 1000, 100, 100
    pairs = divisor_pairs(m)
    cm_viol = bf_fn = 0
    for s in range(100):
        rng = make_rng(s, "stream-acceptance")
        cfg = ZipfConfig(float(rng.uniform(0, 2)), float(rng.uniform(0.1, 1)), d)
        X = zipf_sample(cfg, n, s)
        N_w, N_d = pairs[int(rng.integers(len(pairs)))]
        est = decode_frequency(StreamSketch("countmin", N_w, N_d, d, seed=s).insert(X))
        cm_viol += int(np.sum(est < true_frequency(X) - 1e-12))
        present = true_membership(X).astype(bool)
        bf = decode_membership(StreamSketch("bloom", N_w, N_d, d, seed=s).insert(X))
        bf_fn += int(np.sum(bf[present] == 0))

    X = zipf_sample(ZipfConfig(0.5, 1.0, 30), 50, 7)
    est = np.array([decode_frequency(StreamSketch("countsketch", 5, 1, 30, seed=s).insert(X)) for s in range(100)])
    se = est.std(axis=0, ddof=1) / math.sqrt(100)
    cs_out = int(np.sum(np.abs(est.mean(0) - true_frequency(X)) > 3 * se + 1e-12))

    tuned = grid_search("countmin", m, StreamEvalConfig(ZipfConfig(2.0, 1.0, d), n), range(10))
    flat = grid_search("countmin", m, StreamEvalConfig(ZipfConfig(0.0, 0.5, d), n), range(10))
    secs = time.perf_counter() - t0
    ok = (cm_viol == 0 and bf_fn == 0 and cs_out == 0 and tuned.mse < 1e-4
          and (flat.N_w, flat.N_d) == (100, 1) and secs < 180)
    assert record(8, ok, f"CM violations={cm_viol}, BF false negatives={bf_fn}, CS coords beyond 3 SE={cs_out}, "
                         f"tuned CM MSE={tuned.mse:.2e} at {tuned.N_w}x{tuned.N_d}, "
                         f"alpha=0 pick {flat.N_w}x{flat.N_d}", secs)


def test_criterion_09_autodiff():
    t0 = time.perf_counter()
    combos = combinations()
    worst, bad = 0.0, []
    for name, build, train in combos:
        err = max(check_instance(build, train, seed) for seed in range(20))
        worst = max(worst, err)
        if err >= 1e-4:
            bad.append(name)
    secs = time.perf_counter() - t0
    ok = not bad and secs < 60
    assert record(9, ok, f"{len(combos)} combinations x 20 instances, worst rel. error {worst:.2e}, failing {bad}", secs)


def test_criterion_10_sketch_algebra():
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    worst_rt = worst_cat = 0.0
    for i in range(1000):
        d, m = int(rng.integers(1, 6)), int(rng.integers(1, 9))
        fmap = LinearMap(rng.normal(size=(m, d)), rng.normal(size=m), seed=i)
        pooling = (MEAN, SUM)[i % 2]
        A = rng.normal(size=(int(rng.integers(1, 40)), d))
        B = rng.normal(size=(int(rng.integers(1, 40)), d))
        a, b = compute_sketch(A, fmap, pooling), compute_sketch(B, fmap, pooling)
        ab = merge(a, b)
        worst_rt = max(worst_rt, float(np.abs(remove(ab, b).values - a.values).max()))
        worst_cat = max(worst_cat, float(np.abs(ab.values - compute_sketch(np.vstack([A, B]), fmap, pooling).values).max()))
    violations, max_slack = 0, -math.inf
    for i in range(1000):
        d, m, N = int(rng.integers(1, 6)), int(rng.integers(2, 33)), int(rng.integers(2, 200))
        fmap = RffMap.random(d, m, float(rng.uniform(0.2, 3)), i)
        X = rng.normal(size=(N, d)) * rng.uniform(0.1, 5)
        Y = X.copy()
        Y[int(rng.integers(N))] = rng.normal(size=d) * 5
        gap = np.linalg.norm(compute_sketch(X, fmap).values - compute_sketch(Y, fmap).values)
        bound = 2 * fmap.norm_bound() / N
        violations += gap > bound + 1e-12
        max_slack = max(max_slack, gap / bound)
    secs = time.perf_counter() - t0
    ok = worst_rt <= 1e-9 and worst_cat <= 1e-9 and violations == 0 and secs < 60
    assert record(10, ok, f"round-trip err {worst_rt:.1e}, merge-vs-concat err {worst_cat:.1e}, "
                          f"stability violations {violations}/1000 (max gap/bound {max_slack:.3f})", secs)


def test_criterion_11_hungarian():
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    mism = 0
    for i in range(200):
        n = int(rng.integers(1, 8))
        C = rng.normal(size=(n, n)) if i % 2 else rng.integers(0, 5, size=(n, n)).astype(float)
        perm, cost = hungarian_match(C)
        perms = np.array(list(itertools.permutations(range(n))))
        brute = C[np.arange(n), perms].sum(axis=1).min()
        mism += not (math.isclose(cost, brute, abs_tol=1e-9) and math.isclose(C[np.arange(n), perm].sum(), brute, abs_tol=1e-9)
                     and sorted(perm.tolist()) == list(range(n)))
    secs = time.perf_counter() - t0
    ok = mism == 0 and secs < 30
    assert record(11, ok, f"mismatches vs brute force {mism}/200", secs)


@pytest.mark.slow
def test_criterion_12_sketch_conditional_ae():
    t0 = time.perf_counter()
    fam = BinaryFamily()
    scores = {v: [] for v in ("ae", "ms", "msk")}
    for seed in range(5):
        for v in scores:
            model = SketchConditionalAE(variant=v, seed=seed)
            train_ae(model, fam, AETrainConfig(steps=3000, lr=2e-3, seed=seed))
            scores[v].append(evaluate_ae(model, fam, 30, 1000 + seed))
    med = {v: float(np.median(s)) for v, s in scores.items()}
    secs = time.perf_counter() - t0
    gain = 100 * (med["ms"] - med["ae"])
    ok = gain >= 2 and med["msk"] >= med["ms"] and secs < 1800
    assert record(12, ok, f"median bacc ae={med['ae']:.4f} ms={med['ms']:.4f} msk={med['msk']:.4f}, "
                          f"MS gain {gain:.1f} points", secs)
