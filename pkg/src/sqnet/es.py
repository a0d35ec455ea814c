"""Derivative-free meta-training of compressive k-means.

A (mu + lambda) evolution strategy searches over the sketch map
``phi(x) = s * act(W x + b)`` and the decoder hyperparameters. Fitness is the
mean k-means loss of the decoded centroids over a fixed set of datasets, so
the best fitness never gets worse from one generation to the next.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import DecodeError, TrainingError
from .kmeans import DecoderConfig, ckm_decode, kmeans_loss
from .neural.layers import ACTIVATIONS, Linear, Scale
from .neural.mlp import Mlp
from .privacy import ClipSpec, PrivacyBudget, private_sketch
from .rng import derive_seed, make_rng
from .sketch import FeatureMap, NeuralMap, RffMap, compute_sketch

__all__ = ["ESConfig", "Genome", "ESResult", "genome_map", "es_meta_train_ckm"]

ACTS = ("cos", "tanh", "cosrelu")
OPTS = ("adam", "sgd")


@dataclass(frozen=True)
class ESConfig:
    generations: int = 20
    mu: int = 8
    lam: int = 16
    n_datasets: int = 3
    sigma: float = 0.25  # initial RFF bandwidth
    init_step: float = 0.1  # relative initial mutation scale
    discrete_rate: float = 0.1
    decoder: DecoderConfig = DecoderConfig(steps=100, restarts=2)
    dp: bool = False
    dp_budget: tuple = (0.01, 0.01)
    seed: int = 0

    def __post_init__(self):
        if self.generations < 0:
            raise ValueError("generations must be non-negative")
        if not 1 <= self.mu <= self.lam:
            raise ValueError("need 1 <= mu <= lambda")
        if self.n_datasets < 1:
            raise ValueError("need at least one fitness dataset")


@dataclass
class Genome:
    W: np.ndarray
    b: np.ndarray
    act: str
    log_lr: float
    log_init_std: float
    optimizer: str
    steps: np.ndarray  # per-gene mutation scales for the continuous genes
    fitness: float = math.inf

    def vector(self) -> np.ndarray:
        return np.concatenate([self.W.ravel(), self.b, [self.log_lr, self.log_init_std]])

    def with_vector(self, v: np.ndarray, **kw) -> "Genome":
        n = self.W.size
        m = self.b.size
        return replace(
            self,
            W=v[:n].reshape(self.W.shape),
            b=v[n : n + m].copy(),
            log_lr=float(v[n + m]),
            log_init_std=float(v[n + m + 1]),
            fitness=math.inf,
            **kw,
        )

    def decoder(self, base: DecoderConfig) -> DecoderConfig:
        return base.with_(
            lr=math.exp(self.log_lr),
            init_std=math.exp(self.log_init_std),
            optimizer=self.optimizer,
        )


def genome_map(g: Genome, seed=None) -> FeatureMap:
    """Feature map encoded by a genome; the cosine case is exactly an RFF map."""
    m, d = g.W.shape
    if g.act == "cos":
        return RffMap(g.W, g.b, seed=seed)
    net = Mlp.from_layers([Linear(d, m), ACTIVATIONS[g.act](), Scale(math.sqrt(2.0 / m))], d, m)
    net.param_view("0", "W")[...] = g.W
    net.param_view("0", "b")[...] = g.b
    net.touch()
    return NeuralMap(net, seed=seed)


@dataclass
class ESResult:
    fmap: FeatureMap
    decoder: DecoderConfig
    genome: Genome
    initial_fitness: float
    best_fitness: float
    history: list = field(default_factory=list)  # best fitness after each generation

    def __iter__(self):
        yield self.fmap
        yield self.decoder


def _initial_genome(d: int, m: int, cfg: ESConfig) -> Genome:
    rff = RffMap.random(d, m, cfg.sigma, derive_seed(cfg.seed, "es-init"))
    dec = cfg.decoder
    W, b = rff.Omega.copy(), rff.phase.copy()
    steps = np.concatenate([
        np.full(W.size, cfg.init_step / cfg.sigma),
        np.full(b.size, cfg.init_step * math.pi),
        [cfg.init_step * 3.0, cfg.init_step * 3.0],
    ])
    return Genome(W, b, "cos", math.log(dec.lr), math.log(max(dec.init_std, 1e-6)), dec.optimizer, steps)


def es_meta_train_ckm(
    dataset_family: Callable,
    k: int,
    m: int,
    cfg: ESConfig = ESConfig(),
    workers: int = 1,
) -> ESResult:
    """Evolve a sketch map and decoder settings for compressive k-means.

    ``dataset_family(rng)`` returns an N x d array normalized to [0, 1]. The
    fitness datasets are drawn once, up front.
    """
    rng = make_rng(cfg.seed, "es")
    datasets = [np.asarray(dataset_family(make_rng(cfg.seed, "es-data", i)), dtype=float)
                for i in range(cfg.n_datasets)]
    d = datasets[0].shape[1]
    budget = PrivacyBudget.split(cfg.dp_budget[0], cfg.dp_budget[1]) if cfg.dp else None

    def fitness(g: Genome, gseed: int) -> float:
        fmap = genome_map(g)
        dec = g.decoder(cfg.decoder)
        total = 0.0
        for i, X in enumerate(datasets):
            if budget is not None:
                z = private_sketch(X, fmap, budget, ClipSpec(math.sqrt(2.0)), derive_seed(gseed, i))
            else:
                z = compute_sketch(X, fmap)
            try:
                with np.errstate(all="ignore"):
                    C = ckm_decode(z, fmap, k, dec)
            except DecodeError:
                return math.inf
            total += kmeans_loss(X, C)
        f = total / len(datasets)
        return f if math.isfinite(f) else math.inf

    def evaluate(pop, gen):
        seeds = [derive_seed(cfg.seed, "fitness", gen, i) for i in range(len(pop))]
        if workers > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=workers) as ex:
                fits = list(ex.map(fitness, pop, seeds))
        else:
            fits = [fitness(g, s) for g, s in zip(pop, seeds)]
        for g, f in zip(pop, fits):
            g.fitness = f

    g0 = _initial_genome(d, m, cfg)
    evaluate([g0], "init")
    initial = g0.fitness
    if not math.isfinite(initial) and cfg.generations == 0:
        raise TrainingError("initial genome has no finite fitness", step=0)
    parents = [g0]
    history = []
    n_cont = g0.vector().size
    tau = 1.0 / math.sqrt(2.0 * math.sqrt(n_cont))
    tau0 = 1.0 / math.sqrt(2.0 * n_cont)
    for gen in range(cfg.generations):
        mu = len(parents)
        # linear rank weights, best parent most likely
        ranks = np.arange(mu, 0, -1, dtype=float)
        probs = ranks / ranks.sum()
        children = []
        for _ in range(cfg.lam):
            p = parents[int(rng.choice(mu, p=probs))]
            steps = p.steps * np.exp(tau0 * rng.standard_normal() + tau * rng.standard_normal(n_cont))
            v = p.vector() + steps * rng.standard_normal(n_cont)
            act, opt = p.act, p.optimizer
            if rng.random() < cfg.discrete_rate:
                act = ACTS[int(rng.integers(len(ACTS)))]
            if rng.random() < cfg.discrete_rate:
                opt = OPTS[int(rng.integers(len(OPTS)))]
            children.append(p.with_vector(v, act=act, optimizer=opt, steps=steps))
        evaluate(children, gen)
        pool = parents + children
        if not any(math.isfinite(g.fitness) for g in pool):
            raise TrainingError("every candidate has a non-finite fitness", step=gen)
        order = sorted(range(len(pool)), key=lambda i: (pool[i].fitness, i))
        parents = [pool[i] for i in order[: cfg.mu]]
        history.append(parents[0].fitness)
    best = parents[0]
    if not math.isfinite(best.fitness):
        raise TrainingError("every candidate has a non-finite fitness", step=cfg.generations)
    return ESResult(genome_map(best, seed=cfg.seed), best.decoder(cfg.decoder), best, initial,
                    best.fitness, history)
