"""Generic sketch/query meta-training loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import DimensionError, TrainingError
from ..rng import make_rng
from .mlp import Mlp
from .optim import AdamState, adam_step


@dataclass
class TrainConfig:
    steps: int = 1000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    # Applied to the pooled sketches before the query network (e.g. DP noise).
    sketch_hook: Callable | None = None


@dataclass
class MetaTrainResult:
    sketch_net: Mlp
    query_net: Mlp
    losses: list = field(default_factory=list)


def pool_sets(sketch_net: Mlp, sets, train: bool = True):
    """Mean-pool ``sketch_net`` over each set in ``sets``.

    ``sets`` is either a B x N x d array or a list of N_b x d arrays. Returns
    the B x m sketch matrix together with what :func:`unpool_grad` needs.
    """
    if isinstance(sets, np.ndarray) and sets.ndim == 3:
        B, N, d = sets.shape
        flat = sets.reshape(B * N, d)
        sizes = np.full(B, N)
    else:
        sizes = np.array([len(s) for s in sets])
        if np.any(sizes == 0):
            raise DimensionError("every set needs at least one sample")
        flat = np.concatenate([np.asarray(s, dtype=float) for s in sets], axis=0)
    F = sketch_net.forward(flat, train=train)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    Z = np.add.reduceat(F, starts, axis=0) / sizes[:, None]
    return Z, (flat, sizes)


def unpool_grad(gZ: np.ndarray, ctx) -> tuple[np.ndarray, np.ndarray]:
    """Spread sketch gradients back to samples: each sample gets 1/N of its set's."""
    flat, sizes = ctx
    return flat, np.repeat(gZ / sizes[:, None], sizes, axis=0)


def meta_train(
    sketch_net: Mlp,
    query_net: Mlp,
    loss_fn: Callable,
    dataset_sampler: Callable,
    config: TrainConfig,
) -> MetaTrainResult:
    """Jointly fit a sketch network and a query network.

    Each step draws ``(sets, target) = dataset_sampler(rng)``, mean-pools the
    sketch network over every set, runs the query network on the sketches
    and calls ``loss_fn(pred, target) -> (loss, dloss/dpred)``. Gradients flow
    back through the query network, the pooling and the sketch network, and
    both are updated with Adam.
    """
    rng = make_rng(config.seed, "meta-train")
    opt_s = AdamState(config.lr, config.beta1, config.beta2, config.eps)
    opt_q = AdamState(config.lr, config.beta1, config.beta2, config.eps)
    losses = []
    for step in range(config.steps):
        sets, target = dataset_sampler(rng)
        Z, ctx = pool_sets(sketch_net, sets, train=True)
        if config.sketch_hook is not None:
            Z = config.sketch_hook(Z, rng)
        pred = query_net.forward(Z, train=True)
        loss, gpred = loss_fn(pred, target)
        loss = float(loss)
        if not np.isfinite(loss):
            raise TrainingError("loss is not finite", step=step)
        gq, gZ = query_net.backward_full(Z, gpred)
        flat, gF = unpool_grad(gZ, ctx)
        gs = sketch_net.backward(flat, gF)
        query_net.set_params(adam_step(opt_q, query_net.params, gq))
        sketch_net.set_params(adam_step(opt_s, sketch_net.params, gs))
        losses.append(loss)
    return MetaTrainResult(sketch_net, query_net, losses)


def l1_loss(pred, target):
    """Mean absolute error and its (sub)gradient."""
    diff = pred - target
    return np.mean(np.abs(diff)), np.sign(diff) / diff.size


def mse_loss(pred, target):
    diff = pred - target
    return np.mean(diff * diff), 2.0 * diff / diff.size


def bce_loss(pred, target, eps: float = 1e-7):
    """Binary cross-entropy on probabilities (targets may be soft)."""
    p = np.clip(pred, eps, 1.0 - eps)
    loss = -np.mean(target * np.log(p) + (1.0 - target) * np.log1p(-p))
    grad = (p - target) / (p * (1.0 - p)) / p.size
    return loss, grad
