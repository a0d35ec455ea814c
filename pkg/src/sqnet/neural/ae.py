"""Sketch-conditional autoencoders.

The first linear layer of both the encoder and the decoder receives a
condition vector ``c`` next to its usual input, i.e. it computes
``W_x x + W_z c + b``: a bias predicted from the dataset. Variants:

``ae``   no condition
``m``    ``c`` = column means of the dataset
``ms``   ``c`` = column means plus a learned mean-pooled sketch
``msk``  like ``ms`` but computed per class; each sample uses its class's ``c``
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, TrainingError
from ..rng import make_rng
from ..sketch import ConcatMap, IdentityMap, NeuralMap, Sketch, compute_sketch
from .mlp import Mlp
from .optim import AdamState, adam_step
from .train import bce_loss

__all__ = [
    "VARIANTS",
    "SketchConditionalAE",
    "AETrainConfig",
    "BinaryFamily",
    "sketch_conditional_ae_forward",
    "balanced_accuracy",
    "train_ae",
    "evaluate_ae",
]

VARIANTS = ("ae", "m", "ms", "msk")


class SketchConditionalAE:
    """Encoder, decoder and (for ``ms``/``msk``) a sketch network.

    Layer normalisation is the default: batch normalisation in train mode
    subtracts the batch mean and with it any bias shared by the whole batch,
    which is exactly what the dataset condition is.
    """

    def __init__(
        self,
        d: int = 64,
        hidden: int = 128,
        bottleneck: int = 16,
        blocks: int = 2,
        variant: str = "ms",
        sketch_dim: int = 32,
        sketch_hidden: int = 64,
        style: str = "transformer",
        seed: int = 0,
    ):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        self.d, self.bottleneck, self.variant = d, bottleneck, variant
        self.sketch_net = None
        if variant in ("ms", "msk"):
            self.sketch_net = Mlp(d, sketch_dim, sketch_hidden, 1, "transformer", seed=seed * 4 + 3)
        c = self.cond_dim
        self.enc = Mlp(d + c, bottleneck, hidden, blocks, style, seed=seed * 4 + 1)
        self.dec = Mlp(bottleneck + c, d, hidden, blocks, style, out_act="sigmoid", seed=seed * 4 + 2)

    @property
    def cond_dim(self) -> int:
        if self.variant == "ae":
            return 0
        if self.variant == "m":
            return self.d
        return self.d + self.sketch_net.d_out

    @property
    def nets(self) -> list[Mlp]:
        return [n for n in (self.enc, self.dec, self.sketch_net) if n is not None]

    def sketch_map(self):
        """Per-sample map whose mean pooling gives the dataset condition."""
        if self.variant == "ae":
            return None
        if self.variant == "m":
            return IdentityMap(self.d)
        return ConcatMap([IdentityMap(self.d), NeuralMap(self.sketch_net)])

    def dataset_sketch(self, X) -> Sketch:
        fmap = self.sketch_map()
        if fmap is None:
            raise DimensionError("the unconditional variant has no sketch")
        return compute_sketch(X, fmap)

    def class_sketches(self, X, labels) -> dict:
        X = np.asarray(X, dtype=float)
        labels = np.asarray(labels)
        return {int(k): self.dataset_sketch(X[labels == k]) for k in np.unique(labels)}

    # -- condition with gradient bookkeeping ---------------------------------

    def _conditions(self, X, labels, train):
        """Per-row condition matrix plus what the backward pass needs."""
        N = X.shape[0]
        if self.variant == "ae":
            return np.zeros((N, 0)), None
        F = None
        if self.sketch_net is not None:
            F = self.sketch_net.forward(X, train=train)
            feats = np.hstack([X, F])
        else:
            feats = X
        if self.variant == "msk":
            if labels is None:
                raise DimensionError("per-class conditioning needs labels")
            classes, inv = np.unique(labels, return_inverse=True)
            counts = np.bincount(inv)
            sums = np.zeros((classes.size, feats.shape[1]))
            np.add.at(sums, inv, feats)
            rows = (sums / counts[:, None])[inv]
            groups = (inv, counts)
        else:
            rows = np.repeat(feats.mean(axis=0, keepdims=True), N, axis=0)
            groups = (np.zeros(N, dtype=int), np.array([N]))
        return rows, (groups, F is not None)

    def _condition_backward(self, X, gC, ctx):
        if ctx is None or self.sketch_net is None:
            return None
        (inv, counts), _ = ctx
        gs = gC[:, self.d :]
        per_group = np.zeros((counts.size, gs.shape[1]))
        np.add.at(per_group, inv, gs)
        gF = (per_group / counts[:, None])[inv]
        return self.sketch_net.backward(X, gF)

    # -- forward ---------------------------------------------------------------

    def forward_rows(self, X, C, train: bool = False):
        enc_in = np.hstack([X, C])
        H = self.enc.forward(enc_in, train=train)
        dec_in = np.hstack([H, C])
        P = self.dec.forward(dec_in, train=train)
        return P, (enc_in, dec_in)

    def reconstruct(self, X, labels=None, context=None, context_labels=None) -> np.ndarray:
        """Eval-mode reconstruction of ``X``.

        The condition is computed from ``context`` (defaults to ``X`` itself).
        """
        X = np.asarray(X, dtype=float)
        if self.variant == "ae":
            C = np.zeros((X.shape[0], 0))
        else:
            ctx_X = X if context is None else np.asarray(context, dtype=float)
            if self.variant == "msk":
                ctx_y = labels if context is None else context_labels
                sk = self.class_sketches(ctx_X, ctx_y)
                return sketch_conditional_ae_forward(self.enc, self.dec, X, None, sk, labels)
            z = self.dataset_sketch(ctx_X)
            return sketch_conditional_ae_forward(self.enc, self.dec, X, z)
        return self.forward_rows(X, C)[0]

    def loss_and_grads(self, X, labels=None):
        """Train-mode BCE loss and gradients for ``(enc, dec, sketch_net)``."""
        X = np.asarray(X, dtype=float)
        C, ctx = self._conditions(X, labels, train=True)
        P, (enc_in, dec_in) = self.forward_rows(X, C, train=True)
        loss, gP = bce_loss(P, X)
        gdec, gdec_in = self.dec.backward_full(dec_in, gP)
        b = self.bottleneck
        genc, genc_in = self.enc.backward_full(enc_in, gdec_in[:, :b])
        gC = gdec_in[:, b:] + genc_in[:, self.d :]
        gsk = self._condition_backward(X, gC, ctx)
        return float(loss), (genc, gdec, gsk)

    def train_step(self, X, labels, opts) -> float:
        loss, (genc, gdec, gsk) = self.loss_and_grads(X, labels)
        self.enc.set_params(adam_step(opts[0], self.enc.params, genc))
        self.dec.set_params(adam_step(opts[1], self.dec.params, gdec))
        if gsk is not None:
            self.sketch_net.set_params(adam_step(opts[2], self.sketch_net.params, gsk))
        return loss

    def drop_condition(self) -> "SketchConditionalAE":
        """Unconditional AE sharing every weight except the condition columns."""
        plain = SketchConditionalAE.__new__(SketchConditionalAE)
        plain.d, plain.bottleneck, plain.variant, plain.sketch_net = self.d, self.bottleneck, "ae", None
        for name, width in (("enc", self.d), ("dec", self.bottleneck)):
            src = getattr(self, name)
            dst = Mlp(src.d_in - self.cond_dim, src.d_out, layers=_strip_first(src, width), style=src.style)
            flat = np.concatenate([
                src.param_view("0", "W")[:, :width].ravel(),
                src.params[_first_w_end(src):],
            ])
            dst.set_params(flat)
            dst.load_buffers(src.buffers())
            setattr(plain, name, dst)
        return plain


def _first_w_end(net: Mlp) -> int:
    for path, name, off, shape in net.layout:
        if path == "0" and name == "W":
            return off + int(np.prod(shape))
    raise KeyError("first layer has no weight")


def _strip_first(net: Mlp, width: int):
    import copy

    from .layers import Linear

    layers = copy.deepcopy(net.layers)
    first = layers[0]
    layers[0] = Linear(width, first.d_out, bias=first.bias)
    return layers


def sketch_conditional_ae_forward(enc: Mlp, dec: Mlp, x, z=None, class_sketches=None, labels=None) -> np.ndarray:
    """Reconstruct ``x`` with the condition injected into both first layers.

    ``z`` is a dataset sketch (or its value vector). With ``class_sketches``
    (label -> sketch) each row uses the sketch of its own label.
    """
    X = np.asarray(x, dtype=float)
    X = X[None, :] if X.ndim == 1 else X
    N = X.shape[0]
    if class_sketches is not None:
        if labels is None:
            raise DimensionError("labels are required with per-class sketches")
        rows = []
        for y in np.asarray(labels).reshape(-1):
            key = int(y)
            if key not in class_sketches:
                raise LookupError(f"no class sketch for label {key}")
            s = class_sketches[key]
            rows.append(s.values if isinstance(s, Sketch) else np.asarray(s, dtype=float))
        C = np.array(rows).reshape(N, -1)
    elif z is None:
        C = np.zeros((N, 0))
    else:
        zv = z.values if isinstance(z, Sketch) else np.asarray(z, dtype=float)
        C = np.repeat(zv[None, :], N, axis=0)
    H = enc.forward(np.hstack([X, C]), train=False)
    return dec.forward(np.hstack([H, C]), train=False)


def balanced_accuracy(x_true, x_rec, threshold: float = 0.5) -> float:
    """Mean over features of (TPR + TNR) / 2 after thresholding ``x_rec``.

    A feature whose true values are all one class contributes the rate for
    that class alone.
    """
    T = np.asarray(x_true).astype(bool)
    P = np.asarray(x_rec, dtype=float) >= threshold
    if T.shape != P.shape:
        raise DimensionError("shapes differ")
    T = T.reshape(-1, T.shape[-1])
    P = P.reshape(T.shape)
    pos = T.sum(axis=0)
    neg = T.shape[0] - pos
    tp = (T & P).sum(axis=0)
    tn = (~T & ~P).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        tpr = tp / pos
        tnr = tn / neg
    score = np.where(pos == 0, tnr, np.where(neg == 0, tpr, 0.5 * (tpr + tnr)))
    return float(np.mean(score))


# --------------------------------------------------------------------------
# randomized binary distributions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BinaryFamily:
    """Mixtures of random binary classes under a random pixel shuffle.

    Every draw picks ``1..max_classes`` classes. A class is a random
    prototype in which ``free`` class-specific pixels are resampled
    uniformly for each sample; ``flip`` adds i.i.d. bit noise on top. A fresh
    coordinate permutation and negation mask is applied per draw, so no pixel
    position carries a fixed meaning across distributions.
    """

    d: int = 64
    max_classes: int = 4
    free: int = 12
    flip: float = 0.0
    n: int = 128

    def sample(self, rng, n: int | None = None, n_classes: int | None = None):
        n = self.n if n is None else n
        K = int(rng.integers(1, self.max_classes + 1)) if n_classes is None else n_classes
        protos = rng.random((K, self.d)) < 0.5
        free = np.zeros((K, self.d), dtype=bool)
        for k in range(K):
            free[k, rng.choice(self.d, size=self.free, replace=False)] = True
        labels = rng.integers(0, K, size=n)
        X = np.where(free[labels], rng.random((n, self.d)) < 0.5, protos[labels])
        if self.flip > 0:
            X = X ^ (rng.random((n, self.d)) < self.flip)
        perm = rng.permutation(self.d)
        neg = rng.random(self.d) < 0.5
        X = X[:, perm] ^ neg
        return X.astype(float), labels


@dataclass
class AETrainConfig:
    steps: int = 3000
    lr: float = 2e-3
    seed: int = 0


@dataclass
class AEResult:
    model: SketchConditionalAE
    losses: list = field(default_factory=list)


def train_ae(model: SketchConditionalAE, family: BinaryFamily, cfg: AETrainConfig) -> AEResult:
    """Meta-train on a new random distribution every step."""
    rng = make_rng(cfg.seed, "ae-train")
    opts = [AdamState(cfg.lr) for _ in range(3)]
    losses = []
    for step in range(cfg.steps):
        X, y = family.sample(rng)
        loss = model.train_step(X, y, opts)
        if not np.isfinite(loss):
            raise TrainingError("loss is not finite", step=step)
        losses.append(loss)
    return AEResult(model, losses)


def evaluate_ae(model: SketchConditionalAE, family: BinaryFamily, n_dists: int, seed: int) -> float:
    """Mean balanced accuracy over held-out distributions."""
    rng = make_rng(seed, "ae-eval")
    scores = []
    for _ in range(n_dists):
        X, y = family.sample(rng)
        scores.append(balanced_accuracy(X, model.reconstruct(X, labels=y)))
    return float(np.mean(scores))
