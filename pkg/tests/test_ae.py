import numpy as np
import pytest

from gradcheck import rel_error
from sqnet.errors import DimensionError
from sqnet.neural.ae import (
    AETrainConfig,
    BinaryFamily,
    SketchConditionalAE,
    balanced_accuracy,
    evaluate_ae,
    sketch_conditional_ae_forward,
    train_ae,
)
from sqnet.rng import make_rng


def small(variant, seed=0, style="transformer"):
    return SketchConditionalAE(d=8, hidden=6, bottleneck=3, blocks=1, variant=variant, sketch_dim=4,
                               sketch_hidden=5, style=style, seed=seed)


class TestBalancedAccuracy:
    def test_perfect(self, rng):
        X = (rng.random((20, 5)) < 0.5).astype(float)
        assert balanced_accuracy(X, X) == 1.0

    def test_inverted(self, rng):
        X = (rng.random((20, 5)) < 0.5).astype(float)
        X[0], X[1] = 0.0, 1.0  # both classes in every column
        assert balanced_accuracy(X, 1 - X) == 0.0

    def test_chance(self):
        X = np.array([[0.0, 1.0], [1.0, 0.0]] * 5)
        assert balanced_accuracy(X, np.full_like(X, 0.5)) == 0.5

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            balanced_accuracy(np.ones((2, 2)), np.ones((2, 3)))


@pytest.mark.parametrize("variant", ["ae", "m", "ms", "msk"])
@pytest.mark.parametrize("style", ["transformer", "resnet"])
def test_full_gradient(variant, style):
    rng = np.random.default_rng(1)
    model = small(variant, style=style)
    X = (rng.random((10, 8)) < 0.5).astype(float)
    y = rng.integers(0, 2, size=10)
    _, grads = model.loss_and_grads(X, y)
    for net, g in zip((model.enc, model.dec, model.sketch_net), grads):
        if net is None:
            assert g is None
            continue
        base = net.params.copy()
        idx = rng.choice(base.size, size=min(40, base.size), replace=False)
        num = np.zeros(idx.size)
        for j, i in enumerate(idx):
            for sgn in (1, -1):
                p = base.copy()
                p[i] += sgn * 1e-5
                net.set_params(p)
                num[j] += sgn * model.loss_and_grads(X, y)[0] / 2e-5
        net.set_params(base)
        if np.max(np.abs(num)) < 1e-9:
            # batch norm removes a batch-constant condition: the true gradient is zero
            assert np.max(np.abs(g[idx])) < 1e-12
        else:
            assert rel_error(g[idx], num) < 1e-4


def test_zero_condition_weights_match_unconditional(rng):
    model = small("ms")
    for net, width in ((model.enc, 8), (model.dec, 3)):
        net.param_view("0", "W")[:, width:] = 0.0
        net.touch()
    X = (rng.random((12, 8)) < 0.5).astype(float)
    np.testing.assert_allclose(model.reconstruct(X), model.drop_condition().reconstruct(X), atol=1e-14)


def test_condition_changes_output(rng):
    model = small("ms")
    X = (rng.random((12, 8)) < 0.5).astype(float)
    z1 = model.dataset_sketch(X)
    z2 = model.dataset_sketch(1 - X)
    a = sketch_conditional_ae_forward(model.enc, model.dec, X, z1)
    b = sketch_conditional_ae_forward(model.enc, model.dec, X, z2)
    assert not np.allclose(a, b)


def test_missing_class_sketch(rng):
    model = small("msk")
    X = (rng.random((6, 8)) < 0.5).astype(float)
    sk = model.class_sketches(X, np.zeros(6, dtype=int))
    with pytest.raises(LookupError):
        sketch_conditional_ae_forward(model.enc, model.dec, X, None, sk, np.ones(6, dtype=int))


def test_family_randomizes_layout():
    fam = BinaryFamily(d=16, max_classes=2, free=2)
    X1, _ = fam.sample(make_rng(0, "a"), n_classes=1)
    X2, _ = fam.sample(make_rng(1, "a"), n_classes=1)
    assert X1.shape == X2.shape == (fam.n, 16)
    assert set(np.unique(X1)) <= {0.0, 1.0}
    assert not np.array_equal(X1.mean(0), X2.mean(0))


def test_training_is_reproducible_and_learns():
    fam = BinaryFamily(d=8, max_classes=2, free=2, n=32)
    runs = []
    for _ in range(2):
        model = small("ms")
        res = train_ae(model, fam, AETrainConfig(steps=60, lr=5e-3, seed=3))
        runs.append((res.losses, evaluate_ae(model, fam, 3, 7)))
    assert runs[0] == runs[1]
    assert np.mean(runs[0][0][-10:]) < np.mean(runs[0][0][:10])
