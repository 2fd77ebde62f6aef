import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from manlab import attack, generator
from manlab.attack import AttackBudget, AttackTrainConfig, scale_perturbation
from manlab.classifiers import TrainingDiverged, predict_labels
from manlab.numerics import NonFiniteError, Tensor, ops

SHAPE = (1, 28, 28)


def identity_generator(x, t):
    return x * 1.0


class Uniform:
    """Frozen stand-in classifier with all-zero logits."""

    frozen = True

    def __call__(self, x):
        return ops.mul(ops.reshape(x, (x.shape[0], -1))[:, :10], 0.0)


def _images(n, seed=0):
    return np.random.default_rng(seed).random((n, *SHAPE)).astype(np.float32)


# -- budget -------------------------------------------------------------------------

def test_budget_epsilon():
    b = AttackBudget(10, 784)
    assert b.epsilon == 10 * math.sqrt(784) == 280.0
    assert b.norm_order == 2
    assert AttackBudget(10, 3072).epsilon == pytest.approx(554.256, abs=1e-3)
    assert AttackBudget(10, 784, pixel_scale=255).input_epsilon == pytest.approx(280 / 255)
    with pytest.raises(ValueError):
        AttackBudget(-1, 784)


# -- scaling ------------------------------------------------------------------------

def test_scaling_worked_example_is_exact():
    out = scale_perturbation([0.5, 0.5], [0.7, 0.5], 0.1)
    assert out.images.tolist() == [0.6, 0.5]
    assert not out.degenerate[0]


def test_scaling_at_target_norm_returns_x_star():
    x = np.array([[0.2, 0.4, 0.6]])
    xs = x + np.array([[0.03, 0.0, -0.04]])
    out = scale_perturbation(x, xs, 0.05)
    np.testing.assert_allclose(out.unclamped, xs, atol=1e-12)


def test_scaling_zero_perturbation_is_flagged():
    x = _images(3)
    xs = x.copy()
    xs[1] += 0.01
    out = scale_perturbation(x, xs, 1.0)
    np.testing.assert_array_equal(out.degenerate, [True, False, True])
    np.testing.assert_array_equal(out.images[0], x[0])


def test_scaling_flags_stretched_samples():
    x = np.zeros((2, 4))
    xs = np.array([[0.1, 0, 0, 0], [0.9, 0.9, 0, 0]])
    out = scale_perturbation(x, xs, 0.5)
    np.testing.assert_array_equal(out.scaled_up, [True, False])
    assert out.clamped_norm[0] == pytest.approx(0.5)


def test_scaling_rejects_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        scale_perturbation(np.zeros((2, 3)), np.zeros((3, 2)), 1.0)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), eps=st.floats(1e-3, 50.0), dims=st.integers(1, 40))
def test_scaling_norm_and_idempotence(seed, eps, dims):
    rng = np.random.default_rng(seed)
    x = rng.random((3, dims))
    xs = rng.random((3, dims))
    out = scale_perturbation(x, xs, eps)
    live = ~out.degenerate
    norms = np.linalg.norm(out.unclamped - x, axis=1)
    np.testing.assert_allclose(norms[live], eps, rtol=1e-4)
    again = scale_perturbation(x, out.unclamped, eps, clamp=False)
    np.testing.assert_allclose(again.unclamped, out.unclamped, atol=1e-5)
    assert out.images.min() >= 0 and out.images.max() <= 1


# -- loss ---------------------------------------------------------------------------

def test_loss_parts_and_alpha_zero(synthetic_vgg):
    clf, _ = synthetic_vgg
    g = generator.build("manr", 10, SHAPE)
    x, t = _images(4), np.array([0, 1, 2, 3])
    total, parts = attack.loss(x, t, g, [clf], alpha=0.0)
    assert parts.total == parts.l_cls
    total, parts = attack.loss(x, t, g, [clf], alpha=0.3)
    assert abs(parts.total - (parts.l_cls + 0.3 * parts.l_re)) <= 1e-4 * abs(parts.total)


def test_identity_generator_has_zero_reconstruction():
    _, parts = attack.loss(_images(2), [1, 2], identity_generator, [Uniform()], alpha=5.0)
    assert parts.l_re == 0.0


def test_uniform_classifier_loss_is_log_k():
    for t in range(10):
        _, parts = attack.loss(_images(3), [t] * 3, identity_generator, [Uniform()], alpha=1.0)
        assert parts.l_cls == pytest.approx(math.log(10), abs=1e-6)


def test_reconstruction_is_mean_per_sample_norm():
    x = np.zeros((2, 1, 2, 2), np.float32)
    shifted = lambda xx, t: xx + Tensor(np.array([[[[0.3, 0.4], [0, 0]]], [[[0.0, 0.0], [0.6, 0.8]]]]))  # noqa: E731
    _, parts = attack.loss(x, [0, 1], shifted, [Uniform()], alpha=1.0)
    assert parts.l_re == pytest.approx((0.5 + 1.0) / 2, rel=1e-6)


def test_ensemble_averages_classification_loss(synthetic_vgg):
    clf, _ = synthetic_vgg
    x, t = _images(2), [3, 4]
    _, a = attack.loss(x, t, identity_generator, [clf], 0.0)
    _, b = attack.loss(x, t, identity_generator, [Uniform()], 0.0)
    _, both = attack.loss(x, t, identity_generator, [clf, Uniform()], 0.0)
    assert both.l_cls == pytest.approx((a.l_cls + b.l_cls) / 2, rel=1e-5)


def test_loss_rejects_empty_or_unfrozen_ensemble():
    with pytest.raises(ValueError, match="at least one"):
        attack.loss(_images(1), [0], identity_generator, [], 1.0)
    u = Uniform()
    u.frozen = False
    with pytest.raises(ValueError, match="frozen"):
        attack.loss(_images(1), [0], identity_generator, [u], 1.0)


# -- training -----------------------------------------------------------------------

def test_zero_iterations_leave_generator_unchanged(synthetic, synthetic_vgg):
    clf, _ = synthetic_vgg
    g = generator.build("manr", 10, SHAPE, seed=1)
    before = g.state_dict()
    res = attack.train(g, [clf], synthetic.train, AttackTrainConfig(alpha=1.0, iterations=0))
    assert res.reports == []
    after = g.state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_training_is_reproducible_and_respects_freeze(synthetic, synthetic_vgg, tmp_path):
    clf, ckpt = synthetic_vgg
    raw = ckpt.read_bytes()
    params = {k: v.copy() for k, v in clf.state_dict().items()}
    runs = []
    for i in range(2):
        g = generator.build("manr", 10, SHAPE, seed=0)
        log_path = tmp_path / f"log{i}.csv"
        res = attack.train(g, [clf], synthetic.train,
                           AttackTrainConfig(alpha=0.05, iterations=6, seed=9, log_path=str(log_path)))
        runs.append((res, g.state_dict(), log_path.read_text()))
    (r0, s0, l0), (r1, s1, l1) = runs
    np.testing.assert_array_equal(r0.targets_seen, r1.targets_seen)
    assert r0.reports[-1].loss == r1.reports[-1].loss and l0 == l1
    assert all(np.array_equal(s0[k], s1[k]) for k in s0)
    assert all(np.array_equal(params[k], v) for k, v in clf.state_dict().items())
    assert ckpt.read_bytes() == raw
    rows = list(csv.reader(l0.splitlines()))
    assert rows[0] == ["iter", "L", "L_cls", "L_re", "mean_pert_norm"] and len(rows) == 7
    for r in r0.reports:
        assert abs(r.loss - (r.l_cls + 0.05 * r.l_re)) <= 1e-4 * abs(r.loss)


def test_random_targets_cover_all_classes(synthetic, synthetic_vgg):
    clf, _ = synthetic_vgg
    g = generator.build("manr", 10, SHAPE)
    res = attack.train(g, [clf], synthetic.train, AttackTrainConfig(alpha=1.0, iterations=4, batch_size=32))
    assert res.targets_seen.sum() == 128 and (res.targets_seen > 0).sum() >= 8


def test_fixed_target_validation(synthetic, synthetic_vgg):
    clf, _ = synthetic_vgg
    with pytest.raises(ValueError, match="outside"):
        attack.train(generator.build("manr", 10, SHAPE), [clf], synthetic.train,
                     AttackTrainConfig(alpha=1.0, iterations=1, target=10))


def test_fixed_target_training_succeeds(synthetic, synthetic_vgg):
    clf, _ = synthetic_vgg
    g = generator.build("manr", 10, SHAPE, seed=0)
    res = attack.train(g, [clf], synthetic.train, AttackTrainConfig(alpha=0.1, iterations=120, target=3, seed=0))
    test = synthetic.test.subset(synthetic.test.labels != 3)
    # budget of delta = 0.5 (epsilon = 14), near the norm the generator settled on
    assert 5 < res.reports[-1].mean_pert_norm < 14
    x_hat = scale_perturbation(test.images, generator.generate(g, test.images, 3),
                               AttackBudget(0.5, 784).input_epsilon).images
    assert (predict_labels(clf, x_hat) == 3).mean() > 0.5


def test_nan_loss_aborts_with_checkpoint(synthetic, synthetic_vgg, tmp_path, monkeypatch):
    clf, _ = synthetic_vgg
    g = generator.build("manr", 10, SHAPE)
    before = g.state_dict()
    real = attack.loss

    def broken(*a, **k):
        raise NonFiniteError("nan")

    monkeypatch.setattr(attack, "loss", broken)
    path = tmp_path / "g.ckpt"
    with pytest.raises(TrainingDiverged):
        attack.train(g, [clf], synthetic.train, AttackTrainConfig(alpha=1.0, iterations=3, checkpoint=str(path)))
    monkeypatch.setattr(attack, "loss", real)
    saved = generator.load(path).state_dict()
    assert all(np.array_equal(before[k], saved[k]) for k in before)


# -- MI-FGSM -----------------------------------------------------------------------

def test_mi_fgsm_zero_budget_is_identity(synthetic, synthetic_vgg):
    clf, _ = synthetic_vgg
    x, y = synthetic.test.images[:4], synthetic.test.labels[:4]
    t = (y + 1) % 10
    res = attack.mi_fgsm_targeted(x, y, t, clf, 0.0)
    np.testing.assert_array_equal(res.images, x)


def test_mi_fgsm_single_step_is_normalized_gradient(synthetic, synthetic_vgg):
    clf, _ = synthetic_vgg
    x, y = synthetic.test.images[:3], synthetic.test.labels[:3]
    t = (y + 3) % 10
    res = attack.mi_fgsm_targeted(x, y, t, clf, 0.5, steps=1, decay_mu=0.0)
    xt = Tensor(x, requires_grad=True)
    ops.cross_entropy(clf(xt), t).backward()
    g = xt.grad.reshape(3, -1)
    expected = np.clip(x - 0.5 * (g / np.linalg.norm(g, axis=1, keepdims=True)).reshape(x.shape), 0, 1)
    np.testing.assert_allclose(res.images, expected, atol=1e-5)


def test_mi_fgsm_respects_budget_and_succeeds(synthetic, synthetic_vgg):
    clf, _ = synthetic_vgg
    x, y = synthetic.test.images[:40], synthetic.test.labels[:40]
    t = (y + 1 + np.arange(40) % 9) % 10
    eps = AttackBudget(0.5, 784).input_epsilon
    res = attack.mi_fgsm_targeted(x, y, t, clf, eps, steps=10, decay_mu=1.0)
    norms = np.linalg.norm((res.images - x).reshape(40, -1).astype(np.float64), axis=1)
    assert (norms <= eps * (1 + 1e-6)).all()
    assert res.images.min() >= 0 and res.images.max() <= 1
    assert (predict_labels(clf, res.images) == t).mean() > 0.5


def test_mi_fgsm_rejects_true_label_target(synthetic_vgg):
    clf, _ = synthetic_vgg
    with pytest.raises(ValueError, match="t != y"):
        attack.mi_fgsm_targeted(_images(2), np.array([1, 2]), np.array([1, 3]), clf, 1.0)
