"""Training generators against frozen classifiers, test-time budget scaling and MI-FGSM.

Training objective for a batch of clean images x and target labels t::

    L = mean_over_ensemble CE(H(F(x, t)), t) + alpha * mean_over_batch ||x - F(x, t)||_2

The L2 budget is only enforced at test time, by rescaling each perturbation
to exactly ``epsilon`` (see :func:`scale_perturbation`).
"""

from __future__ import annotations

import csv
import logging
import math
import os
from contextlib import ExitStack
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .classifiers import TrainingDiverged, inference_mode
from .datasets import Split, stream
from .numerics import Adam, NonFiniteError, Tensor, finite_checks, no_grad, ops, step_decay

log = logging.getLogger(__name__)

NORM_ORDER = 2


@dataclass(frozen=True)
class AttackBudget:
    """L2 budget epsilon = delta * sqrt(N).

    ``delta`` is a per-pixel magnitude expressed in units where a pixel spans
    [0, pixel_scale]. Models see pixels in [0, 1], so the norm applied to
    their inputs is ``input_epsilon = epsilon / pixel_scale``. The default
    pixel_scale of 1 measures delta directly in model-input units.
    """

    delta: float
    n: int
    pixel_scale: float = 1.0

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")
        if self.n < 1:
            raise ValueError(f"input dimensionality must be >= 1, got {self.n}")
        if self.pixel_scale <= 0:
            raise ValueError(f"pixel_scale must be > 0, got {self.pixel_scale}")

    @property
    def norm_order(self) -> int:
        return NORM_ORDER

    @property
    def epsilon(self) -> float:
        return self.delta * math.sqrt(self.n)

    @property
    def input_epsilon(self) -> float:
        return self.epsilon / self.pixel_scale


# -- test-time scaling ------------------------------------------------------------

@dataclass
class ScaledSamples:
    images: np.ndarray  # scaled, then clamped to [0, 1]
    unclamped: np.ndarray  # scaled, before clamping; ||unclamped - x|| == epsilon
    raw_norm: np.ndarray  # ||x* - x|| before scaling, per sample
    clamped_norm: np.ndarray  # ||images - x|| per sample
    degenerate: np.ndarray  # x* == x exactly; returned unchanged
    epsilon: float

    @property
    def scaled_up(self) -> np.ndarray:
        """Samples whose raw perturbation was shorter than epsilon and got stretched."""
        return ~self.degenerate & (self.raw_norm < self.epsilon)


def _flat_norm(d: np.ndarray) -> np.ndarray:
    return np.sqrt((d.reshape(len(d), -1).astype(np.float64) ** 2).sum(axis=1))


def scale_perturbation(x, x_star, epsilon: float, clamp: bool = True) -> ScaledSamples:
    """Rescale each perturbation x* - x to L2 norm ``epsilon``.

    x_hat = x - epsilon * (x - x*) / ||x - x*||, per sample along axis 0 (a 1-D
    input is one sample). Samples with x* == x are returned unchanged and
    flagged. ``images`` is clamped to [0, 1] when ``clamp`` is set.
    """
    x = np.asarray(x)
    x_star = np.asarray(x_star)
    if x.shape != x_star.shape:
        raise ValueError(f"x {x.shape} and x* {x_star.shape} differ in shape")
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    single = x.ndim == 1
    xb = (x[None] if single else x).astype(np.float64)
    sb = (x_star[None] if single else x_star).astype(np.float64)
    d = xb - sb
    norm = _flat_norm(d)
    degenerate = norm == 0
    bshape = (-1,) + (1,) * (xb.ndim - 1)
    unit = d / np.where(degenerate, 1.0, norm).reshape(bshape)
    unclamped = np.where(degenerate.reshape(bshape), xb, xb - epsilon * unit)
    images = np.clip(unclamped, 0.0, 1.0) if clamp else unclamped.copy()
    clamped_norm = _flat_norm(images - xb)
    out_dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64

    def back(a):
        a = a.astype(out_dtype, copy=False)
        return a[0] if single else a

    return ScaledSamples(back(images), back(unclamped), norm, clamped_norm, degenerate, float(epsilon))


# -- training objective -------------------------------------------------------------

@dataclass
class LossParts:
    total: float
    l_cls: float
    l_re: float
    mean_pert_norm: float


def _check_frozen(classifiers):
    if not classifiers:
        raise ValueError("attack loss needs at least one attacked classifier")
    for h in classifiers:
        if getattr(h, "frozen", True) is False:
            raise ValueError("attacked classifiers must be frozen before attack training")


def loss(x, t, generator: Callable, classifiers: Sequence[Callable], alpha: float) -> tuple[Tensor, LossParts]:
    """Joint objective L = L_cls + alpha * L_re for one batch.

    ``generator`` maps (Tensor images, targets) to a Tensor; each classifier
    maps images to (B, K) logits.
    """
    _check_frozen(classifiers)
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    x = x if isinstance(x, Tensor) else Tensor(x)
    t = np.asarray(t, dtype=np.int64)
    x_star = generator(x, t)
    l_cls = ops.cross_entropy(classifiers[0](x_star), t)
    for h in classifiers[1:]:
        l_cls = l_cls + ops.cross_entropy(h(x_star), t)
    if len(classifiers) > 1:
        l_cls = l_cls * (1.0 / len(classifiers))
    b = x.shape[0]
    dist = ops.l2_norm(ops.reshape(x - x_star, (b, -1)), axis=1)
    l_re = ops.mean(dist)
    total = l_cls + l_re * float(alpha)
    parts = LossParts(total.item(), l_cls.item(), l_re.item(), float(dist.data.mean()))
    return total, parts


# -- training loop ------------------------------------------------------------------

@dataclass
class AttackTrainConfig:
    alpha: float
    iterations: int
    learning_rate: float = 1e-3
    decay_at: int | None = None  # learning rate / decay_factor from this iteration on
    decay_factor: float = 10.0
    batch_size: int = 32
    target: int | None = None  # fixed target t0; None draws a uniform target per image
    seed: int = 0
    log_path: str | None = None  # per-step CSV: iter,L,L_cls,L_re,mean_pert_norm
    checkpoint: str | None = None

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")

    @property
    def target_mode(self) -> str:
        return "uniform_random" if self.target is None else "fixed"


@dataclass
class TrainStepReport:
    iteration: int
    loss: float
    l_cls: float
    l_re: float
    mean_pert_norm: float


@dataclass
class TrainResult:
    reports: list[TrainStepReport] = field(default_factory=list)
    targets_seen: np.ndarray | None = None  # histogram of training targets


CSV_HEADER = ["iter", "L", "L_cls", "L_re", "mean_pert_norm"]


def train(generator, classifiers: Sequence, data: Split, config: AttackTrainConfig) -> TrainResult:
    """Optimize the generator's parameters (only) with Adam(beta1=0.5, beta2=0.999)."""
    _check_frozen(classifiers)
    k = generator.num_classes
    if config.target is not None and not 0 <= config.target < k:
        raise ValueError(f"fixed target {config.target} outside [0, {k})")
    rng = np.random.default_rng(config.seed)
    batches = stream(data, config.batch_size, int(rng.integers(2**31)))
    opt = Adam(generator.parameters(), lr=config.learning_rate)
    result = TrainResult(targets_seen=np.zeros(k, dtype=np.int64))
    writer = fh = None
    if config.log_path:
        os.makedirs(os.path.dirname(os.path.abspath(config.log_path)), exist_ok=True)
        fh = open(config.log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
    generator.train()
    last_good = generator.state_dict()
    try:
        with ExitStack() as stack:
            for h in classifiers:
                stack.enter_context(inference_mode(h))
            for it in range(config.iterations):
                xb, _ = next(batches)
                if config.target is None:
                    t = rng.integers(0, k, len(xb))
                else:
                    t = np.full(len(xb), config.target)
                result.targets_seen += np.bincount(t, minlength=k)
                opt.lr = step_decay(config.learning_rate, it, config.decay_at, config.decay_factor)
                opt.zero_grad()
                try:
                    total, parts = loss(xb, t, generator, classifiers, config.alpha)
                    total.backward()
                except NonFiniteError as err:
                    generator.load_state_dict(last_good)
                    if config.checkpoint:
                        generator.save(config.checkpoint)
                    raise TrainingDiverged(f"non-finite loss at iteration {it}; restored last good weights") from err
                opt.step()
                rep = TrainStepReport(it, parts.total, parts.l_cls, parts.l_re, parts.mean_pert_norm)
                result.reports.append(rep)
                if writer:
                    writer.writerow([it, repr(rep.loss), repr(rep.l_cls), repr(rep.l_re), repr(rep.mean_pert_norm)])
                if (it + 1) % 500 == 0:
                    last_good = generator.state_dict()
                    log.info("iter %d L %.4f L_cls %.4f L_re %.4f", it + 1, rep.loss, rep.l_cls, rep.l_re)
    finally:
        if fh:
            fh.close()
    generator.eval()
    if config.checkpoint:
        generator.save(config.checkpoint)
    return result


# -- momentum iterative baseline ----------------------------------------------------------

@dataclass
class IterativeAttackResult:
    images: np.ndarray
    failed: np.ndarray  # samples aborted on a non-finite gradient (returned unchanged)


def _input_grad(classifier, x: np.ndarray, t: np.ndarray) -> np.ndarray:
    xt = Tensor(x, requires_grad=True)
    # summed (not averaged) so each sample's gradient is independent of batch size
    ops.cross_entropy(classifier(xt), t).backward()
    return xt.grad * len(x)


def mi_fgsm_targeted(
    x: np.ndarray,
    y: np.ndarray,
    t: np.ndarray,
    classifier,
    epsilon: float,
    steps: int = 10,
    decay_mu: float = 1.0,
    batch_size: int = 128,
) -> IterativeAttackResult:
    """Targeted momentum iterative attack under an L2 budget.

    Each step: g <- mu * g + grad / ||grad||_1, then
    x <- clip(x - (epsilon / steps) * g / ||g||_2, 0, 1), per sample. The total
    displacement never exceeds ``epsilon``.
    """
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y, dtype=np.int64)
    t = np.asarray(t, dtype=np.int64)
    if len(x) != len(y) or len(x) != len(t):
        raise ValueError("x, y and t must have the same length")
    if (t == y).any():
        raise ValueError("targeted attack needs t != y for every sample")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    out = x.copy()
    failed = np.zeros(len(x), dtype=bool)
    step_size = epsilon / steps
    with inference_mode(classifier):
        for s in range(0, len(x), batch_size):
            sl = slice(s, s + batch_size)
            out[sl], failed[sl] = _mi_fgsm_batch(x[sl], t[sl], classifier, epsilon, step_size, steps, decay_mu)
    return IterativeAttackResult(out, failed)


def _mi_fgsm_batch(x, t, classifier, epsilon, step_size, steps, mu):
    b = len(x)
    shape = (-1,) + (1,) * (x.ndim - 1)
    xa = x.copy()
    g = np.zeros_like(x)
    failed = np.zeros(b, dtype=bool)
    for _ in range(steps):
        with finite_checks(False):
            grad = _input_grad(classifier, xa, t)
        bad = ~np.isfinite(grad.reshape(b, -1)).all(axis=1)
        if bad.any():
            failed |= bad
            grad[bad] = 0
        l1 = np.abs(grad.reshape(b, -1)).sum(axis=1)
        g = mu * g + grad / np.where(l1 > 0, l1, 1).reshape(shape)
        l2 = np.sqrt((g.reshape(b, -1).astype(np.float64) ** 2).sum(axis=1))
        direction = g / np.where(l2 > 0, l2, 1).reshape(shape)
        xa = np.clip(xa - step_size * direction, 0, 1).astype(np.float32)
    xa[failed] = x[failed]
    # guard against float round-off pushing the total just past the budget
    d = xa - x
    norm = np.sqrt((d.reshape(b, -1).astype(np.float64) ** 2).sum(axis=1))
    over = norm > epsilon
    if over.any():
        xa[over] = x[over] + d[over] * (epsilon / norm[over]).reshape(shape).astype(np.float32)
    return xa, failed
