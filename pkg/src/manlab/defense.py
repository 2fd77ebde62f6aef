"""Adversarial finetuning and the two robustness measures.

Each finetune step takes a clean batch, builds its adversarial twin (row i
of the adversarial half derives from row i of the clean half), and trains on
both halves against the clean ground-truth labels.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .attack import AttackBudget, mi_fgsm_targeted, scale_perturbation
from .classifiers import ClassifierModel, TrainingDiverged, predict_labels
from .datasets import Split, stream
from .generator import generate
from .numerics import Adam, NonFiniteError, Tensor, ops, step_decay

log = logging.getLogger(__name__)

ROBUSTNESS_HEADER = ["probe", "delta", "attack_success", "clean_label_accuracy"]


@dataclass
class AdvTrainConfig:
    """``targets[i]`` is the fixed target of ``generators[i]``, or None for a multi-target generator.

    With several fixed-target generators the steps cycle through them
    round-robin, which emulates GAP-n. ``batch_size`` is the clean half; the
    classifier sees twice as many images per step.
    """

    generators: Sequence
    iterations: int
    targets: Sequence[int | None] | None = None
    batch_size: int = 64
    learning_rate: float = 1e-3
    decay_at: int | None = None
    betas: tuple[float, float] = (0.9, 0.999)
    delta: float = 10.0
    pixel_scale: float = 1.0
    seed: int = 0
    checkpoint: str | None = None

    def __post_init__(self):
        if not self.generators:
            raise ValueError("adversarial finetuning needs at least one source generator")
        if self.targets is None:
            self.targets = [None] * len(self.generators)
        if len(self.targets) != len(self.generators):
            raise ValueError("targets must list one entry per generator")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


@dataclass
class AdvTrainResult:
    losses: list[float] = field(default_factory=list)


def adversarial_half(generator, x, y, target, num_classes, epsilon, rng) -> np.ndarray:
    """Scaled, clamped adversarial twin of the clean batch ``x``."""
    if target is None:
        draw = rng.integers(0, num_classes - 1, len(y))
        t = draw + (draw >= y)
    else:
        t = np.full(len(y), target)
    x_star = generate(generator, x, t)
    return scale_perturbation(x, x_star, epsilon).images.astype(np.float32)


def adv_finetune(classifier: ClassifierModel, data: Split, config: AdvTrainConfig) -> AdvTrainResult:
    """Finetune ``classifier`` in place on clean + adversarial halves, labelled with y."""
    if classifier.frozen:
        raise ValueError("unfreeze the classifier before adversarial finetuning")
    for g in config.generators:
        g.eval()
    k = classifier.num_classes
    eps = AttackBudget(config.delta, int(np.prod(classifier.input_shape)), config.pixel_scale).input_epsilon
    rng = np.random.default_rng(config.seed)
    batches = stream(data, config.batch_size, int(rng.integers(2**31)))
    opt = Adam(classifier.parameters(), lr=config.learning_rate, betas=config.betas)
    result = AdvTrainResult()
    last_good = classifier.state_dict()
    n_gen = len(config.generators)
    for it in range(config.iterations):
        xb, yb = next(batches)
        src = it % n_gen
        adv = adversarial_half(config.generators[src], xb, yb, config.targets[src], k, eps, rng)
        images = np.concatenate([xb, adv])
        labels = np.concatenate([yb, yb])
        opt.lr = step_decay(config.learning_rate, it, config.decay_at)
        classifier.train()
        opt.zero_grad()
        try:
            loss = ops.cross_entropy(classifier(Tensor(images)), labels)
            loss.backward()
        except NonFiniteError as err:
            classifier.load_state_dict(last_good)
            if config.checkpoint:
                classifier.save(config.checkpoint)
            raise TrainingDiverged(f"non-finite loss at finetune iteration {it}; restored last good weights") from err
        opt.step()
        result.losses.append(loss.item())
        if (it + 1) % 500 == 0:
            last_good = classifier.state_dict()
            log.info("finetune iter %d loss %.4f", it + 1, loss.item())
    classifier.eval()
    if config.checkpoint:
        classifier.save(config.checkpoint)
    return result


# -- robustness measures ----------------------------------------------------------

def _predict(model, images) -> np.ndarray:
    if isinstance(model, ClassifierModel):
        return predict_labels(model, images)
    return ops.argmax(np.asarray(model(images)))


def attack_success_robustness(model, images: np.ndarray, targets: np.ndarray) -> float:
    """Fraction of attack samples classified as their target (lower is more robust)."""
    if len(images) == 0:
        raise ValueError("attack set is empty")
    return float((_predict(model, images) == np.asarray(targets)).mean())


def classification_success_robustness(model, images: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of attack samples classified as their ground truth (higher is more robust)."""
    if len(images) == 0:
        raise ValueError("attack set is empty")
    return float((_predict(model, images) == np.asarray(labels)).mean())


# -- probes -----------------------------------------------------------------------

@dataclass
class Probe:
    name: str
    delta: float
    images: np.ndarray
    labels: np.ndarray
    targets: np.ndarray


def _probe_inputs(split: Split, count: int, num_classes: int, seed: int):
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.permutation(len(split))[: min(count, len(split))])
    x, y = split.images[idx], split.labels[idx]
    draw = rng.integers(0, num_classes - 1, len(y))
    return x, y, (draw + (draw >= y)).astype(np.int64)


def mi_fgsm_probe(
    classifier: ClassifierModel, split: Split, delta: float, count: int = 500, seed: int = 0,
    pixel_scale: float = 1.0, steps: int = 10, decay_mu: float = 1.0,
) -> Probe:
    """MI-FGSM samples with random wrong targets, crafted against ``classifier``."""
    x, y, t = _probe_inputs(split, count, classifier.num_classes, seed)
    eps = AttackBudget(delta, int(np.prod(x.shape[1:])), pixel_scale).input_epsilon
    res = mi_fgsm_targeted(x, y, t, classifier, eps, steps=steps, decay_mu=decay_mu)
    keep = ~res.failed
    return Probe("mi-fgsm", delta, res.images[keep], y[keep], t[keep])


def generator_probe(
    generator, split: Split, delta: float, count: int = 500, seed: int = 0,
    pixel_scale: float = 1.0, name: str = "man",
) -> Probe:
    x, y, t = _probe_inputs(split, count, generator.num_classes, seed)
    eps = AttackBudget(delta, int(np.prod(x.shape[1:])), pixel_scale).input_epsilon
    images = scale_perturbation(x, generate(generator, x, t), eps).images.astype(np.float32)
    return Probe(name, delta, images, y, t)


@dataclass
class RobustnessRow:
    probe: str
    delta: float
    attack_success: float
    clean_label_accuracy: float


def robustness_rows(model, probes: Sequence[Probe]) -> list[RobustnessRow]:
    return [
        RobustnessRow(
            p.name, p.delta,
            attack_success_robustness(model, p.images, p.targets),
            classification_success_robustness(model, p.images, p.labels),
        )
        for p in probes
    ]


def write_robustness_csv(path: str | os.PathLike, rows: Sequence[RobustnessRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ROBUSTNESS_HEADER)
        for r in rows:
            w.writerow([r.probe, repr(float(r.delta)), repr(r.attack_success), repr(r.clean_label_accuracy)])
