"""Targeted success rates, transfer matrices and report files.

A (sample, target) pair counts as a hit when the victim's argmax on the
scaled and clamped adversarial sample equals the target. Targets never equal
the sample's true label.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np

from .attack import AttackBudget, scale_perturbation
from .classifiers import ClassifierModel, predict_labels
from .datasets import Split
from .generator import GeneratorModel, generate
from .numerics import ops

MODES = ("single_target", "multi_random", "multi_all")


@dataclass(frozen=True)
class EvalProtocol:
    """How (sample, target) pairs are drawn from the test split.

    * ``single_target``: every sample gets ``target``; samples of that class are skipped.
    * ``multi_random``: ``targets_per_sample`` targets per sample, uniform over
      the K - 1 wrong classes, drawn with replacement.
    * ``multi_all``: all K targets per sample; the t == y pair is skipped and
      left out of the denominator.

    ``samples`` caps the number of test images (a seeded subset); None uses all.
    """

    mode: str
    delta: float
    samples: int | None = None
    seed: int = 0
    target: int | None = None
    targets_per_sample: int = 10
    pixel_scale: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown protocol mode {self.mode!r}; expected one of {MODES}")
        if self.mode == "single_target" and self.target is None:
            raise ValueError("single_target mode needs a target")
        if self.mode == "multi_random" and self.targets_per_sample < 1:
            raise ValueError("multi_random needs targets_per_sample >= 1")
        if self.samples is not None and self.samples < 1:
            raise ValueError("samples must be >= 1")

    def budget(self, n: int) -> AttackBudget:
        return AttackBudget(self.delta, n, self.pixel_scale)


@dataclass
class Pairs:
    index: np.ndarray  # row into the evaluated split, one per pair
    targets: np.ndarray
    skipped: int  # pairs dropped because t == y


def select_samples(split: Split, protocol: EvalProtocol) -> Split:
    if len(split) == 0:
        raise ValueError("evaluation set is empty")
    if protocol.samples is None or protocol.samples >= len(split):
        return split
    order = np.random.default_rng(protocol.seed).permutation(len(split))[: protocol.samples]
    return split.subset(np.sort(order))


def make_pairs(labels: np.ndarray, num_classes: int, protocol: EvalProtocol) -> Pairs:
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if protocol.mode == "single_target":
        if not 0 <= protocol.target < num_classes:
            raise ValueError(f"target {protocol.target} outside [0, {num_classes})")
        keep = labels != protocol.target
        idx = np.flatnonzero(keep)
        return Pairs(idx, np.full(len(idx), protocol.target, dtype=np.int64), int((~keep).sum()))
    if protocol.mode == "multi_all":
        idx = np.repeat(np.arange(n), num_classes)
        targets = np.tile(np.arange(num_classes), n)
        keep = targets != labels[idx]
        return Pairs(idx[keep], targets[keep], int((~keep).sum()))
    # multi_random: draw from the K - 1 wrong labels by skipping over y
    rng = np.random.default_rng([protocol.seed, 1])
    m = protocol.targets_per_sample
    idx = np.repeat(np.arange(n), m)
    draw = rng.integers(0, num_classes - 1, len(idx))
    targets = draw + (draw >= labels[idx])
    return Pairs(idx, targets.astype(np.int64), 0)


@dataclass
class SuccessResult:
    rate: float  # hits / pairs
    hits: int
    pairs: int
    skipped: int
    label_accuracy: float  # fraction of adversarial samples still classified as y
    scaled_up: int  # pairs whose raw perturbation was shorter than epsilon
    degenerate: int  # pairs with x* == x, left unperturbed
    mean_clamped_norm: float
    epsilon: float


def _as_generator(generator) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    if isinstance(generator, GeneratorModel):
        return lambda x, t: generate(generator, x, t)
    if callable(generator):
        return generator
    raise TypeError(f"generator must be a GeneratorModel or a callable, got {type(generator).__name__}")


def _as_victim(victim) -> Callable[[np.ndarray], np.ndarray]:
    """Image batch -> predicted labels. Callables return logits."""
    if isinstance(victim, ClassifierModel):
        return lambda x: predict_labels(victim, x)
    if callable(victim):
        return lambda x: ops.argmax(np.asarray(victim(x)))
    raise TypeError(f"victim must be a ClassifierModel or a callable, got {type(victim).__name__}")


def adversarial_pairs(generator, split: Split, protocol: EvalProtocol, num_classes: int):
    """Scaled, clamped adversarial samples for every protocol pair.

    Returns (images, labels, targets, scaled samples record, skipped count).
    """
    subset = select_samples(split, protocol)
    pairs = make_pairs(subset.labels, num_classes, protocol)
    if len(pairs.index) == 0:
        raise ValueError("protocol produced no (sample, target) pairs")
    x = subset.images[pairs.index]
    x_star = _as_generator(generator)(x, pairs.targets)
    eps = protocol.budget(int(np.prod(x.shape[1:]))).input_epsilon
    scaled = scale_perturbation(x, x_star, eps)
    return scaled.images.astype(np.float32), subset.labels[pairs.index], pairs.targets, scaled, pairs.skipped


def success_rate(generator, victim, split: Split, protocol: EvalProtocol, num_classes: int | None = None) -> SuccessResult:
    """Targeted success of ``generator`` against ``victim`` on ``split`` (the test split)."""
    if num_classes is None:
        num_classes = getattr(victim, "num_classes", None) or getattr(generator, "num_classes", None)
        if num_classes is None:
            raise ValueError("num_classes is required when neither model carries it")
    images, labels, targets, scaled, skipped = adversarial_pairs(generator, split, protocol, num_classes)
    pred = _as_victim(victim)(images)
    return _summarize(pred, labels, targets, scaled, skipped)


def rate_of(pred: np.ndarray, targets: np.ndarray) -> float:
    if len(targets) == 0:
        raise ValueError("cannot compute a rate over zero pairs")
    return int((np.asarray(pred) == np.asarray(targets)).sum()) / len(targets)


def _summarize(pred, labels, targets, scaled, skipped) -> SuccessResult:
    hits = int((pred == targets).sum())
    return SuccessResult(
        rate=hits / len(targets),
        hits=hits,
        pairs=len(targets),
        skipped=skipped,
        label_accuracy=float((pred == labels).mean()),
        scaled_up=int(scaled.scaled_up.sum()),
        degenerate=int(scaled.degenerate.sum()),
        mean_clamped_norm=float(scaled.clamped_norm.mean()),
        epsilon=scaled.epsilon,
    )


# -- reports ----------------------------------------------------------------------

@dataclass
class EvalCell:
    generator: str
    victim: str
    rate: float
    white_box: bool
    pairs: int
    delta: float
    epsilon: float
    label_accuracy: float
    scaled_up: int


CELL_FIELDS = list(EvalCell.__dataclass_fields__)


@dataclass
class EvalReport:
    protocol: EvalProtocol
    cells: list[EvalCell] = field(default_factory=list)

    def cell(self, generator: str, victim: str) -> EvalCell:
        for c in self.cells:
            if c.generator == generator and c.victim == victim:
                return c
        raise KeyError((generator, victim))

    def matrix(self) -> tuple[list[str], list[str], np.ndarray]:
        gens = list(dict.fromkeys(c.generator for c in self.cells))
        vics = list(dict.fromkeys(c.victim for c in self.cells))
        m = np.full((len(gens), len(vics)), np.nan)
        for c in self.cells:
            m[gens.index(c.generator), vics.index(c.victim)] = c.rate
        return gens, vics, m

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CELL_FIELDS)
            w.writeheader()
            for c in self.cells:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in asdict(c).items()})

    def to_dict(self) -> dict:
        return {"protocol": asdict(self.protocol), "cells": [asdict(c) for c in self.cells]}

    def to_json(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _identity(name: str, model) -> set[str]:
    ids = {name}
    if hasattr(model, "fingerprint"):
        ids.add(model.fingerprint())
    return ids


def transfer_matrix(
    generators: Mapping[str, object],
    victims: Mapping[str, object],
    split: Split,
    protocol: EvalProtocol,
    ensembles: Mapping[str, set[str]] | None = None,
    num_classes: int | None = None,
) -> EvalReport:
    """Success rate for every (generator, victim) cell.

    ``ensembles`` maps a generator name to the names or fingerprints of the
    classifiers it was trained against; a cell is white-box iff its victim is
    among them.
    """
    if not generators or not victims:
        raise ValueError("transfer_matrix needs at least one generator and one victim")
    ensembles = ensembles or {}
    report = EvalReport(protocol)
    for gname, gen in generators.items():
        k = num_classes or getattr(gen, "num_classes", None)
        images, labels, targets, scaled, skipped = adversarial_pairs(gen, split, protocol, k)
        trained_on = set(ensembles.get(gname, ()))
        for vname, victim in victims.items():
            res = _summarize(_as_victim(victim)(images), labels, targets, scaled, skipped)
            report.cells.append(EvalCell(
                generator=gname,
                victim=vname,
                rate=res.rate,
                white_box=bool(_identity(vname, victim) & trained_on),
                pairs=res.pairs,
                delta=protocol.delta,
                epsilon=res.epsilon,
                label_accuracy=res.label_accuracy,
                scaled_up=res.scaled_up,
            ))
    return report
