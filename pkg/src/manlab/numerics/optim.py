"""Adam with bias correction, defaulting to beta1=0.5, beta2=0.999."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor

BETA1 = 0.5
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamState:
    learning_rate: float
    beta1: float = BETA1
    beta2: float = BETA2
    epsilon_hat: float = EPS
    step: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray | None], state: AdamState) -> None:
    """Apply one bias-corrected Adam update to ``params`` in place.

    A ``None`` gradient is treated as zero. The moment buffers are created on
    the first call and must keep matching parameter shapes afterwards.
    """
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    if len(state.first_moment) != len(params):
        raise ValueError("parameter list changed between Adam steps")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if m.shape != p.shape:
            raise ValueError(f"parameter shape drifted: moment {m.shape} vs param {p.shape}")
        if g is None:
            g = np.zeros_like(p)
        elif g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= (state.learning_rate / bc1) * m / (np.sqrt(v / bc2) + state.epsilon_hat)


class Adam:
    """Optimizer over a fixed list of parameter tensors."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(BETA1, BETA2), eps: float = EPS):
        self.params = list(params)
        self.state = AdamState(learning_rate=lr, beta1=betas[0], beta2=betas[1], epsilon_hat=eps)

    @property
    def lr(self) -> float:
        return self.state.learning_rate

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.learning_rate = value

    def step(self) -> None:
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def step_decay(initial: float, step: int, decay_at: int | None, factor: float = 10.0) -> float:
    """Learning rate that drops by ``factor`` once ``step`` reaches ``decay_at``."""
    if decay_at is not None and step >= decay_at:
        return initial / factor
    return initial
