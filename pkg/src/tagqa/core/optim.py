"""Adam with a staircase learning-rate schedule."""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class DivergenceError(FloatingPointError):
    """Non-finite gradient or loss encountered during training."""


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float
    decay_factor: float = 0.1
    decay_steps: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "decay_steps", tuple(sorted(int(s) for s in self.decay_steps)))

    def lr_at(self, iteration: int) -> float:
        # number of decay boundaries already passed (boundary <= iteration)
        n = bisect.bisect_right(self.decay_steps, iteration)
        return self.base_lr * self.decay_factor**n


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray | None],
    state: AdamState,
    schedule: LrSchedule,
    iteration: int,
) -> float:
    """Apply one bias-corrected Adam update in place; returns the lr used.

    Parameters without a gradient are treated as having a zero gradient.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise DivergenceError(
                f"non-finite gradient for parameter {name!r} at iteration {iteration}"
            )
    lr = schedule.lr_at(iteration)
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise ValueError(
                f"gradient shape {list(g.shape)} does not match parameter {name!r} {list(p.shape)}"
            )
        m = state.first_moment.get(name)
        if m is None:
            m = state.first_moment[name] = np.zeros_like(p.data)
            state.second_moment[name] = np.zeros_like(p.data)
        v = state.second_moment[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return lr


class Adam:
    """Stateful wrapper around :func:`adam_step` over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], schedule: LrSchedule, **state_kwargs):
        self.params = params
        self.schedule = schedule
        self.state = AdamState(**state_kwargs)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, iteration: int | None = None) -> float:
        it = self.state.step_count if iteration is None else iteration
        grads = {name: p.grad for name, p in self.params.items()}
        return adam_step(self.params, grads, self.state, self.schedule, it)
