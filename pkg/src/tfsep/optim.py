"""Adam optimizer over named parameter dictionaries.

State lives in a plain dataclass so checkpoints can serialise it, and the
update is exposed both as a functional step on raw arrays and as a small
class bound to Tensor parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import GradientError, Tensor


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One Adam update, in place on the arrays in `params`.

    Moments are created lazily on first sight of each parameter name.
    Raises GradientError if any gradient is non-finite, before touching
    any parameter.
    """
    for name in params:
        if name not in grads:
            raise KeyError(f"no gradient supplied for parameter {name!r}")
        if not np.all(np.isfinite(grads[name])):
            raise GradientError(f"non-finite gradient for parameter {name!r} at step {state.step_count + 1}")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t

    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} shape {p.shape}")
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
            state.first_moment[name] = m
            state.second_moment[name] = v
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bias1
        v_hat = v / bias2
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps_adam)


class Adam:
    """Adam bound to a dict of Tensor parameters."""

    def __init__(self, params: dict[str, Tensor], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.state = AdamState(learning_rate=learning_rate, beta1=beta1, beta2=beta2, eps_adam=eps)

    def step(self, grads: dict[str, np.ndarray]) -> None:
        raw = {name: t.data for name, t in self.params.items()}
        adam_step(raw, grads, self.state)
